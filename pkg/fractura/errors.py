from typing import Any, Dict, Optional

from .arguments import Format


# Purpose: Defines the base class for all solver faults.
class FracturaError(Exception):
    """
    Base class for all fractura errors.
    Carries an info string and an optional context dictionary that is
    rendered when the error is printed.
    """

    title = "Fractura Error"

    def __init__(self, info: str = "", context: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(info)
        self.info: str = info
        self.context: Dict[str, Any] = dict(context or {})

    def __str__(self) -> str:
        message = [f"{Format.BOLD + Format.ORANGE}{self.title}{Format.END}"]
        if self.info:
            message[0] += f": {self.info}"
        for key, value in self.context.items():
            message.append(f"{Format.BOLD}{key}:{Format.END} \t{Format.GREY}{value}{Format.END}")
        return "\n\t".join(message)


class InvalidParameter(FracturaError):
    """
    A parameter lies outside its admissible range.
    """

    title = "Invalid Parameter"


class RefinementFloorReached(FracturaError):
    """
    Every marked element is already at or below the refinement size floor.
    """

    title = "Refinement Floor Reached"


class ProjectionTopologyMismatch(FracturaError):
    """
    The target mesh does not descend from the source mesh.
    """

    title = "Projection Topology Mismatch"


class SolveFailure(FracturaError):
    """
    A linear solve did not reach its tolerance.
    """

    title = "Solve Failure"

    def __init__(self, info: str = "", residual: float = float("nan"), context=None) -> None:
        context = dict(context or {})
        context.setdefault("residual", residual)
        super().__init__(info, context)
        self.residual = residual


class EstimatorFailure(FracturaError):
    """
    The residual-minimization saddle system could not be solved.
    """

    title = "Estimator Failure"


class NotEnoughHistory(FracturaError):
    """
    Fewer displacement snapshots than the truncation estimate needs.
    """

    title = "Not Enough History"


class ConfigError(FracturaError):
    """
    A configuration file or override could not be parsed.
    """

    title = "Config Error"

    def __init__(self, info: str = "", line: Optional[int] = None, context=None) -> None:
        context = dict(context or {})
        if line is not None:
            context.setdefault("line", line)
        super().__init__(info, context)
        self.line = line


class MeshFormatError(ConfigError):
    """
    A mesh file does not follow the fractura text grammar.
    """

    title = "Mesh Format Error"


class RunAborted(FracturaError):
    """
    The adaptive driver stopped before reaching the final time.
    Holds the last accepted record and state so callers can flush them.
    """

    title = "Run Aborted"

    def __init__(self, info: str = "", record=None, state=None, cause=None) -> None:
        super().__init__(info, {"cause": cause} if cause is not None else None)
        self.record = record
        self.state = state
        self.cause = cause
