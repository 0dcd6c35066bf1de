"""
Run configuration.

A config file holds one `key = value` per line; `#` starts a comment. Keys are the
RunConfig field names, with `-` and `_` interchangeable. Later sources win:
defaults < file < command-line flags < `--set key=value`.
"""
import logging
import re
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .errors import ConfigError, InvalidParameter
from .linalg import SADDLE_SOLVERS, SOLVERS
from .model import CUBIC, FULL, PLANE_STRAIN, PLANE_STRESS, QUADRATIC, TENSION_ONLY, Degradation
from .scenario import BAND, PRESETS, SLIT, Scenario, preset

logger = logging.getLogger(__name__)

_LINE = re.compile(r"^\s*([A-Za-z][\w-]*)\s*=\s*(.*?)\s*$")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "desk"
    mesh_file: Optional[str] = None
    notch_mode: str = SLIT
    # time integration and control
    rho_inf: float = 0.5
    tol_max: Optional[float] = None
    tol_min: Optional[float] = None
    tol_stg: float = 1e-5
    max_stagger: int = 50
    rho_abs: float = 1e-4
    rho_rel: float = 1e-4
    rho_tol: float = 0.9
    growth_cap: float = 2.0
    dt_max_factor: float = 100.0
    dt_min: float = 1e-12
    time_adaptivity: bool = True
    startup_steps: int = 3
    bdf3_variant: str = "backward"
    baseline_iteration_count: bool = False
    iteration_threshold: int = 10
    # space
    tol_mesh: float = 1e-3
    chi: float = 0.2
    h_min: Optional[float] = None
    mesh_adaptivity: bool = True
    max_mesh_iterations: int = 8
    # model
    stress_split: str = FULL
    kinematics: str = PLANE_STRAIN
    k_res: float = 1e-6
    t_final: Optional[float] = None
    dt0: Optional[float] = None
    eta: Optional[float] = None
    gc: Optional[float] = None
    ell: Optional[float] = None
    degradation: Optional[str] = None
    shape: Optional[float] = None
    traction: Optional[float] = None
    nx: Optional[int] = None
    ny: Optional[int] = None
    # solvers
    solver: str = "direct"
    saddle_solver: str = "kkt"
    solver_rtol: float = 1e-10
    # output
    out: str = "fractura-out"
    cadence: int = 10
    max_steps: Optional[int] = None
    seed: int = 0

    def validate(self) -> "RunConfig":
        """
        Returns self, or raises ConfigError naming the first offending key.
        """
        positive = ["tol_stg", "rho_tol", "growth_cap", "dt_max_factor", "dt_min", "tol_mesh", "solver_rtol"]
        for key in positive:
            if getattr(self, key) <= 0.0:
                raise ConfigError(f"{key} must be positive", context={key: getattr(self, key)})
        for key in ["tol_max", "tol_min", "t_final", "dt0", "gc", "ell", "h_min", "traction"]:
            value = getattr(self, key)
            if value is not None and value <= 0.0:
                raise ConfigError(f"{key} must be positive", context={key: value})
        checks = [
            (self.scenario in PRESETS, "scenario", f"one of {', '.join(PRESETS)}"),
            (0.0 <= self.rho_inf <= 1.0, "rho_inf", "in [0, 1]"),
            (0.0 <= self.chi <= 1.0, "chi", "in [0, 1]"),
            (self.rho_tol <= 1.0, "rho_tol", "at most 1"),
            (self.rho_abs >= 0.0 and self.rho_rel >= 0.0, "rho_abs", "non-negative (with rho_rel)"),
            (self.max_stagger >= 1, "max_stagger", "at least 1"),
            (self.max_mesh_iterations >= 0, "max_mesh_iterations", "non-negative"),
            (self.startup_steps >= 0, "startup_steps", "non-negative"),
            (self.iteration_threshold >= 2, "iteration_threshold", "at least 2"),
            (self.cadence >= 1, "cadence", "at least 1"),
            (self.max_steps is None or self.max_steps >= 1, "max_steps", "at least 1"),
            (self.eta is None or self.eta >= 0.0, "eta", "non-negative"),
            (0.0 <= self.k_res < 1.0, "k_res", "in [0, 1)"),
            (self.shape is None or self.shape >= 0.0, "shape", "non-negative"),
            (self.nx is None or self.nx >= 1, "nx", "at least 1"),
            (self.ny is None or self.ny >= 1, "ny", "at least 1"),
            (self.notch_mode in (SLIT, BAND), "notch_mode", f"{SLIT} or {BAND}"),
            (self.bdf3_variant in ("backward", "divided"), "bdf3_variant", "backward or divided"),
            (self.stress_split in (FULL, TENSION_ONLY), "stress_split", f"{FULL} or {TENSION_ONLY}"),
            (self.kinematics in (PLANE_STRAIN, PLANE_STRESS), "kinematics", f"{PLANE_STRAIN} or {PLANE_STRESS}"),
            (self.degradation in (None, QUADRATIC, CUBIC), "degradation", f"{QUADRATIC} or {CUBIC}"),
            (self.solver in SOLVERS, "solver", " or ".join(SOLVERS)),
            (self.saddle_solver in SADDLE_SOLVERS, "saddle_solver", " or ".join(SADDLE_SOLVERS)),
        ]
        for ok, key, expected in checks:
            if not ok:
                raise ConfigError(f"{key} must be {expected}", context={key: getattr(self, key)})
        if self.tol_max is not None and self.tol_min is not None and self.tol_min >= self.tol_max:
            raise ConfigError("tol_min must be below tol_max", context={"tol_min": self.tol_min, "tol_max": self.tol_max})
        return self

    def table(self) -> List[Tuple[str, Any]]:
        return list(asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_").lower()


def _coerce(key: str, raw: str, line: Optional[int] = None) -> Any:
    if key not in _FIELDS:
        raise ConfigError(f"unknown key '{key}'", line=line)
    hint = typing.get_type_hints(RunConfig)[key]
    optional = typing.get_origin(hint) is Union and type(None) in typing.get_args(hint)
    if optional:
        hint = next(arg for arg in typing.get_args(hint) if arg is not type(None))
    text = raw.strip().strip('"').strip("'")
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot read '{raw}' as {hint.__name__} for '{key}'", line=line)


def parse_config(text: str) -> Dict[str, Any]:
    """
    Parses the `key = value` grammar into a dict of typed overrides.
    """
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        match = _LINE.match(line)
        if match is None:
            raise ConfigError(f"expected 'key = value', got '{raw.strip()}'", line=lineno)
        key = normalize_key(match.group(1))
        values[key] = _coerce(key, match.group(2), lineno)
    return values


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def parse_sets(items: Iterable[str]) -> Dict[str, Any]:
    values = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, raw = item.split("=", 1)
        key = normalize_key(key)
        values[key] = _coerce(key, raw)
    return values


def build_config(
    path: Optional[Union[str, Path]] = None,
    flags: Optional[Dict[str, Any]] = None,
    sets: Iterable[str] = (),
) -> RunConfig:
    """
    Merge defaults, an optional config file, named flags (None means unset) and --set items.
    """
    merged: Dict[str, Any] = {}
    if path is not None:
        merged.update(load_config(path))
    for key, value in (flags or {}).items():
        key = normalize_key(key)
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown key '{key}'")
        merged[key] = value
    merged.update(parse_sets(sets))
    return replace(RunConfig(), **merged).validate()


def resolve_scenario(config: RunConfig) -> Scenario:
    """
    Preset named by the config with every model and geometry override applied.
    """
    base = preset(config.scenario)
    material = base.material
    changes = {
        "eta": config.eta,
        "gc": config.gc,
        "ell": config.ell,
    }
    material_changes = {key: value for key, value in changes.items() if value is not None}
    if config.degradation is not None or config.shape is not None:
        kind = config.degradation or material.degradation.kind
        shape = material.degradation.shape if config.shape is None else config.shape
        material_changes["degradation"] = Degradation(kind, shape)
    material_changes.update(stress_split=config.stress_split, kinematics=config.kinematics, k_res=config.k_res)
    try:
        material = material.with_(**material_changes)
        scenario_changes = {
            key: getattr(config, key)
            for key in ("mesh_file", "t_final", "dt0", "traction", "nx", "ny", "tol_max", "h_min")
            if getattr(config, key) is not None
        }
        return base.with_(material=material, notch_mode=config.notch_mode, **scenario_changes)
    except InvalidParameter as err:
        raise ConfigError(err.info, context=err.context)


def effective_tolerances(config: RunConfig, scenario: Scenario) -> Tuple[float, float]:
    """
    (tol_max, tol_min) with tol_max taken from the scenario when unset and tol_min = tol_max / 100.
    """
    tol_max = scenario.tol_max if config.tol_max is None else config.tol_max
    tol_min = tol_max / 100.0 if config.tol_min is None else config.tol_min
    if tol_min >= tol_max:
        raise ConfigError("tol_min must be below tol_max", context={"tol_min": tol_min, "tol_max": tol_max})
    return tol_max, tol_min
