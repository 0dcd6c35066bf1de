#!/usr/bin/python3
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from .adapt import AdaptiveDriver, RunResult
from .arguments import Format, build_parser
from .config import RunConfig, build_config, resolve_scenario
from .errors import ConfigError, FracturaError, RunAborted
from .model import dissipation
from .output import OutputWriter, write_summary
from .verification import convergence_study, steady_profile

logger = logging.getLogger(__name__)

CONFIG_FLAGS = (
    "scenario",
    "tol_max",
    "tol_min",
    "tol_stg",
    "tol_mesh",
    "rho_inf",
    "chi",
    "h_min",
    "baseline_iteration_count",
    "mesh_file",
    "out",
    "cadence",
)


class Fractura:
    """
    Wrapper for one adaptive run: resolves the scenario, wires the output writer
    into the driver and writes the summary whatever the outcome.
    """

    def __init__(self, config: RunConfig, sink=None) -> None:
        self.config = config
        self.sink = sink or sys.stdout
        self.scenario = resolve_scenario(config)
        self.directory = Path(config.out)

    def _print(self, text: str) -> None:
        print(text, file=self.sink)

    def summary(self, records, state, rejections: int, wall_time: float, status: str) -> dict:
        last = records[-1] if records else None
        return {
            "scenario": self.scenario.name,
            "status": status,
            "total_steps": len(records),
            "rejections": rejections,
            "final_elements": state.mesh.n_triangles if state is not None else None,
            "final_dissipation": dissipation(state.mesh, state.phi, self.scenario.material) if state is not None else None,
            "last_t": last.t if last is not None else 0.0,
            "wall_time": wall_time,
        }

    def run(self) -> int:
        """
        Returns the exit status: 0 when t_final is reached, 1 when the run aborts.
        """
        self._print(f"{Format.BOLD}Scenario {self.scenario.name}{Format.END}: t_final = {self.scenario.t_final:.3e} s")
        writer = OutputWriter(self.directory, self.config.cadence)
        driver = AdaptiveDriver(self.scenario, self.config, [writer])
        started = time.perf_counter()
        try:
            result: RunResult = driver.run()
        except RunAborted as err:
            if err.state is not None and err.record is not None:
                writer.snapshot(err.state, err.record.step)
            writer.close()
            write_summary(
                self.directory / "summary.json",
                self.summary(driver.records, err.state, driver.rejections, time.perf_counter() - started, "aborted"),
            )
            self._print(f"{err}")
            return 1
        except FileNotFoundError:
            writer.close()
            raise
        if result.records and result.records[-1].step % self.config.cadence:
            writer.snapshot(result.state, result.records[-1].step)
        writer.close()
        summary = self.summary(result.records, result.state, result.rejections, result.wall_time, "completed")
        write_summary(self.directory / "summary.json", summary)
        self._print(
            f"{Format.GREEN + Format.BOLD}Finished{Format.END}: {summary['total_steps']} steps, "
            f"{summary['rejections']} rejections, {summary['final_elements']} elements, "
            f"dissipation {summary['final_dissipation']:.6e} J/m"
        )
        return 0


def _configure_logging(args) -> None:
    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _config_from(args) -> RunConfig:
    flags = {key: getattr(args, key, None) for key in CONFIG_FLAGS}
    return build_config(args.config, flags, args.set)


def _validate(args, sink) -> int:
    config = _config_from(args)
    resolve_scenario(config)
    width = max(len(key) for key, _ in config.table())
    for key, value in config.table():
        print(f"{Format.BOLD}{key.ljust(width)}{Format.END} {Format.GREY}{value}{Format.END}", file=sink)
    return 0


def _convergence(args, sink) -> int:
    rows = convergence_study(args.rho_inf, args.steps)
    print(f"{'rho_inf':>8} {'steps':>6} {'dt':>12} {'error':>12} {'order':>7}", file=sink)
    for row in rows:
        print(f"{row.rho_inf:8.3f} {row.steps:6d} {row.dt:12.4e} {row.error:12.4e} {row.order:7.3f}", file=sink)
    return 0


def _profile(args, sink) -> int:
    report = steady_profile(args.ell, args.gc, args.cells_per_ell)
    print(f"h = {report.h:.3e} m", file=sink)
    print(f"max nodal error     {report.max_error:.4e}", file=sink)
    print(f"relative L2 error   {report.l2_error:.4e}", file=sink)
    print(f"dissipation / Gc    {report.dissipation_ratio:.6f}", file=sink)
    return 0


def main(argv: Optional[List[str]] = None, sink=None) -> int:
    sink = sink or sys.stdout
    args = build_parser().parse_args(argv)
    Format.enable(args.colour)
    _configure_logging(args)
    print("~~~ fractura v0.1 ~~~", file=sink)
    try:
        if args.verb == "validate-config":
            return _validate(args, sink)
        if args.verb == "convergence":
            return _convergence(args, sink)
        if args.verb == "profile-1d":
            return _profile(args, sink)
        return Fractura(_config_from(args), sink).run()
    except ConfigError as err:
        print(f"{err}", file=sink)
        return 2
    except FileNotFoundError as err:
        print(f"{Format.BOLD + Format.ORANGE}File Not Found{Format.END}: {err}", file=sink)
        return 2
    except FracturaError as err:
        print(f"{err}", file=sink)
        return 1


if __name__ == "__main__":
    sys.exit(main())
