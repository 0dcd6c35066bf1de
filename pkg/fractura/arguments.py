from argparse import ArgumentParser

ENV_THREADS = "FRACTURA_THREADS"
RUN_LOG_HEADER = (
    "step",
    "t",
    "dt",
    "E",
    "n_elements",
    "h_min",
    "n_stagger",
    "dissipation",
    "crack_tip_x",
    "crack_tip_speed",
)


class Format:
    """
    Class for formatting terminal output.
    Colours stay empty strings until `Format.enable()` is called.
    """

    UNDERLINE = ""
    CYAN = ""
    BLUE = ""
    GREEN = ""
    YELLOW = ""
    RED = ""
    GREY = ""
    BOLD = ""
    END = ""
    ORANGE = ""

    @classmethod
    def enable(cls, colour: bool = True) -> None:
        """
        Switch ANSI colours on (or back off).
        """
        codes = {
            "UNDERLINE": "\033[4m",
            "CYAN": "\033[96m",
            "BLUE": "\033[94m",
            "GREEN": "\033[92m",
            "YELLOW": "\033[93m",
            "RED": "\033[91m",
            "GREY": "\033[38;5;246m",
            "BOLD": "\033[1m",
            "END": "\033[0m",
            "ORANGE": "\033[38;5;208m",
        }
        for name, code in codes.items():
            setattr(cls, name, code if colour else "")


def _add_common(parser: ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose messages")
    parser.add_argument("-d", "--debug", action="store_true", help="Debug mode")
    parser.add_argument("-c", "--colour", action="store_true", help="Colour output")


def _add_config_flags(parser: ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", default=None, help="Scenario/config file (key = value)")
    parser.add_argument("--scenario", help="Preset: desk, paper, cubic, elastic")
    parser.add_argument("--tol-max", type=float, help="Maximum weighted truncation error")
    parser.add_argument("--tol-min", type=float, help="Error below which the step grows")
    parser.add_argument("--tol-stg", type=float, help="Staggered loop tolerance")
    parser.add_argument("--tol-mesh", type=float, help="Relative spatial error tolerance")
    parser.add_argument("--rho-inf", type=float, help="Spectral radius at infinity")
    parser.add_argument("--chi", type=float, help="Marking fraction")
    parser.add_argument("--h-min", type=float, help="Refinement size floor (m)")
    parser.add_argument(
        "--baseline-iteration-count",
        action="store_true",
        default=None,
        help="Control the time step by staggered iteration count (comparison baseline)",
    )
    parser.add_argument("--mesh-file", help="Initial mesh in the fractura text format")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--cadence", type=int, help="Write a VTK snapshot every N accepted steps")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override any config key (repeatable)",
    )


def build_parser() -> ArgumentParser:
    """
    Build the command-line parser with its four verbs.
    """
    parser = ArgumentParser(prog="fractura", description="Adaptive phase-field dynamic fracture")
    _add_common(parser)
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Run a space-and-time adaptive simulation")
    _add_common(run)
    _add_config_flags(run)

    validate = verbs.add_parser("validate-config", help="Resolve and check a configuration")
    _add_common(validate)
    _add_config_flags(validate)

    convergence = verbs.add_parser("convergence", help="Generalized-alpha order study on u'' = -u")
    _add_common(convergence)
    convergence.add_argument(
        "--rho-inf", type=float, nargs="+", default=[0.0, 0.5, 1.0], help="Spectral radii to test"
    )
    convergence.add_argument(
        "--steps", type=int, nargs="+", default=[100, 200, 400, 800], help="Steps per period"
    )

    profile = verbs.add_parser("profile-1d", help="Steady 1D phase-field profile oracle")
    _add_common(profile)
    profile.add_argument("--ell", type=float, default=0.01, help="Localization length (m)")
    profile.add_argument("--gc", type=float, default=0.5, help="Griffith energy (N/m)")
    profile.add_argument("--cells-per-ell", type=int, default=10, help="Elements per length ell")
    return parser
