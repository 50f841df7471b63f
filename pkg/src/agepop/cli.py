# agepop/cli.py
"""
Command-line front end.

    agepop simulate  --config model.toml --t 1.0 [--horizon 5 --full]
    agepop spectrum  --config model.toml --lambda-min -1 --lambda-max 4 --lambda-steps 11
    agepop lambda0   --config model.toml [--tol 1e-10]
    agepop classify  --config model.toml
    agepop resolvent --config model.toml --lambda 2.0
    agepop project   --config model.toml
    agepop verify    --config model.toml [--seed 0]

Exit status: 0 success, 1 rejected input or failed verification, 2 numerical
failure or no Malthusian parameter.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from ._version import PACKAGE_VERSION
from .config import ModelConfig, load_config
from .errors import (
    AgePopError,
    ModelValidationError,
    NoMalthusianParameterError,
    NumericalError,
)
from .semigroup import iter_semigroup, time_steps, total_population
from .services.logging_service import LoggingUtility
from .toolkit import AgePopulation
from .utils.battery import VerificationBattery
from .utils.formatters import csv_text, density_header, dumps, emit, make_envelope

logging_utility = LoggingUtility()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

CommandResult = Tuple[str, int]


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"config file not found: {value}")
    return path


def _nonnegative(value: str) -> float:
    x = float(value)
    if x < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {value}")
    return x


def _positive(value: str) -> float:
    x = float(value)
    if x <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=_existing_file, required=True, help="TOML model config")
    common.add_argument("--out", type=Path, default=None, help="Output file (default stdout)")
    common.add_argument("--format", choices=["json", "csv"], default="json", dest="fmt")
    common.add_argument("--tol", type=_positive, default=None, help="Root/precondition tolerance")
    common.add_argument("--seed", type=int, default=0, help="Seed for randomized batteries")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        default=None,
        help="Override AGEPOP_LOG_LEVEL for this run",
    )

    parser = _ArgumentParser(prog="agepop", description="Age-structured population semigroup toolkit")
    parser.add_argument("--version", action="version", version=f"agepop {PACKAGE_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    simulate = sub.add_parser("simulate", parents=[common], help="Evolve the initial density")
    simulate.add_argument("--t", type=_nonnegative, default=0.0, help="Time of the exported density")
    simulate.add_argument("--horizon", type=_nonnegative, default=None, help="Trajectory length")
    simulate.add_argument("--full", action="store_true", help="CSV rows carry full densities")

    spectrum = sub.add_parser("spectrum", parents=[common], help="r(Q_λ) on a λ grid")
    spectrum.add_argument("--lambda-min", type=float, default=-1.0)
    spectrum.add_argument("--lambda-max", type=float, default=4.0)
    spectrum.add_argument("--lambda-steps", type=int, default=11)

    sub.add_parser("lambda0", parents=[common], help="Malthusian parameter")

    classify = sub.add_parser("classify", parents=[common], help="Stability verdict")
    classify.add_argument("--eps-band", type=_nonnegative, default=None)

    resolvent = sub.add_parser("resolvent", parents=[common], help="(λ + 𝔸)^{-1}φ and residuals")
    resolvent.add_argument("--lambda", type=float, required=True, dest="lam")

    sub.add_parser("project", parents=[common], help="Spectral projection of the initial density")

    verify = sub.add_parser("verify", parents=[common], help="Cross-validation battery")
    verify.add_argument("--horizon", type=_positive, default=5.0)
    return parser


# --------------------------------------------------------------------------- #
#  Subcommands
# --------------------------------------------------------------------------- #
def _render_json(command: str, payload: Any) -> CommandResult:
    return dumps(make_envelope(command, payload)), EXIT_OK


def _ages(app: AgePopulation) -> np.ndarray:
    return app.model.grid.nodes


def _density_rows(app: AgePopulation, values: np.ndarray) -> List[List[Any]]:
    return [[a, *row] for a, row in zip(_ages(app), values)]


def _density_csv(app: AgePopulation, values: np.ndarray) -> CommandResult:
    header = ["a"] + [f"u[{i}]" for i in range(app.model.n)]
    return csv_text(header, _density_rows(app, values)), EXIT_OK


def cmd_simulate(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    phi = config.initial_density(app.model)
    da = app.model.grid.da
    target = time_steps(args.t, da)
    horizon = max(args.horizon if args.horizon is not None else args.t, args.t)
    steps = time_steps(horizon, da)
    B = app.birth(phi, steps * da)

    rows: List[List[Any]] = []
    density = None
    for m, t, values in iter_semigroup(app.model, app.propagator, B, phi):
        if m == target:
            density = values
        if args.full:
            rows.append([t, *values.reshape(-1)])
        else:
            total = float(np.dot(app.model.grid.weights, values.sum(axis=1)))
            rows.append([t, total, float(np.linalg.norm(B.values[m]))])

    if args.fmt == "csv":
        header = (
            density_header(app.model.n, app.model.K)
            if args.full
            else ["t", "total_population", "birth_norm"]
        )
        return csv_text(header, rows), EXIT_OK
    return _render_json(
        "simulate",
        {
            "t": target * da,
            "horizon": steps * da,
            "total_population": float(np.dot(app.model.grid.weights, density.sum(axis=1))),
            "density": density,
            "trajectory": {
                "times": B.times,
                "birth": B.values,
            },
        },
    )


def cmd_spectrum(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    if args.lambda_steps < 1:
        raise ModelValidationError("--lambda-steps must be at least 1")
    if args.lambda_max < args.lambda_min:
        raise ModelValidationError("--lambda-max must not be below --lambda-min")
    lams = np.linspace(args.lambda_min, args.lambda_max, args.lambda_steps)
    curve = app.spectrum(lams)
    if args.fmt == "csv":
        return csv_text(["lambda", "r"], [[pt.lam, pt.r] for pt in curve]), EXIT_OK
    return _render_json("spectrum", {"points": curve})


def cmd_lambda0(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    mal = app.malthusian
    if args.fmt == "csv":
        return csv_text(
            ["lambda0", "residual", "lo", "hi", "evaluations"],
            [[mal.lambda0, mal.residual, *mal.bracket, mal.evaluations]],
        ), EXIT_OK
    return _render_json("lambda0", mal)


def cmd_classify(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    eps = args.eps_band if args.eps_band is not None else config.numerics.eps_band
    result = app.classify(eps_band=eps)
    if args.fmt == "csv":
        rows = [[result.verdict.value, result.r_q0]]
        return csv_text(["verdict", "r_q0"], rows), EXIT_OK
    return _render_json("classify", result)


def cmd_resolvent(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    phi = config.initial_density(app.model)
    result, residuals = app.resolvent(args.lam, phi)
    if args.fmt == "csv":
        return _density_csv(app, result.psi.values)
    return _render_json(
        "resolvent",
        {
            "lambda": args.lam,
            "condition": result.condition,
            "pde_residual": residuals.pde_residual,
            "bc_residual": residuals.bc_residual,
            "psi": result.psi.values,
        },
    )


def cmd_project(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    phi = config.initial_density(app.model)
    projection = app.projection
    coefficient = projection.coefficient(phi)
    values = coefficient * projection.profile
    if args.fmt == "csv":
        return _density_csv(app, values)
    return _render_json(
        "project",
        {
            "lambda0": app.malthusian.lambda0,
            "coefficient": coefficient,
            "total_population": total_population(projection.apply(phi)),
            "density": values,
        },
    )


def _verify_status(outcomes) -> int:
    failed = [o for o in outcomes if not o.passed]
    if not failed:
        return EXIT_OK
    if any(o.detail.get("kind") == "numerical" for o in failed):
        return EXIT_NUMERICAL
    return EXIT_INVALID


def cmd_verify(args, config: ModelConfig, app: AgePopulation) -> CommandResult:
    phi = config.initial_density(app.model)
    battery = VerificationBattery(app, phi, seed=args.seed, horizon=args.horizon)
    outcomes = battery.run()
    status = _verify_status(outcomes)
    if args.fmt == "csv":
        rows = [[o.name, str(o.passed).lower()] for o in outcomes]
        return csv_text(["check", "passed"], rows), status
    envelope = make_envelope(
        "verify",
        {"passed": all(o.passed for o in outcomes), "seed": args.seed, "checks": outcomes},
    )
    return dumps(envelope), status


COMMANDS = {
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "lambda0": cmd_lambda0,
    "classify": cmd_classify,
    "resolvent": cmd_resolvent,
    "project": cmd_project,
    "verify": cmd_verify,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        logging_utility.set_level(args.log_level)
    try:
        config = load_config(args.config)
        tol = args.tol if args.tol is not None else config.numerics.tol
        app = AgePopulation(
            config.build_model(), substeps=config.numerics.substeps, tol=tol
        )
        text, status = COMMANDS[args.command](args, config, app)
    except ModelValidationError as e:
        logging_utility.error("Rejected: %s", e)
        sys.stderr.write(f"agepop: invalid input: {e}\n")
        return EXIT_INVALID
    except (NumericalError, NoMalthusianParameterError) as e:
        logging_utility.error("Numerical failure: %s", e)
        sys.stderr.write(f"agepop: numerical failure: {e}\n")
        return EXIT_NUMERICAL
    except AgePopError as e:
        sys.stderr.write(f"agepop: {e}\n")
        return EXIT_NUMERICAL

    emit(text, args.out)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
