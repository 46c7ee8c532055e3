"""Command-line interface for shape optimisation runs and diagnostics."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RESOLVED_CONFIG_NAME, RunConfig, load_config, save_config
from .exceptions import ConfigError, InvalidDeformationError, ShapeOptError
from .export import (
    write_history_csv,
    write_state_snapshot,
    write_summary,
    write_svg,
)
from .gradients import GradientKind, GradientMethod
from .kernels import KernelProfile, loglog_slope, sigma_scaling
from .mesh import generate_mesh, interface_edges
from .optimizer import AlgorithmKind, OptState, evaluate_state, run
from .shape_calculus import dJ_vol, fd_oracle, random_direction

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_PROGRESS = 2
EXIT_INVALID_DEFORMATION = 3
EXIT_THRESHOLD = 4


def create_parser() -> argparse.ArgumentParser:
    """Create the command-line argument parser."""
    parser = argparse.ArgumentParser(
        prog="shapeopt",
        description="Shape optimisation of a transmission problem with kernel gradients",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s run --config experiment.yaml
  %(prog)s check-derivative --config experiment.yaml --t 1e-4 --n 5
  %(prog)s sigma-sweep --config experiment.yaml --sigmas 1,10,100
  %(prog)s compare --config experiment.yaml
        """,
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings only")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser("run", help="Run the configured optimisation")
    run_parser.add_argument("--config", help="YAML configuration (defaults if omitted)")
    run_parser.add_argument("--output-dir", help="Override output_dir from the config")

    check_parser = subparsers.add_parser(
        "check-derivative", help="Compare dJ_vol with central finite differences"
    )
    check_parser.add_argument("--config", help="YAML configuration")
    check_parser.add_argument("--t", type=float, default=1e-4, help="FD step (default: 1e-4)")
    check_parser.add_argument(
        "--n", type=int, default=5, help="Number of random directions (default: 5)"
    )

    sweep_parser = subparsers.add_parser(
        "sigma-sweep", help="Measure how the gradient's derivatives scale with sigma"
    )
    sweep_parser.add_argument("--config", help="YAML configuration")
    sweep_parser.add_argument(
        "--sigmas", required=True, help="Comma-separated list, e.g. 1,10,100"
    )

    compare_parser = subparsers.add_parser(
        "compare", help="Final costs of H1, Euclidean and variable-metric runs"
    )
    compare_parser.add_argument("--config", help="YAML configuration")

    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _initial_state(config: RunConfig) -> OptState:
    opt = config.opt_config()
    mesh = generate_mesh(opt.initial_shape, opt.n_interface, opt.grid_res)
    return evaluate_state(mesh, opt, 0, opt.sigma0)


def handle_run_command(args) -> int:
    """Handle the run command."""
    config = load_config(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, output_dir / RESOLVED_CONFIG_NAME)

    opt = config.opt_config()
    written: set[int] = set()

    def on_iteration(record, state: OptState) -> None:
        if config.snapshot_every and record.n % config.snapshot_every == 0:
            write_state_snapshot(state, output_dir)
            written.add(record.n)

    history = run(opt, on_iteration)
    final = history.final_state
    if final is not None and final.iteration not in written:
        write_state_snapshot(final, output_dir)

    write_history_csv(history, output_dir / "history.csv")
    write_svg(history, opt.target_shape, output_dir / "shapes.svg")
    write_summary(history, output_dir / "summary.json", config=config.to_dict())

    print(
        f"final J = {history.final_cost:.6e}, iterations = {history.records[-1].n}, "
        f"sigma = {history.final_sigma:g}, accepted = {history.accepted_steps}, "
        f"termination = {history.termination.value}"
    )
    if opt.max_iter > 0 and history.accepted_steps == 0:
        logger.error("run ended without an accepted step")
        return EXIT_NO_PROGRESS
    return EXIT_OK


def handle_check_derivative_command(args) -> int:
    """Handle the check-derivative command."""
    config = load_config(args.config)
    if args.n < 0:
        raise ConfigError(f"--n must be non-negative, got {args.n}", key="n")
    if not args.t > 0:
        raise ConfigError(f"--t must be positive, got {args.t}", key="t")

    state = _initial_state(config)
    data = state.data
    rng = np.random.default_rng(config.seed)

    print(f"{'direction':>9}  {'dJ_vol':>24}  {'fd_oracle':>24}  {'rel_error':>10}")
    worst = 0.0
    for k in range(args.n):
        X = random_direction(state.mesh, rng)
        volume = dJ_vol(state.tensors, X)
        try:
            fd = fd_oracle(data, state.mesh, X, args.t, config.cg_tol)
        except InvalidDeformationError as e:
            print(f"Error: {e}", file=sys.stderr)
            logger.error(f"direction {k}: deformation invalid at t={args.t}, try a smaller t")
            return EXIT_INVALID_DEFORMATION
        rel = abs(volume - fd) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
        print(f"{k:>9}  {volume:>24.16e}  {fd:>24.16e}  {rel:>10.3e}")

    if worst > config.derivative_threshold:
        logger.error(
            f"largest relative error {worst:.3e} exceeds {config.derivative_threshold:g}"
        )
        return EXIT_THRESHOLD
    return EXIT_OK


def parse_sigmas(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("--sigmas needs at least one value", key="sigmas")
    try:
        sigmas = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--sigmas must be numbers, got '{text}'", key="sigmas") from None
    if any(not s > 0 for s in sigmas):
        raise ConfigError("--sigmas must be positive", key="sigmas")
    return sigmas


def handle_sigma_sweep_command(args) -> int:
    """Handle the sigma-sweep command."""
    sigmas = parse_sigmas(args.sigmas)
    config = load_config(args.config)
    state = _initial_state(config)
    kind = GradientKind.parse(config.method)
    profile = KernelProfile.WENDLAND if kind is GradientKind.RKHS_WENDLAND else KernelProfile.GAUSS

    edges = interface_edges(state.mesh)
    vertices = sorted({v for e in edges for v in e.endpoints})
    if not vertices:
        raise ConfigError("the initial mesh has no interface", key="initial_shape")
    points = state.mesh.vertices[vertices]

    rows = sigma_scaling(state.tensors, profile, sigmas, points)
    print(f"{'sigma':>12}  {'sup|div|':>14}  {'sup|jacobian|':>14}")
    for row in rows:
        print(f"{row.sigma:>12g}  {row.divergence:>14.6e}  {row.jacobian:>14.6e}")
    if len(rows) > 1:
        xs = [r.sigma for r in rows]
        print(f"slope(div) = {loglog_slope(xs, [r.divergence for r in rows]):.3f}")
        print(f"slope(jacobian) = {loglog_slope(xs, [r.jacobian for r in rows]):.3f}")
    return EXIT_OK


def handle_compare_command(args) -> int:
    """Handle the compare command."""
    config = load_config(args.config)
    base = config.opt_config()
    kind = GradientKind.parse(config.method)
    rkhs_kind = kind if kind.is_rkhs else GradientKind.RKHS_GAUSS

    variants = [
        ("variable_metric", replace(
            base,
            method=GradientMethod(rkhs_kind, config.sigma0),
            algorithm=AlgorithmKind.VARIABLE_METRIC,
        )),
        ("h1", replace(
            base,
            method=GradientMethod(GradientKind.H1, None, config.h1_seminorm),
            algorithm=AlgorithmKind.STANDARD,
        )),
        ("euclidean", replace(
            base, method=GradientMethod(GradientKind.EUCLIDEAN), algorithm=AlgorithmKind.STANDARD
        )),
    ]
    results = []
    for name, opt in variants:
        logger.info(f"compare: running {name}")
        history = run(opt)
        results.append((name, history))

    reference = results[0][1].final_cost
    print(f"{'method':>16}  {'final J':>14}  {'accepted':>8}  {'ratio':>8}")
    for name, history in results:
        ratio = history.final_cost / reference if reference > 0 else float("inf")
        print(
            f"{name:>16}  {history.final_cost:>14.6e}  {history.accepted_steps:>8}  {ratio:>8.2f}"
        )
    return EXIT_OK


HANDLERS = {
    "run": handle_run_command,
    "check-derivative": handle_check_derivative_command,
    "sigma-sweep": handle_sigma_sweep_command,
    "compare": handle_compare_command,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the shapeopt CLI."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_ERROR

    setup_logging(args.verbose, args.quiet)
    try:
        return HANDLERS[args.command](args)
    except (ShapeOptError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
