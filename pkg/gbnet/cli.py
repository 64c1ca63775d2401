"""
Command-line entry point::

    gbnet run --config configs/blobs_mlp.json --out results/blobs
    gbnet compare --config configs/cifar_cnn5.json --heads softmax_ce,exp_gb,pow3_gb --out results/cifar
    gbnet check-grad --seed 0
    gbnet curvature --s 10 --grid 0:6:0.1 --out results/curvature
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from gbnet.curvature import CurvaturePoint, first_term_ordering, hessian_table, ordering_window
from gbnet.diagnostics import write_frame
from gbnet.gb_logging import init_logger
from gbnet.gbutils import (
    DomainError,
    GbnetError,
    final_s,
    gb_error_abort,
    mkdir_if_needed,
    print_stars,
)
from gbnet.grad_check import check_gradients
from gbnet.runner import compare_heads, load_config, run_trials


def parse_grid(text: str) -> np.ndarray:
    """`lo:hi:step` to the points `lo, lo + step, ...` up to `hi` included"""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        gb_error_abort(f"the grid must read lo:hi:step, not {text!r}", DomainError)
    if not step > 0.0 or hi < lo:
        gb_error_abort(f"invalid grid {text!r}", DomainError)
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.run.workers = args.workers
    summary = run_trials(cfg, args.out)
    print_stars(f"{summary.head_name}: {summary.n_completed} of {len(summary.results)} trials completed")
    print(summary.to_frame().to_string(index=False))
    print(
        f"median min error {summary.median_min_error:.4f},"
        f" median convergence epoch {summary.median_convergence_epoch}"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.run.workers = args.workers
    heads = [h.strip() for h in args.heads.split(",") if h.strip()]
    comparison, ratios = compare_heads(cfg, heads, args.out)
    print_stars("comparison")
    print(comparison.to_string(index=False))
    print_stars("convergence epoch ratios")
    print(ratios.to_string(index=False))
    return 0


def _cmd_check_grad(args: argparse.Namespace) -> int:
    report = check_gradients(args.seed)
    print_stars(f"gradient check, seed {args.seed}")
    with pd.option_context("display.float_format", "{:.3e}".format):
        print(report.to_frame().to_string(index=False))
    if args.out is not None:
        path = Path(args.out)
        mkdir_if_needed(path.parent)
        write_frame(report.to_frame(), path)
    return 0 if report.passed else 1


def _cmd_curvature(args: argparse.Namespace) -> int:
    grid = parse_grid(args.grid)
    report = first_term_ordering(grid, args.s)
    window = ordering_window(args.s)
    points = [CurvaturePoint(x=float(x), t=args.t, s=args.s) for x in grid]
    table = hessian_table(points)
    print_stars(f"first-term ordering for s = {args.s}")
    if report.window is None:
        print("the chain holds at no grid point")
    else:
        print(f"longest run of grid points where the chain holds: {report.window}")
    if window is None:
        print("the chain holds nowhere")
    else:
        print(f"the chain holds exactly on ({window[0]:.6f}, {window[1]:.6f})")
    finite = np.isfinite(table["closed_form"]) & np.isfinite(table["rel_error"])
    if finite.any():
        print(f"largest Hessian relative error: {table.loc[finite, 'rel_error'].max():.3e}")
    if not finite.all():
        print(f"{final_s(int((~finite).sum()), 'Hessian row')} past double precision overflow")
    if args.out is not None:
        out = mkdir_if_needed(args.out)
        write_frame(report.to_frame(), out / "ordering.csv")
        write_frame(table, out / "hessians.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbnet", description="train networks with gradient-boosting output heads"
    )
    parser.add_argument("--log-dir", help="also log to <log-dir>/gbnet.txt")
    parser.add_argument("--verbose", action="store_true", help="debug messages on the console")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train over several trials")
    p_run.add_argument("--config", required=True, help="the JSON configuration")
    p_run.add_argument("--out", required=True, help="the output directory")
    p_run.add_argument("--workers", type=int, help="threads for the trials")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="compare heads on the same data and seeds")
    p_cmp.add_argument("--config", required=True, help="the JSON configuration")
    p_cmp.add_argument("--heads", required=True, help="comma-separated head presets")
    p_cmp.add_argument("--out", required=True, help="the output directory")
    p_cmp.add_argument("--workers", type=int, help="threads for the trials")
    p_cmp.set_defaults(func=_cmd_compare)

    p_grad = sub.add_parser("check-grad", help="finite-difference checks")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out", help="write the report to this CSV file")
    p_grad.set_defaults(func=_cmd_check_grad)

    p_curv = sub.add_parser("curvature", help="Hessian ordering and verification")
    p_curv.add_argument("--s", type=float, required=True, help="the normalization term, > 1")
    p_curv.add_argument("--grid", required=True, help="lo:hi:step")
    p_curv.add_argument("--t", type=float, default=1.0, help="the target in the Hessian table")
    p_curv.add_argument("--out", help="the output directory")
    p_curv.set_defaults(func=_cmd_curvature)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger = init_logger(
        "gbnet",
        log_level_for_console="debug" if args.verbose else "info",
        save_dir=args.log_dir,
    )
    try:
        return int(args.func(args))
    except (GbnetError, OSError) as e:
        logger.debug(f"{type(e).__name__} in {args.command}")
        print(f"gbnet {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
