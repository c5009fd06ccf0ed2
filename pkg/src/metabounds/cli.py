"""Command line interface: run experiments, self-check, plot results."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .infotheory import DiscreteJoint, binary_kl, d_gamma, invert_kl_risk, mi_entropy_form, plugin_mi
from .model import Batch, grad_check, init_mlp


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metabounds",
        description="Empirical information-theoretic generalization bounds for meta-learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the t1 x t2 experiment protocol")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--out", default=None, help="override output directory")
    run.add_argument("--jobs", type=int, default=None, help="parallel run workers")

    grad = sub.add_parser("gradcheck", help="finite-difference check of the model gradients")
    grad.add_argument("--seed", type=int, default=7)

    sub.add_parser("oracle", help="brute-force self-checks of the estimators")

    plot = sub.add_parser("plot", help="plot bounds and gap versus m from result CSVs")
    plot.add_argument("--csv", required=True, nargs="+", help="one or more results.csv files")
    plot.add_argument("--out", required=True, help="output SVG path")
    return parser


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    report, paths = harness.run_experiment(cfg)
    print(f"runs: {report.total_runs} ({report.failed_runs} failed)")
    print(f"empirical risk: {report.empirical_risk:.6f}")
    print(f"gap: {report.empirical_gap:.6f} +/- {report.gap_std_err:.6f}")
    for name, value in report.bounds.items():
        print(f"{name}: {value:.6f}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(5):
        width = int(rng.integers(4, 12))
        dim = int(rng.integers(2, 6))
        bsz = int(rng.integers(2, 9))
        params = init_mlp(dim, 2, hidden=width, layers=4, rng=rng)
        batch = Batch(rng.standard_normal((bsz, dim)), rng.integers(0, 2, bsz))
        worst = max(worst, grad_check(params, batch, eps=1e-5))
    print(f"max relative error: {worst:.3e}")
    return 0 if worst <= 1e-5 else 1


def _cmd_oracle() -> int:
    rng = np.random.default_rng(123)
    ok = True

    # MI two-route agreement on random joints.
    worst = 0.0
    for _ in range(100):
        counts = rng.integers(0, 20, size=(int(rng.integers(2, 7)), int(rng.integers(2, 5))))
        if counts.sum() == 0:
            continue
        j = DiscreteJoint(tuple(range(counts.shape[0])), tuple(range(counts.shape[1])), counts)
        worst = max(worst, abs(plugin_mi(j) - mi_entropy_form(j)))
    print(f"{'PASS' if worst < 1e-12 else 'FAIL'} mi-two-route (max |diff| = {worst:.2e})")
    ok &= worst < 1e-12

    # Binary KL inversion round trip.
    worst = 0.0
    for _ in range(200):
        p = float(rng.uniform(0, 0.9))
        q = float(rng.uniform(p + 1e-6, 1.0))
        c = binary_kl(p, (p + q) / 2)
        worst = max(worst, abs(invert_kl_risk(p, c) - q))
    print(f"{'PASS' if worst < 1e-9 else 'FAIL'} kl-inversion-round-trip (max |diff| = {worst:.2e})")
    ok &= worst < 1e-9

    # Relaxed divergence supremum.
    worst = 0.0
    grid = np.arange(-10.0, 10.0, 1e-3)
    for p, q in ((0.1, 0.3), (0.4, 0.7), (0.05, 0.9)):
        sup = max(d_gamma(p, q, g) for g in grid)
        worst = max(worst, abs(sup - binary_kl(p, q)))
    print(f"{'PASS' if worst < 1e-5 else 'FAIL'} d-gamma-supremum (max |diff| = {worst:.2e})")
    ok &= worst < 1e-5

    return 0 if ok else 1


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    for path in args.csv:
        rows.extend(harness.read_csv(path))
    if not rows:
        print("no rows to plot", file=sys.stderr)
        return 1
    ns = sorted({int(r["n"]) for r in rows})
    fig, axes = plt.subplots(1, len(ns), figsize=(5.5 * len(ns), 4.0), squeeze=False)
    for ax, n in zip(axes[0], ns):
        sub = [r for r in rows if int(r["n"]) == n]
        bound_names = sorted({r["bound"] for r in sub})
        for name in bound_names:
            pts = sorted(
                ((int(r["m"]), float(r["value"])) for r in sub if r["bound"] == name)
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        gap_pts = sorted({(int(r["m"]), float(r["gap"])) for r in sub})
        ax.plot(
            [p[0] for p in gap_pts],
            [p[1] for p in gap_pts],
            marker="s",
            color="black",
            linestyle="--",
            label="gap",
        )
        ax.set_xlabel("samples per task (m)")
        ax.set_ylabel("bound / gap")
        ax.set_title(f"n = {n}")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(f"wrote {args.out}")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "oracle":
            return _cmd_oracle()
        if args.command == "plot":
            return _cmd_plot(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def main() -> None:
    sys.exit(cli_main())
