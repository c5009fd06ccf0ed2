"""Experiment orchestration: the t1 x t2 protocol, MI aggregation, reports.

A run is one (supersample draw, membership draw, training, loss table)
quadruple.  t1 supersamples are built first; for each, t2 membership draws
are trained and evaluated.  Runs are independent work items keyed by
(t1_index, t2_index); every random stream is derived from the master seed
with an avalanche mixer, so results are identical for any scheduling order
or parallelism degree.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, fields

import numpy as np

from . import bounds as bnd
from .infotheory import LOG2, DiscreteJoint, GroupedJoint, conditional_plugin_mi, plugin_mi
from .metalearn import MamlConfig, SgldConfig, adapt_task, joint_sgld_train, maml_noisy_train
from .model import DivergenceError, zero_one_losses
from .supersample import (
    LossTable,
    MembershipVectors,
    build_supersample,
    draw_memberships,
    fill_loss_table,
    loss_pair_delta,
    select_partitions,
)
from .tasks import class_tasks_from_dataset, make_gaussian_env, parse_idx

KNOWN_BOUNDS = (
    "sqrt-delta",
    "sqrt-delta-cond",
    "sqrt-quad",
    "sqrt-quad-cond",
    "kl-quad",
    "fast-rate",
    "variance",
    "interpolating",
    "sgld-trajectory",
    "maml-trajectory",
)

CSV_COLUMNS = (
    "config",
    "n",
    "m",
    "t1",
    "t2",
    "trainer",
    "bound",
    "value",
    "empirical_risk",
    "gap",
    "gap_std_err",
    "failed_runs",
)

# Search grids for the fast-rate constants; every grid point is admissible,
# so taking the minimum over them keeps the bound valid.
C2_GRID = (0.02, 0.05, 0.09, 0.13, 0.17, 0.21, 0.25, 0.29, 0.32, 0.34)
GAMMA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)

_MASK = (1 << 64) - 1
_SUPERSAMPLE_STREAM = 0x53535353  # distinguishes supersample seeds from run seeds


def _splitmix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(*words) -> int:
    """Avalanche-fold integer words into one 64-bit seed."""
    h = 0
    for w in words:
        h = _splitmix(h ^ (int(w) & _MASK))
    return h


def _gen(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class ExperimentConfig:
    # environment
    env_kind: str = "gaussian"
    env_classes: int = 16
    env_dim: int = 8
    env_std: float = 0.25
    env_images: str = ""
    env_labels: str = ""
    env_center: bool = False
    task_mode: str = "class-pair"
    # protocol
    n: int = 2
    m: int = 10
    t1: int = 5
    t2: int = 10
    # trainer
    trainer: str = "joint-sgld"
    iterations: int = 40
    step_size: float = 0.5
    noise: float = 0.0
    task_batch: int = 0
    sample_batch: int = 0
    inner_step_size: float = 0.5
    split_train: int = 0
    hidden: int = 32
    layers: int = 4
    # adaptation
    adapt_steps: int = 10
    adapt_step_size: float = 0.5
    adapt_noise: float = 0.0
    # estimation and bounds
    bounds: tuple = ("sqrt-delta", "kl-quad", "fast-rate", "variance")
    miller_madow: bool = False
    optimize_constants: bool = True
    gamma: float = 0.5
    c2: float = 0.3
    capture_trajectory: bool = False
    covariance_samples: int = 16
    # bookkeeping
    master_seed: int = 20240601
    out_dir: str = "results"
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.t1 < 1 or self.t2 < 1:
            raise ValueError("t1 and t2 must be >= 1")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if self.trainer not in ("joint-sgld", "noisy-maml"):
            raise ValueError(f"unknown trainer {self.trainer!r}")
        if isinstance(self.bounds, str):
            self.bounds = tuple(b.strip() for b in self.bounds.split(",") if b.strip())
        self.bounds = tuple(self.bounds)
        unknown = [b for b in self.bounds if b not in KNOWN_BOUNDS]
        if unknown:
            raise ValueError(f"unknown bounds {unknown}; known: {list(KNOWN_BOUNDS)}")
        needs_traj = {"sgld-trajectory", "maml-trajectory"} & set(self.bounds)
        if needs_traj and not self.capture_trajectory:
            raise ValueError(f"{sorted(needs_traj)} need capture_trajectory = true")
        if "sgld-trajectory" in self.bounds and self.trainer != "joint-sgld":
            raise ValueError("sgld-trajectory applies to the joint-sgld trainer")
        if "maml-trajectory" in self.bounds and self.trainer != "noisy-maml":
            raise ValueError("maml-trajectory applies to the noisy-maml trainer")

    def scientific_items(self) -> list[tuple[str, str]]:
        """Everything that affects results; excludes out_dir and jobs."""
        skip = {"out_dir", "jobs"}
        items = []
        for f in fields(self):
            if f.name in skip:
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            items.append((f.name, str(value)))
        return items

    def config_hash(self) -> str:
        text = "\n".join(f"{k} = {v}" for k, v in self.scientific_items())
        return hashlib.sha256(text.encode()).hexdigest()[:12]


_CONFIG_KEYS = {
    "env": ("env_kind", str),
    "env.classes": ("env_classes", int),
    "env.dim": ("env_dim", int),
    "env.std": ("env_std", float),
    "env.images": ("env_images", str),
    "env.labels": ("env_labels", str),
    "env.center": ("env_center", "bool"),
    "task_mode": ("task_mode", str),
    "n": ("n", int),
    "m": ("m", int),
    "t1": ("t1", int),
    "t2": ("t2", int),
    "trainer": ("trainer", str),
    "train.iterations": ("iterations", int),
    "train.step_size": ("step_size", float),
    "train.noise": ("noise", float),
    "train.task_batch": ("task_batch", int),
    "train.sample_batch": ("sample_batch", int),
    "train.inner_step_size": ("inner_step_size", float),
    "train.split_train": ("split_train", int),
    "train.hidden": ("hidden", int),
    "train.layers": ("layers", int),
    "adapt.steps": ("adapt_steps", int),
    "adapt.step_size": ("adapt_step_size", float),
    "adapt.noise": ("adapt_noise", float),
    "bounds": ("bounds", "list"),
    "miller_madow": ("miller_madow", "bool"),
    "optimize_constants": ("optimize_constants", "bool"),
    "gamma": ("gamma", float),
    "c2": ("c2", float),
    "capture_trajectory": ("capture_trajectory", "bool"),
    "covariance_samples": ("covariance_samples", int),
    "master_seed": ("master_seed", int),
    "out_dir": ("out_dir", str),
    "jobs": ("jobs", int),
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the flat `key = value` configuration format."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        attr, kind = _CONFIG_KEYS[key]
        if kind == "bool":
            values[attr] = _parse_bool(val)
        elif kind == "list":
            values[attr] = tuple(v.strip() for v in val.split(",") if v.strip())
        else:
            values[attr] = kind(val)
    return ExperimentConfig(**values)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def build_environment(cfg: ExperimentConfig):
    if cfg.env_kind == "gaussian":
        return make_gaussian_env(
            num_classes=cfg.env_classes,
            dim=cfg.env_dim,
            std=cfg.env_std,
            mode=cfg.task_mode,
        )
    if cfg.env_kind == "idx":
        with open(cfg.env_images, "rb") as fh:
            images = parse_idx(fh.read())
        with open(cfg.env_labels, "rb") as fh:
            labels = parse_idx(fh.read())
        return class_tasks_from_dataset(images, labels, mode=cfg.task_mode, center=cfg.env_center)
    raise ValueError(f"unknown environment kind {cfg.env_kind!r}")


def trainer_config(cfg: ExperimentConfig):
    common = dict(
        iterations=cfg.iterations,
        step_size=cfg.step_size,
        noise=cfg.noise,
        task_batch=cfg.task_batch,
        sample_batch=cfg.sample_batch,
        adapt_steps=cfg.adapt_steps,
        adapt_step_size=cfg.adapt_step_size,
        adapt_noise=cfg.adapt_noise,
        hidden=cfg.hidden,
        layers=cfg.layers,
        capture=cfg.capture_trajectory,
        covariance_samples=cfg.covariance_samples,
    )
    if cfg.trainer == "joint-sgld":
        return SgldConfig(**common)
    return MamlConfig(inner_step_size=cfg.inner_step_size, split_train=cfg.split_train, **common)


@dataclass
class RunRecord:
    t1_index: int
    t2_index: int
    table: LossTable | None
    train_risk: float = math.nan
    test_risk: float = math.nan
    failed: bool = False
    trajectory_bound: float | None = None


def run_seed(master: int, t1_index: int, t2_index: int) -> int:
    return mix64(master, t1_index, t2_index)


def _single_run(cfg: ExperimentConfig, ss, t1_idx: int, t2_idx: int) -> RunRecord:
    seed = run_seed(cfg.master_seed, t1_idx, t2_idx)
    tcfg = trainer_config(cfg)
    try:
        mv = draw_memberships(cfg.n, cfg.m, _gen(mix64(seed, 1)))
        parts = select_partitions(ss, mv)
        train_rng = _gen(mix64(seed, 2))
        if cfg.trainer == "joint-sgld":
            state = joint_sgld_train(parts.meta_train, tcfg, train_rng)
        else:
            state = maml_noisy_train(parts.meta_train, tcfg, train_rng)
        adapt_rng = _gen(mix64(seed, 3))
        table = fill_loss_table(
            state,
            adapt=lambda u, x, y: adapt_task(u, x, y, tcfg, adapt_rng),
            ss=ss,
            mv=mv,
            loss_fn=zero_one_losses,
            run_id=t1_idx * cfg.t2 + t2_idx,
            t1_index=t1_idx,
            t2_index=t2_idx,
        )
    except DivergenceError:
        return RunRecord(t1_index=t1_idx, t2_index=t2_idx, table=None, failed=True)

    traj_value = None
    if cfg.capture_trajectory and state.trajectory.capture_enabled:
        if cfg.trainer == "joint-sgld":
            traj_value = bnd.sgld_trajectory_bound(state.trajectory, cfg.n, cfg.m)
        else:
            m_te = cfg.m - (cfg.split_train or cfg.m // 2)
            traj_value = bnd.maml_trajectory_bound(state.trajectory, cfg.n, m_te)
    return RunRecord(
        t1_index=t1_idx,
        t2_index=t2_idx,
        table=table,
        train_risk=table.train_risk(),
        test_risk=table.test_risk(),
        trajectory_bound=traj_value,
    )


def _tables(records) -> list[LossTable]:
    return [r.table for r in records if not r.failed]


def empirical_gap(records) -> tuple[float, float]:
    """Mean per-run meta-test minus meta-train loss, with its MC standard error.

    Per cell the difference equals (-1)^{S_j} * delta of the selected loss
    pair; averaging over cells and runs matches that definition exactly.
    """
    tables = [getattr(r, "table", r) for r in records]
    tables = [t for t in tables if t is not None]
    if not tables:
        raise ValueError("no successful runs")
    per_run = np.array([t.test_risk() - t.train_risk() for t in tables])
    gap = float(per_run.mean())
    se = float(per_run.std(ddof=1) / math.sqrt(len(per_run))) if len(per_run) > 1 else 0.0
    return gap, se


def estimate_mi_cells(tables, n: int, m: int, miller_madow: bool = False) -> dict:
    """All six per-cell estimator tables from a collection of loss tables.

    Unconditional kinds pool every run; conditional kinds group runs by
    their supersample index and average the per-group estimates.
    """
    if not tables:
        raise ValueError("no loss tables to estimate from")
    out = {kind: np.zeros((n, m)) for kind in bnd.CELL_KINDS}
    for i in range(n):
        for j in range(m):
            deltas, pairs, singles, quads, s_bits, both_bits, groups = [], [], [], [], [], [], []
            for table in tables:
                st_i = int(table.masks.s_tilde[i])
                s_j = int(table.masks.s[j])
                quad = table.quad(i, j)
                l_plus, l_minus, delta = loss_pair_delta(quad, st_i, s_j)
                deltas.append(delta)
                pairs.append((l_plus, l_minus))
                singles.append(l_plus)
                quads.append((quad.l00, quad.l11, quad.l10, quad.l01))
                s_bits.append(s_j)
                both_bits.append((st_i, s_j))
                groups.append(table.t1_index)

            def uncond(xs, ys):
                return plugin_mi(DiscreteJoint.from_samples(xs, ys), miller_madow)

            def cond(xs, ys):
                keys = sorted(set(groups))
                joints = {}
                for key in keys:
                    sel = [k for k, g in enumerate(groups) if g == key]
                    joints[key] = DiscreteJoint.from_samples(
                        [xs[k] for k in sel], [ys[k] for k in sel]
                    )
                value, _ = conditional_plugin_mi(GroupedJoint(joints), miller_madow)
                return value

            out["delta_mi"][i, j] = uncond(deltas, s_bits)
            out["delta_cmi"][i, j] = cond(deltas, s_bits)
            out["pair_mi"][i, j] = uncond(pairs, s_bits)
            out["single_mi"][i, j] = uncond(singles, s_bits)
            out["quad_mi"][i, j] = uncond(quads, both_bits)
            out["quad_cmi"][i, j] = cond(quads, both_bits)
    return {
        kind: bnd.MiCellEstimates(n=n, m=m, values=vals, kind=kind)
        for kind, vals in out.items()
    }


def _fast_rate_candidates(r_hat: float, pair, single, optimize: bool, c2_default: float):
    grid = C2_GRID if optimize else (c2_default,)
    best = None
    for c2 in grid:
        params = bnd.BoundParams(c2=c2, variant="proof")
        value = bnd.fast_rate_bound(r_hat, params, pair, single)
        cand = (value, {"c2": c2, "c1": params.resolved_c1()})
        if best is None or cand[0] < best[0]:
            best = cand
    if r_hat == 0.0:
        value = bnd.fast_rate_bound(0.0, bnd.BoundParams(), pair, single, interpolating=True)
        if value < best[0]:
            best = (value, {"mode": "interpolating"})
    return best


def _variance_candidates(tables, pair, single, optimize: bool, c2_default: float, gamma_default: float):
    gammas = GAMMA_GRID if optimize else (gamma_default,)
    c2s = C2_GRID if optimize else (c2_default,)
    best = None
    for gamma in gammas:
        v = bnd.gamma_variance(tables, gamma)
        for c2 in c2s:
            params = bnd.BoundParams(c2=c2, gamma=gamma, variant="proof")
            value = bnd.variance_fast_rate_bound(v, params, pair, single)
            c1 = bnd.variance_c1_min(c2, gamma)
            cand = (value, {"c2": c2, "gamma": gamma, "c1": c1, "variance": v})
            if best is None or cand[0] < best[0]:
                best = cand
    return best


def evaluate_bounds(cfg: ExperimentConfig, records) -> bnd.BoundReport:
    """Aggregate MI estimates over the runs and evaluate the selected bounds."""
    ok = [r for r in records if not r.failed]
    failed = len(records) - len(ok)
    if not ok:
        raise ValueError("all runs failed; nothing to aggregate")
    tables = _tables(records)
    estimates = estimate_mi_cells(tables, cfg.n, cfg.m, cfg.miller_madow)
    r_hat = float(np.mean([r.train_risk for r in ok]))
    test_risk = float(np.mean([r.test_risk for r in ok]))
    gap, se = empirical_gap(ok)

    values: dict[str, float] = {}
    comps: dict[str, dict] = {}
    for name in cfg.bounds:
        if name == "sqrt-delta":
            values[name] = bnd.sqrt_mi_bound(estimates["delta_mi"])
            comps[name] = {"estimator": "delta_mi", "mean_mi": estimates["delta_mi"].mean()}
        elif name == "sqrt-delta-cond":
            values[name] = bnd.sqrt_mi_bound(estimates["delta_cmi"])
            comps[name] = {"estimator": "delta_cmi", "mean_mi": estimates["delta_cmi"].mean()}
        elif name == "sqrt-quad":
            values[name] = bnd.sqrt_mi_bound(estimates["quad_mi"])
            comps[name] = {"estimator": "quad_mi", "mean_mi": estimates["quad_mi"].mean()}
        elif name == "sqrt-quad-cond":
            values[name] = bnd.sqrt_mi_bound(estimates["quad_cmi"])
            comps[name] = {"estimator": "quad_cmi", "mean_mi": estimates["quad_cmi"].mean()}
        elif name == "kl-quad":
            risk_upper, gap_upper = bnd.kl_inversion_bound(r_hat, estimates["quad_mi"])
            values[name] = gap_upper
            comps[name] = {
                "estimator": "quad_mi",
                "risk_upper": risk_upper,
                "budget": estimates["quad_mi"].mean(),
            }
        elif name == "fast-rate":
            value, info = _fast_rate_candidates(
                r_hat, estimates["pair_mi"], estimates["single_mi"],
                cfg.optimize_constants, cfg.c2,
            )
            values[name] = value
            comps[name] = {"estimator": "min(pair_mi, 2*single_mi)", **info}
        elif name == "variance":
            value, info = _variance_candidates(
                tables, estimates["pair_mi"], estimates["single_mi"],
                cfg.optimize_constants, cfg.c2, cfg.gamma,
            )
            values[name] = value
            comps[name] = {"estimator": "min(pair_mi, 2*single_mi)", **info}
        elif name == "interpolating":
            if r_hat == 0.0:
                values[name] = bnd.interpolating_risk(estimates["delta_mi"])
                comps[name] = {"estimator": "delta_mi"}
            else:
                comps[name] = {"skipped": f"empirical risk {r_hat} is not zero"}
        elif name in ("sgld-trajectory", "maml-trajectory"):
            traj_values = [r.trajectory_bound for r in ok if r.trajectory_bound is not None]
            if not traj_values:
                raise ValueError(
                    f"{name} selected but no run captured gradient samples "
                    "(is the parameter dimension above the capture guard?)"
                )
            values[name] = float(np.mean(traj_values))
            comps[name] = {"estimator": "trajectory-covariance", "runs": len(traj_values)}

    report = bnd.BoundReport(
        bounds=values,
        components=comps,
        empirical_risk=r_hat,
        test_risk=test_risk,
        empirical_gap=gap,
        gap_std_err=se,
        failed_runs=failed,
        total_runs=len(records),
        meta={
            "config_hash": cfg.config_hash(),
            "n": cfg.n,
            "m": cfg.m,
            "t1": cfg.t1,
            "t2": cfg.t2,
            "trainer": cfg.trainer,
            "task_mode": cfg.task_mode,
            "master_seed": cfg.master_seed,
            "mi_means": {kind: est.mean() for kind, est in estimates.items()},
        },
    )
    return report


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None):
    """Execute the full protocol and write CSV, loss tables and a JSON report.

    Returns (report, paths) where paths maps artifact names to files.
    """
    env = build_environment(cfg)
    supersamples = [
        build_supersample(env, cfg.n, cfg.m, _gen(mix64(cfg.master_seed, _SUPERSAMPLE_STREAM, t1)))
        for t1 in range(cfg.t1)
    ]
    grid = [(t1, t2) for t1 in range(cfg.t1) for t2 in range(cfg.t2)]
    results: dict[tuple[int, int], RunRecord] = {}
    jobs = max(1, cfg.jobs)
    if jobs == 1:
        for t1, t2 in grid:
            results[(t1, t2)] = _single_run(cfg, supersamples[t1], t1, t2)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_single_run, cfg, supersamples[t1], t1, t2): (t1, t2)
                for t1, t2 in grid
            }
            for fut in concurrent.futures.as_completed(futures):
                results[futures[fut]] = fut.result()
    records = [results[key] for key in sorted(results)]
    report = evaluate_bounds(cfg, records)

    target = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(target, exist_ok=True)
    paths = {
        "csv": os.path.join(target, "results.csv"),
        "tables": os.path.join(target, "loss_tables.txt"),
        "report": os.path.join(target, "report.json"),
    }
    write_csv(report, paths["csv"])
    write_loss_tables(records, paths["tables"])
    with open(paths["report"], "w", encoding="utf-8") as fh:
        json.dump(_report_payload(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report, paths


def _report_payload(report: bnd.BoundReport) -> dict:
    return {
        "bounds": report.bounds,
        "components": report.components,
        "empirical_risk": report.empirical_risk,
        "test_risk": report.test_risk,
        "empirical_gap": report.empirical_gap,
        "gap_std_err": report.gap_std_err,
        "failed_runs": report.failed_runs,
        "total_runs": report.total_runs,
        "meta": report.meta,
    }


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_csv(report: bnd.BoundReport, path: str) -> None:
    """One row per bound, fixed column order, floats at 9 significant digits."""
    meta = report.meta
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for name in report.bounds:
        writer.writerow(
            [
                meta.get("config_hash", ""),
                meta.get("n", ""),
                meta.get("m", ""),
                meta.get("t1", ""),
                meta.get("t2", ""),
                meta.get("trainer", ""),
                name,
                _fmt(report.bounds[name]),
                _fmt(report.empirical_risk),
                _fmt(report.empirical_gap),
                _fmt(report.gap_std_err),
                report.failed_runs,
            ]
        )
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_loss_tables(records, path: str) -> None:
    """Archive every run's cells: one line per (run, i, j) with masks and quad."""
    ok = [r for r in records if not r.failed]
    if not ok:
        raise ValueError("no successful runs to archive")
    n, m = ok[0].table.n, ok[0].table.m
    lines = ["# columns: t1 t2 i j s_tilde_i s_j l00 l11 l10 l01", f"# n={n} m={m}"]
    for rec in records:
        if rec.failed:
            lines.append(f"# failed: t1={rec.t1_index} t2={rec.t2_index}")
            continue
        table = rec.table
        for i in range(n):
            for j in range(m):
                quad = table.quad(i, j)
                lines.append(
                    f"{rec.t1_index} {rec.t2_index} {i} {j} "
                    f"{int(table.masks.s_tilde[i])} {int(table.masks.s[j])} "
                    f"{_fmt(float(quad.l00))} {_fmt(float(quad.l11))} "
                    f"{_fmt(float(quad.l10))} {_fmt(float(quad.l01))}"
                )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_loss_tables(path: str) -> list[LossTable]:
    """Rebuild LossTables from the archive; inverse of write_loss_tables."""
    cells: dict[tuple[int, int], dict] = {}
    shape = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("# n="):
                parts = dict(p.split("=") for p in line[2:].split())
                shape = (int(parts["n"]), int(parts["m"]))
            if not line or line.startswith("#"):
                continue
            t1, t2, i, j, st_i, s_j = (int(v) for v in line.split()[:6])
            l00, l11, l10, l01 = (float(v) for v in line.split()[6:])
            entry = cells.setdefault((t1, t2), {"masks_st": {}, "masks_s": {}, "quads": {}})
            entry["masks_st"][i] = st_i
            entry["masks_s"][j] = s_j
            entry["quads"][(i, j)] = (l00, l11, l10, l01)
    if shape is None:
        raise ValueError(f"{path} has no shape header")
    n, m = shape
    tables = []
    for run_id, ((t1, t2), entry) in enumerate(sorted(cells.items())):
        losses = np.empty((n, 2, m, 2))
        s_tilde = np.array([entry["masks_st"][i] for i in range(n)])
        s = np.array([entry["masks_s"][j] for j in range(m)])
        for (i, j), (l00, l11, l10, l01) in entry["quads"].items():
            losses[i, 0, j, 0] = l00
            losses[i, 1, j, 1] = l11
            losses[i, 1, j, 0] = l10
            losses[i, 0, j, 1] = l01
        tables.append(
            LossTable(
                run_id=run_id,
                t1_index=t1,
                t2_index=t2,
                losses=losses,
                masks=MembershipVectors(s_tilde, s),
            )
        )
    return tables
