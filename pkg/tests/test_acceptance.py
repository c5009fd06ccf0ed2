"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Tolerances are fixed here, not configurable.
"""

import math
import struct
import time

import numpy as np
import pytest

from metabounds import bounds as bnd
from metabounds import harness, infotheory, model, tasks
from metabounds.cli import cli_main
from metabounds.harness import ExperimentConfig, estimate_mi_cells, run_experiment
from metabounds.infotheory import DiscreteJoint, binary_kl, invert_kl_risk, plugin_mi
from metabounds.metalearn import TrajectoryStep, GradientTrajectory
from metabounds.supersample import loss_pair_delta

LOG2 = math.log(2.0)


def report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {status} {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num} failed: {name} {detail}"


# ---------------------------------------------------------------- criterion 1


def test_criterion_01_gradient_fidelity():
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for _ in range(20):
        width = int(rng.integers(4, 33))
        dim = int(rng.integers(2, 9))
        bsz = int(rng.integers(1, 9))
        params = model.init_mlp(dim, 2, hidden=width, layers=4, rng=rng)
        batch = model.Batch(rng.standard_normal((bsz, dim)), rng.integers(0, 2, bsz))
        worst = max(worst, model.grad_check(params, batch, eps=1e-5))
    elapsed = time.time() - t0
    report(
        1,
        "gradient fidelity",
        worst <= 1e-5 and elapsed < 10.0,
        f"max rel err {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------- criterion 2


def test_criterion_02_mi_oracle_equivalence():
    rng = np.random.default_rng(202)
    worst = 0.0
    in_range = True
    for _ in range(100):
        nx = int(rng.integers(2, 7))
        ny = int(rng.integers(2, 5))
        counts = rng.integers(0, 25, size=(nx, ny))
        if counts.sum() == 0:
            counts[0, 0] = 1
        joint = DiscreteJoint(tuple(range(nx)), tuple(range(ny)), counts)
        kl_form = plugin_mi(joint)
        ent_form = infotheory.mi_entropy_form(joint)
        worst = max(worst, abs(kl_form - ent_form))
        hx = infotheory.entropy_from_counts(counts.sum(axis=1))
        hy = infotheory.entropy_from_counts(counts.sum(axis=0))
        in_range &= -1e-15 <= kl_form <= min(hx, hy) + 1e-12
    report(2, "MI oracle equivalence", worst < 1e-12 and in_range, f"max |diff| {worst:.2e}")


# ------------------------------------------------------- criteria 3 and 4


def sweep_configs():
    """50 tiny configurations spanning trainers, modes and shapes."""
    cfgs = []
    for k in range(50):
        trainer = "joint-sgld" if k % 2 == 0 else "noisy-maml"
        mode = "one-vs-rest" if k % 3 == 0 else "class-pair"
        m = 3 + (k % 2)
        cfgs.append(
            ExperimentConfig(
                env_kind="gaussian",
                env_classes=4 + (k % 3),
                env_dim=4,
                env_std=0.25,
                task_mode=mode,
                n=2,
                m=m,
                t1=2,
                t2=2,
                trainer=trainer,
                iterations=3 + (k % 3),
                step_size=0.3,
                noise=0.005 * (k % 2),
                sample_batch=2,
                inner_step_size=0.3,
                split_train=m // 2,
                hidden=8,
                layers=2,
                adapt_steps=2,
                adapt_step_size=0.3,
                bounds=("sqrt-delta",),
                master_seed=9000 + k,
            )
        )
    return cfgs


@pytest.fixture(scope="module")
def sweep_records():
    out = []
    for cfg in sweep_configs():
        env = harness.build_environment(cfg)
        records = []
        for t1 in range(cfg.t1):
            ss = harness.build_supersample(
                env, cfg.n, cfg.m,
                harness._gen(harness.mix64(cfg.master_seed, harness._SUPERSAMPLE_STREAM, t1)),
            )
            for t2 in range(cfg.t2):
                records.append(harness._single_run(cfg, ss, t1, t2))
        out.append((cfg, records))
    return out


def test_criterion_03_empirical_dpi_suite(sweep_records):
    violations = 0
    checked = 0
    for cfg, records in sweep_records:
        tables = [r.table for r in records if not r.failed]
        est = estimate_mi_cells(tables, cfg.n, cfg.m)
        if np.any(est["delta_mi"].values > est["pair_mi"].values + 1e-12):
            violations += 1
        if np.any(est["quad_mi"].values > 2 * LOG2 + 1e-12):
            violations += 1
        checked += 1
    report(3, "empirical DPI suite", checked == 50 and violations == 0,
           f"{checked} configs, {violations} violations")


def test_criterion_04_gap_identity(sweep_records):
    bad = 0
    cells = 0
    for cfg, records in sweep_records:
        for rec in records:
            if rec.failed:
                continue
            table = rec.table
            diff = table.test_losses() - table.train_losses()
            for i in range(cfg.n):
                for j in range(cfg.m):
                    st_i = int(table.masks.s_tilde[i])
                    s_j = int(table.masks.s[j])
                    _, _, delta = loss_pair_delta(table.quad(i, j), st_i, s_j)
                    if diff[i, j] != (-1.0) ** s_j * delta:
                        bad += 1
                    cells += 1
    report(4, "gap identity", bad == 0 and cells > 0, f"{cells} cells, {bad} mismatches")


# ---------------------------------------------------------------- criterion 5


def test_criterion_05_interpolating_identity():
    ok = True
    details = []
    for alpha in (0.1, 0.25, 0.5):
        scale = 1000
        a = int(round(alpha * scale))
        counts = np.array([[0, a], [scale - a, scale - a], [a, 0]])
        delta_joint = DiscreteJoint((-1, 0, 1), (0, 1), counts)
        pair_joint = DiscreteJoint(((0, 1), (0, 0), (1, 0)), (0, 1), counts)
        mi_delta = plugin_mi(delta_joint)
        mi_pair = plugin_mi(pair_joint)
        cells = bnd.MiCellEstimates(n=1, m=1, values=np.array([[mi_delta]]), kind="delta_mi")
        risk = bnd.interpolating_risk(cells)
        ok &= abs(risk - alpha) <= 1e-12
        ok &= mi_delta == mi_pair
        details.append(f"alpha={alpha}: risk err {abs(risk - alpha):.1e}")
    report(5, "interpolating identity", ok, "; ".join(details))


# ---------------------------------------------------------------- criterion 6


def test_criterion_06_kl_inversion_round_trip():
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(1000):
        p = float(rng.uniform(0.0, 0.95))
        q = float(rng.uniform(p + 1e-9, 1.0))
        c = binary_kl(p, (p + q) / 2.0)
        worst = max(worst, abs(invert_kl_risk(p, c) - q))
    report(6, "KL inversion round-trip", worst <= 1e-9, f"max |R - q| {worst:.2e}")


# ---------------------------------------------------------------- criterion 7


def test_criterion_07_gamma_variance_identity():
    rng = np.random.default_rng(707)
    from metabounds.supersample import LossTable, MembershipVectors

    tables = []
    for r in range(12):
        n, m = 2, 3
        mv = MembershipVectors(rng.integers(0, 2, n), rng.integers(0, 2, m))
        losses = rng.integers(0, 2, size=(n, 2, m, 2)).astype(float)
        tables.append(LossTable(run_id=r, t1_index=0, t2_index=r, losses=losses, masks=mv))
    risks = np.array([t.train_risk() for t in tables])
    worst = 0.0
    for gamma in (0.1, 0.5, 0.9):
        got = bnd.gamma_variance(tables, gamma)
        want = risks.mean() - (1 - gamma**2) * (risks**2).mean()
        worst = max(worst, abs(got - want))
    report(7, "gamma-variance identity", worst <= 1e-12, f"max |diff| {worst:.2e}")


# ---------------------------------------------------------------- criterion 8


def trend_config(n, m):
    return ExperimentConfig(
        env_kind="gaussian",
        env_classes=16,
        env_dim=8,
        env_std=0.25,
        task_mode="one-vs-rest",
        n=n,
        m=m,
        t1=5,
        t2=10,
        trainer="joint-sgld",
        iterations=30,
        step_size=0.4,
        noise=0.01,
        sample_batch=5,
        hidden=16,
        layers=4,
        adapt_steps=10,
        adapt_step_size=0.4,
        bounds=("sqrt-delta", "kl-quad", "fast-rate", "variance"),
        master_seed=20240601,
        jobs=2,
    )


def test_criterion_08_figure_trend_reproduction(tmp_path):
    t0 = time.time()
    results = {}
    for n in (2, 3):
        for m in (10, 20, 40, 80):
            cfg = trend_config(n, m)
            rep, _ = run_experiment(cfg, out_dir=str(tmp_path / f"n{n}m{m}"))
            results[(n, m)] = rep
    elapsed = time.time() - t0

    bound_names = ("sqrt-delta", "kl-quad", "fast-rate", "variance")

    # (a) each bound non-increasing in m, up to one MC-noise inversion
    inversions_ok = True
    for n in (2, 3):
        for name in bound_names:
            series = [results[(n, m)].bounds[name] for m in (10, 20, 40, 80)]
            inversions = sum(1 for a, b in zip(series, series[1:]) if b > a + 1e-12)
            if inversions > 1:
                inversions_ok = False

    # (b) bounds dominate the measured gap up to 2 standard errors
    dominated = 0
    for rep in results.values():
        floor = abs(rep.empirical_gap) - 2.0 * rep.gap_std_err
        if all(v >= floor for v in rep.bounds.values()):
            dominated += 1
    domination_ok = dominated / len(results) >= 0.95

    # (c) fast-rate family tightest whenever the empirical risk is small:
    # both fast-rate bounds sit below every other reported bound
    small_risk = [rep for rep in results.values() if rep.empirical_risk <= 0.05]
    tight = 0
    for rep in small_risk:
        fast_family = max(rep.bounds["fast-rate"], rep.bounds["variance"])
        others = min(v for k, v in rep.bounds.items() if k not in ("fast-rate", "variance"))
        if fast_family <= others + 1e-12:
            tight += 1
    tightest_ok = (not small_risk) or tight / len(small_risk) >= 0.90

    runtime_ok = elapsed <= 15 * 60
    report(
        8,
        "figure trend reproduction",
        inversions_ok and domination_ok and tightest_ok and runtime_ok,
        f"dominated {dominated}/{len(results)}, tight {tight}/{len(small_risk)}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------- criterion 9


def test_criterion_09_trajectory_bound_numerics():
    rng = np.random.default_rng(909)
    worst = 0.0
    block_ok = True
    for _ in range(100):
        d = int(rng.integers(2, 21))
        a = rng.standard_normal((d, d))
        spd = a @ a.T + d * np.eye(d)
        chol = bnd.logdet_psd(spd)
        eig = float(np.sum(np.log(np.linalg.eigvalsh(spd))))
        worst = max(worst, abs(chol - eig))
        k = int(rng.integers(1, d))
        if chol > bnd.logdet_psd(spd[:k, :k]) + bnd.logdet_psd(spd[k:, k:]) + 1e-10:
            block_ok = False

    samples = np.random.default_rng(1).standard_normal((12, 4))
    values = []
    for factor in (1.0, 2.0, 4.0):
        traj = GradientTrajectory(
            "joint", 4, True,
            [TrajectoryStep(0.3, 0.1 * factor, (0,), grad_samples=samples)],
        )
        values.append(bnd.sgld_trajectory_bound(traj, 2, 3))
    monotone_ok = values[0] >= values[1] >= values[2]

    report(
        9,
        "trajectory-bound numerics",
        worst <= 1e-8 and block_ok and monotone_ok,
        f"max logdet err {worst:.2e}, sigma ladder {['%.4f' % v for v in values]}",
    )


# --------------------------------------------------------------- criterion 10


def test_criterion_10_determinism_across_jobs(tmp_path):
    import os

    smoke = os.path.join(os.path.dirname(__file__), "..", "configs", "smoke.cfg")
    blobs = []
    for jobs in (1, 2, 8):
        out = tmp_path / f"jobs{jobs}"
        code = cli_main(
            ["run", "--config", smoke, "--out", str(out), "--jobs", str(jobs), "--seed", "424242"]
        )
        assert code == 0
        blobs.append((out / "results.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    report(10, "determinism across jobs", ok, f"{len(blobs[0])} CSV bytes")


# --------------------------------------------------------------- criterion 11


def test_criterion_11_idx_ingestion():
    def stream(magic, dims, payload):
        head = struct.pack(">I", magic) + b"".join(struct.pack(">i", d) for d in dims)
        return head + bytes(payload)

    ok = True
    arr = tasks.parse_idx(stream(0x00000803, (1, 1, 1), [0x7F]))
    ok &= arr.shape == (1, 1, 1) and arr[0, 0, 0] == 127
    labels = tasks.parse_idx(stream(0x00000801, (3,), [9, 8, 7]))
    ok &= list(labels) == [9, 8, 7]

    raised = []
    for bad, exc in (
        (stream(0x12345678, (1,), [0]), tasks.IdxMagicError),
        (stream(0x00000801, (10,), [0, 1, 2, 3, 4]), tasks.IdxTruncationError),
        (stream(0x00000803, (2**20, 2**20, 2**20), []), tasks.IdxDimensionError),
    ):
        try:
            tasks.parse_idx(bad)
        except exc:
            raised.append(exc.__name__)
        except Exception as other:  # pragma: no cover
            raised.append(f"wrong:{type(other).__name__}")
    ok &= len(raised) == 3 and len(set(raised)) == 3 and not any(
        r.startswith("wrong") for r in raised
    )
    report(11, "IDX ingestion", ok, ", ".join(raised))
