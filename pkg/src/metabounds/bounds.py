"""Generalization-bound formulas over estimated MI cells and loss tables.

All bounds take per-cell mutual-information estimates (nats) and return a
bound on the meta-generalization gap.  The fast-rate family additionally
needs a constant pair (C1, C2) whose admissible region depends on which
variant of the constants is in force; the proof-consistent variant is the
default and is never looser than what the derivations support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .infotheory import LOG2, invert_kl_risk

CELL_KINDS = ("delta_mi", "delta_cmi", "pair_mi", "single_mi", "quad_mi", "quad_cmi")
_QUAD_KINDS = ("quad_mi", "quad_cmi")
_CAP_SLACK = 1e-9


@dataclass
class MiCellEstimates:
    """An n x m table of per-cell MI estimates of one kind, in nats."""

    n: int
    m: int
    values: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n, self.m):
            raise ValueError("values must be an (n, m) table")
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if np.any(self.values < -_CAP_SLACK):
            raise ValueError("negative cell value")
        self.values = np.maximum(self.values, 0.0)
        cap = 2 * LOG2 if self.kind in _QUAD_KINDS else LOG2
        if np.any(self.values > cap + _CAP_SLACK):
            raise ValueError(f"cell value exceeds the {self.kind} cap of {cap:.6f} nats")

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class BoundParams:
    """Constants shared by the bound formulas.

    ``sigma`` is the sub-gaussian scale used by the generic square-root
    combinator (1/2 for losses in [0,1]); ``zeta``/``xi`` are the subset
    sizes it divides by.  ``c1``/``c2``/``gamma`` drive the fast-rate family,
    with ``variant`` choosing between the stated and the proof-backed
    constants and ``family`` between the paired-loss and the hypothesis-CMI
    admissible regions.
    """

    sigma: float = 0.5
    c1: float | None = None
    c2: float = 0.3
    gamma: float = 0.5
    zeta: int = 1
    xi: int = 1
    variant: str = "proof"
    family: str = "loss_pair"

    def resolved_c1(self) -> float:
        if self.c1 is not None:
            return self.c1
        return fast_rate_constants(self.c2, self.variant, self.family)


@dataclass
class BoundReport:
    """Named bound values with their ingredients and the measured gap."""

    bounds: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)
    empirical_risk: float = 0.0
    test_risk: float = 0.0
    empirical_gap: float = 0.0
    gap_std_err: float = 0.0
    failed_runs: int = 0
    total_runs: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in self.bounds.items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"bound {name!r} is not a finite nonnegative value")


def sqrt_mi_bound(cells: MiCellEstimates, scale: float = 2.0) -> float:
    """(1/nm) * sum sqrt(scale * I_ij).

    ``scale=2`` is the loss-difference / loss-tuple square-root bound; with
    ``scale = 2*sigma^2/(zeta*xi)`` and a single aggregate cell it doubles as
    the generic sub-gaussian input-output MI combinator.
    """
    if np.any(cells.values < 0):
        raise ValueError("negative cell value")
    if scale < 0:
        raise ValueError("scale must be >= 0")
    return float(np.sqrt(scale * cells.values).mean())


def kl_inversion_bound(p_hat: float, cells: MiCellEstimates) -> tuple[float, float]:
    """Invert d(p_hat || (p_hat + R)/2) <= mean(I_ij) for the risk bound R.

    Returns (risk_upper, gap_upper = risk_upper - p_hat).
    """
    c = cells.mean()
    risk_upper = invert_kl_risk(p_hat, c)
    return risk_upper, risk_upper - p_hat


def fast_rate_constants(c2: float, variant: str = "proof", family: str = "loss_pair") -> float:
    """Smallest admissible C1 for a given C2.

    loss_pair family (paired/single loss MI): the stated constant is
    -log(2 - e^C2)/(2 C2) - 1 while the derivation actually needs
    -log(2 - e^{2 C2})/(2 C2) - 1; both require 0 < C2 < log(2)/2.  The
    "proof" variant is the safe default.

    hypothesis_cmi family: -log(2 - e^C2)/C2 - 1 on 0 < C2 < log(2),
    identical for both variants.
    """
    if family == "loss_pair":
        if not 0.0 < c2 < LOG2 / 2:
            raise ValueError(f"C2={c2} outside (0, log(2)/2) for the loss_pair family")
        if variant == "statement":
            return -math.log(2.0 - math.exp(c2)) / (2.0 * c2) - 1.0
        if variant == "proof":
            return -math.log(2.0 - math.exp(2.0 * c2)) / (2.0 * c2) - 1.0
        raise ValueError(f"unknown variant {variant!r}")
    if family == "hypothesis_cmi":
        if not 0.0 < c2 < LOG2:
            raise ValueError(f"C2={c2} outside (0, log(2)) for the hypothesis_cmi family")
        if variant not in ("statement", "proof"):
            raise ValueError(f"unknown variant {variant!r}")
        return -math.log(2.0 - math.exp(c2)) / c2 - 1.0
    raise ValueError(f"unknown family {family!r}")


def _min_terms(pair_cells: MiCellEstimates, single_cells: MiCellEstimates) -> np.ndarray:
    if pair_cells.values.shape != single_cells.values.shape:
        raise ValueError("pair and single cell tables must share a shape")
    return np.minimum(pair_cells.values, 2.0 * single_cells.values)


def fast_rate_bound(
    r_hat: float,
    params: BoundParams,
    pair_cells: MiCellEstimates,
    single_cells: MiCellEstimates,
    interpolating: bool = False,
) -> float:
    """C1 * R_hat + (1/nm) * sum min{I_pair, 2 I_single} / C2.

    With ``interpolating=True`` (valid only at R_hat = 0) the constant-free
    cap applies instead: (1/nm) * sum 2*min{...}/log 2 for the loss_pair
    family, and min-term/log 2 for the hypothesis_cmi family.
    """
    mins = _min_terms(pair_cells, single_cells)
    if interpolating:
        if r_hat != 0.0:
            raise ValueError("interpolating mode requires R_hat = 0")
        if params.family == "hypothesis_cmi":
            return float(mins.mean() / LOG2)
        return float(2.0 * mins.mean() / LOG2)
    c1 = params.resolved_c1()
    c1_min = fast_rate_constants(params.c2, params.variant, params.family)
    if c1 < c1_min - 1e-12:
        raise ValueError(
            f"C1={c1} violates C1 >= {c1_min} for C2={params.c2} "
            f"({params.variant} variant, {params.family} family)"
        )
    return float(c1 * r_hat + mins.mean() / params.c2)


def gamma_variance(tables, gamma: float) -> float:
    """Mean over runs of (1/nm) * sum (train loss - (1+gamma) * run risk)^2.

    For binary losses this equals R_hat - (1 - gamma^2) * mean(run risk^2).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    tables = list(tables)
    if not tables:
        raise ValueError("empty run set")
    per_run = []
    for table in tables:
        train = table.train_losses()
        r_run = train.mean()
        per_run.append(((train - (1.0 + gamma) * r_run) ** 2).mean())
    return float(np.mean(per_run))


def variance_c1_min(
    c2: float, gamma: float, variant: str = "proof", family: str = "loss_pair"
) -> float:
    """Admissible C1 floor for the variance bound: the fast-rate floor / gamma^2."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return fast_rate_constants(c2, variant, family) / gamma**2


def variance_fast_rate_bound(
    v: float,
    params: BoundParams,
    pair_cells: MiCellEstimates,
    single_cells: MiCellEstimates,
) -> float:
    """C1 * V(gamma) + (1/nm) * sum min{I_pair, 2 I_single} / C2."""
    if v < 0:
        raise ValueError("variance must be >= 0")
    mins = _min_terms(pair_cells, single_cells)
    c1_min = variance_c1_min(params.c2, params.gamma, params.variant, params.family)
    c1 = params.c1 if params.c1 is not None else c1_min
    if c1 < c1_min - 1e-12:
        raise ValueError(
            f"C1={c1} violates C1 >= {c1_min} for C2={params.c2}, "
            f"gamma={params.gamma} ({params.variant} variant)"
        )
    return float(c1 * v + mins.mean() / params.c2)


def interpolating_risk(delta_cells: MiCellEstimates) -> float:
    """(1/nm) * sum I(delta; S) / log 2; exact for interpolating binary losses."""
    return float(delta_cells.values.mean() / LOG2)


def logdet_psd(mat: np.ndarray) -> float:
    """log-determinant of a symmetric positive-definite matrix via Cholesky."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("need a square matrix")
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Cholesky factorization failed: matrix is not positive definite") from exc
    return float(2.0 * np.log(np.diag(chol)).sum())


def sample_covariance(samples: np.ndarray) -> np.ndarray:
    """Unbiased empirical covariance of row-stacked sample vectors."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least two stacked sample vectors")
    centered = samples - samples.mean(axis=0, keepdims=True)
    return centered.T @ centered / (samples.shape[0] - 1)


def _step_logdet(step_size: float, noise_scale: float, samples: np.ndarray) -> float:
    if noise_scale <= 0:
        raise ValueError("noise scale must be positive for trajectory bounds")
    cov = sample_covariance(samples)
    dim = cov.shape[0]
    ratio = step_size**2 / noise_scale**2
    return logdet_psd(ratio * cov + np.eye(dim))


def sgld_trajectory_bound(traj, n: int, m: int) -> float:
    """Gradient-covariance trajectory bound for the joint noisy meta-learner.

    (1/sqrt(nm)) * sqrt( sum_t 0.5 * logdet( (eta_t^2/sigma_t^2) Cov_t + I ) )
    where Cov_t comes from the recorded per-step gradient resamples.
    """
    total = 0.0
    for t, step in enumerate(traj.steps):
        if step.grad_samples is None:
            raise ValueError(f"step {t} carries no gradient samples")
        total += 0.5 * _step_logdet(step.step_size, step.noise_scale, step.grad_samples)
    return math.sqrt(max(total, 0.0)) / math.sqrt(n * m)


def maml_trajectory_bound(traj, n: int, m_te: int) -> float:
    """Trajectory bound for the split-data meta-learner.

    (1/sqrt(n*m_te)) * sqrt( sum_t logdet((beta_t^2/sigma_t^2) Cov_tr + I)
                                   + logdet((eta_t^2/sigma_t^2) Cov_te + I) ).
    """
    total = 0.0
    for t, step in enumerate(traj.steps):
        if step.grad_samples is None or step.inner_grad_samples is None:
            raise ValueError(f"step {t} carries no gradient samples")
        if step.inner_step_size is None:
            raise ValueError(f"step {t} has no inner step size")
        outer_dim = step.grad_samples.shape[1]
        inner_dim = step.inner_grad_samples.shape[1]
        if inner_dim % outer_dim != 0:
            raise ValueError(
                f"step {t}: inner block dim {inner_dim} is not a multiple of {outer_dim}"
            )
        total += _step_logdet(step.inner_step_size, step.noise_scale, step.inner_grad_samples)
        total += _step_logdet(step.step_size, step.noise_scale, step.grad_samples)
    return math.sqrt(max(total, 0.0)) / math.sqrt(n * m_te)
