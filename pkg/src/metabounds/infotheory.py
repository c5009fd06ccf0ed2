"""Discrete information measures on empirical counts.

Everything here is a plug-in (maximum-likelihood) estimate over small finite
supports, in nats.  The 0*log(0) = 0 convention is applied throughout, and
zero-count symbols are dropped when building supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG2 = math.log(2.0)


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy_from_counts(counts: np.ndarray) -> float:
    """Entropy in nats of the empirical distribution given by ``counts``."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty count table")
    p = counts.ravel() / total
    return float(-_xlogx(p).sum())


@dataclass
class DiscreteJoint:
    """Empirical joint law of a symbol pair, as a |X| x |Y| count table."""

    support_x: tuple
    support_y: tuple
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.support_x = tuple(self.support_x)
        self.support_y = tuple(self.support_y)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(self.support_x), len(self.support_y)):
            raise ValueError("count table shape does not match supports")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")
        if self.counts.sum() <= 0:
            raise ValueError("empty joint")

    @classmethod
    def from_samples(cls, xs, ys) -> "DiscreteJoint":
        """Tabulate paired observations; unseen symbols do not enter the support."""
        xs = list(xs)
        ys = list(ys)
        if len(xs) != len(ys):
            raise ValueError("xs and ys must have equal length")
        sx = sorted(set(xs))
        sy = sorted(set(ys))
        ix = {s: k for k, s in enumerate(sx)}
        iy = {s: k for k, s in enumerate(sy)}
        counts = np.zeros((len(sx), len(sy)), dtype=np.int64)
        for x, y in zip(xs, ys):
            counts[ix[x], iy[y]] += 1
        return cls(tuple(sx), tuple(sy), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pmf(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def marginal_x(self) -> np.ndarray:
        return self.pmf().sum(axis=1)

    def marginal_y(self) -> np.ndarray:
        return self.pmf().sum(axis=0)


@dataclass
class GroupedJoint:
    """One joint per conditioning key (here: one per supersample draw)."""

    groups: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.groups:
            raise ValueError("no groups")


def plugin_mi(joint: DiscreteJoint, miller_madow: bool = False) -> float:
    """Plug-in mutual information of ``joint``, in nats.

    Computed in the KL form sum p(x,y) log(p(x,y)/(p(x)p(y))).  With
    ``miller_madow`` the three entropies get the (K-1)/(2N) bias correction
    before being recombined; this is off by default so that reported numbers
    are estimator-unambiguous.
    """
    p = joint.pmf()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mask = p > 0
    outer = np.outer(px, py)
    mi = float((p[mask] * np.log(p[mask] / outer[mask])).sum())
    if miller_madow:
        n = joint.total
        kx = int((px > 0).sum())
        ky = int((py > 0).sum())
        kxy = int(mask.sum())
        mi += ((kx - 1) + (ky - 1) - (kxy - 1)) / (2.0 * n)
    return max(mi, 0.0)


def mi_entropy_form(joint: DiscreteJoint) -> float:
    """H(X) + H(Y) - H(X,Y); the second route for cross-checking plugin_mi."""
    p = joint.pmf()
    hx = float(-_xlogx(p.sum(axis=1)).sum())
    hy = float(-_xlogx(p.sum(axis=0)).sum())
    hxy = float(-_xlogx(p.ravel()).sum())
    return hx + hy - hxy


def conditional_plugin_mi(
    gj: GroupedJoint, miller_madow: bool = False
) -> tuple[float, dict]:
    """Unweighted mean of per-group plug-in MI, plus the per-group values."""
    per_group = {key: plugin_mi(j, miller_madow) for key, j in gj.groups.items()}
    return float(np.mean(list(per_group.values()))), per_group


def binary_kl(p: float, q: float) -> float:
    """Relative entropy d(p||q) between Bernoulli(p) and Bernoulli(q), nats.

    Returns inf when q is 0 or 1 while the corresponding p-mass does not
    vanish.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be a probability")
    val = 0.0
    if p > 0.0:
        if q == 0.0:
            return math.inf
        val += p * math.log(p / q)
    if p < 1.0:
        if q == 1.0:
            return math.inf
        val += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return val


def d_gamma(p: float, q: float, gamma: float) -> float:
    """Linear relaxation gamma*p - log(1 - q + q*e^gamma); sup over gamma is d(p||q).

    Finite for every finite gamma; the q = 1 endpoint reduces to gamma*(p - 1)
    exactly (log1p would round through -1 there for very negative gamma).
    """
    if q == 1.0:
        return gamma * p - gamma
    return gamma * p - math.log1p(q * math.expm1(gamma))


def invert_kl_risk(p_hat: float, c: float, tol: float = 1e-10) -> float:
    """Largest R in [p_hat, 1] with d(p_hat || (p_hat+R)/2) <= c.

    The map R -> d(p_hat || (p_hat+R)/2) is nondecreasing on [p_hat, 1], so a
    bisection to absolute tolerance ``tol`` recovers the crossing point.
    Returns 1.0 when even R = 1 satisfies the inequality.
    """
    if c < 0:
        raise ValueError("divergence budget must be >= 0")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError("p_hat must be a probability")
    if c == 0.0:
        return p_hat  # zero divergence forces R = p_hat exactly
    if binary_kl(p_hat, (p_hat + 1.0) / 2.0) <= c:
        return 1.0
    lo, hi = p_hat, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_kl(p_hat, (p_hat + mid) / 2.0) <= c:
            lo = mid
        else:
            hi = mid
    return lo


def interaction_information(counts3: np.ndarray) -> float:
    """2*I(X;S) - I((X,Y);S) from a |X| x |Y| x |S| count table.

    X plays the role of the selected loss, Y its partner, S the mask bit.
    The value may be negative (synergy), e.g. for XOR-structured triples.
    """
    counts3 = np.asarray(counts3, dtype=np.int64)
    if counts3.ndim != 3:
        raise ValueError("expected a 3-d count table")
    nx, ny, ns = counts3.shape
    single = DiscreteJoint(tuple(range(nx)), tuple(range(ns)), counts3.sum(axis=1))
    pair = DiscreteJoint(
        tuple(range(nx * ny)), tuple(range(ns)), counts3.reshape(nx * ny, ns)
    )
    return 2.0 * plugin_mi(single) - plugin_mi(pair)
