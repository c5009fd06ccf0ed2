"""Meta-supersample construction, membership bits, partitions and loss tables.

The supersample holds 2n tasks arranged as n task-pairs, each with 2m samples
arranged as m sample-pairs.  A cell address is (i, task_slot, j, sample_slot)
with slots in {0, 1}.  Membership bits pick one slot per pair: the selected
cells form the meta-training set; the complementary slots form the meta-test
set; the two mixed combinations give the held-out task's training data and
the training tasks' test data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DivergenceError


@dataclass(frozen=True)
class LabeledExample:
    """One feature vector with its class index."""

    features: np.ndarray
    label: int


@dataclass
class SuperSample:
    """The full 2n x 2m data tensor plus its task descriptors.

    ``features`` has shape (n, 2, m, 2, dim) and ``labels`` (n, 2, m, 2);
    ``tasks`` holds the 2n task descriptors, indexed [2*i + task_slot].
    """

    n: int
    m: int
    features: np.ndarray
    labels: np.ndarray
    tasks: tuple

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError("need n, m >= 1")
        if self.features.shape[:4] != (self.n, 2, self.m, 2) or self.features.ndim != 5:
            raise ValueError("features must have shape (n, 2, m, 2, dim)")
        if self.labels.shape != (self.n, 2, self.m, 2):
            raise ValueError("labels must have shape (n, 2, m, 2)")
        if len(self.tasks) != 2 * self.n:
            raise ValueError("need exactly 2n task descriptors")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if np.any(self.labels < 0):
            raise ValueError("negative label")

    @property
    def dim(self) -> int:
        return self.features.shape[-1]

    def cell(self, i: int, task_slot: int, j: int, sample_slot: int) -> LabeledExample:
        return LabeledExample(
            self.features[i, task_slot, j, sample_slot],
            int(self.labels[i, task_slot, j, sample_slot]),
        )


@dataclass(frozen=True)
class MembershipVectors:
    """The n task bits and m sample bits that carve the four partitions."""

    s_tilde: np.ndarray  # (n,) in {0,1}
    s: np.ndarray  # (m,) in {0,1}

    def __post_init__(self) -> None:
        for name, bits in (("s_tilde", self.s_tilde), ("s", self.s)):
            arr = np.asarray(bits)
            if arr.ndim != 1 or not np.all((arr == 0) | (arr == 1)):
                raise ValueError(f"{name} must be a 1-d array of bits")

    @property
    def n(self) -> int:
        return len(self.s_tilde)

    @property
    def m(self) -> int:
        return len(self.s)

    def s_tilde_bar(self) -> np.ndarray:
        return 1 - self.s_tilde

    def s_bar(self) -> np.ndarray:
        return 1 - self.s


@dataclass(frozen=True)
class LossQuad:
    """The four losses of one cell pair, l_ab at task slot a, sample slot b."""

    l00: float
    l11: float
    l10: float
    l01: float

    def __post_init__(self) -> None:
        for v in (self.l00, self.l11, self.l10, self.l01):
            if not 0.0 <= v <= 1.0:
                raise ValueError("losses must lie in [0, 1]")

    def at(self, task_slot: int, sample_slot: int) -> float:
        return getattr(self, f"l{task_slot}{sample_slot}")


@dataclass(frozen=True)
class TaskSplit:
    """n per-task datasets of m samples each, with their cell addresses."""

    features: np.ndarray  # (n, m, dim)
    labels: np.ndarray  # (n, m)
    cells: tuple  # n*m tuples (i, task_slot, j, sample_slot)

    def task_batch(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.features[i], self.labels[i]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Partitions:
    meta_train: TaskSplit
    meta_test: TaskSplit
    heldout_train: TaskSplit
    train_task_test: TaskSplit


@dataclass
class LossTable:
    """Per-run binary losses over all 4nm cells plus the masks that made them.

    ``losses[i, a, j, b]`` is the loss of the appropriate adapted parameters
    on cell (i, a, j, b).
    """

    run_id: int
    t1_index: int
    t2_index: int
    losses: np.ndarray  # (n, 2, m, 2)
    masks: MembershipVectors

    def __post_init__(self) -> None:
        n, m = self.masks.n, self.masks.m
        if self.losses.shape != (n, 2, m, 2):
            raise ValueError("loss tensor shape does not match the masks")
        if not np.all(np.isfinite(self.losses)):
            raise DivergenceError("non-finite loss in table")
        if np.any(self.losses < 0) or np.any(self.losses > 1):
            raise ValueError("losses must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.masks.n

    @property
    def m(self) -> int:
        return self.masks.m

    def quad(self, i: int, j: int) -> LossQuad:
        cell = self.losses[i, :, j, :]
        return LossQuad(l00=cell[0, 0], l11=cell[1, 1], l10=cell[1, 0], l01=cell[0, 1])

    def train_losses(self) -> np.ndarray:
        """(n, m) losses of the meta-training cells l_{S~_i, S_j}."""
        a = self.masks.s_tilde
        b = self.masks.s
        return self.losses[np.arange(self.n)[:, None], a[:, None], np.arange(self.m)[None, :], b[None, :]]

    def test_losses(self) -> np.ndarray:
        """(n, m) losses of the meta-test cells l_{1-S~_i, 1-S_j}."""
        a = self.masks.s_tilde_bar()
        b = self.masks.s_bar()
        return self.losses[np.arange(self.n)[:, None], a[:, None], np.arange(self.m)[None, :], b[None, :]]

    def train_risk(self) -> float:
        return float(self.train_losses().mean())

    def test_risk(self) -> float:
        return float(self.test_losses().mean())


def build_supersample(env, n: int, m: int, rng: np.random.Generator) -> SuperSample:
    """Draw 2n tasks from ``env`` and 2m i.i.d. samples per task.

    The 2m draws of a task fill its m sample-pairs in draw order.  Finite-data
    environments never reuse a sample within one supersample (they run one
    no-replacement session per call) and raise a capacity error when they
    cannot honour that.
    """
    if n < 1 or m < 1:
        raise ValueError("need n, m >= 1")
    tasks = env.draw_tasks(2 * n, rng)
    session = env.new_session()
    features = None
    labels = np.empty((n, 2, m, 2), dtype=int)
    for idx, task in enumerate(tasks):
        i, a = divmod(idx, 2)
        x, y = env.sample_examples(task, 2 * m, rng, session=session)
        if features is None:
            features = np.empty((n, 2, m, 2, x.shape[1]))
        features[i, a] = x.reshape(m, 2, -1)
        labels[i, a] = y.reshape(m, 2)
    return SuperSample(n=n, m=m, features=features, labels=labels, tasks=tuple(tasks))


def draw_memberships(n: int, m: int, rng: np.random.Generator) -> MembershipVectors:
    """n + m independent uniform bits, independent of any supersample content."""
    if n < 1 or m < 1:
        raise ValueError("need n, m >= 1")
    return MembershipVectors(
        s_tilde=rng.integers(0, 2, size=n), s=rng.integers(0, 2, size=m)
    )


def _gather(ss: SuperSample, task_slot: np.ndarray, sample_slot: np.ndarray) -> TaskSplit:
    n, m = ss.n, ss.m
    ii = np.arange(n)[:, None]
    jj = np.arange(m)[None, :]
    a = task_slot[:, None]
    b = sample_slot[None, :]
    feats = ss.features[ii, a, jj, b]
    labels = ss.labels[ii, a, jj, b]
    cells = tuple(
        (i, int(task_slot[i]), j, int(sample_slot[j]))
        for i in range(n)
        for j in range(m)
    )
    return TaskSplit(features=feats, labels=labels, cells=cells)


def select_partitions(ss: SuperSample, mv: MembershipVectors) -> Partitions:
    """The four disjoint datasets selected by the membership bits.

    meta_train takes slots (S~_i, S_j); meta_test the complementary slots;
    heldout_train is the training data of the meta-test tasks (1-S~_i, S_j);
    train_task_test is the unused test data of the training tasks.  Together
    they exhaust all 4nm cells.
    """
    if (mv.n, mv.m) != (ss.n, ss.m):
        raise ValueError("membership vectors do not match the supersample shape")
    st, s = mv.s_tilde, mv.s
    return Partitions(
        meta_train=_gather(ss, st, s),
        meta_test=_gather(ss, 1 - st, 1 - s),
        heldout_train=_gather(ss, 1 - st, s),
        train_task_test=_gather(ss, st, 1 - s),
    )


def loss_pair_delta(quad: LossQuad, s_tilde_i: int, s_j: int) -> tuple[float, float, float]:
    """Select the slot-XOR loss pair and its difference.

    With psi = s_tilde_i XOR s_j, the pair consists of the two quad entries
    whose task slot XOR sample slot equals psi; the "+" member sits at sample
    slot 1 and the "-" member at sample slot 0, i.e. l_plus = l_{(1-psi),1}
    and l_minus = l_{psi,0}.  For every mask combination the identity
    (meta-test loss - meta-train loss) = (-1)^{s_j} * delta holds exactly.
    """
    if s_tilde_i not in (0, 1) or s_j not in (0, 1):
        raise ValueError("mask bits must be 0 or 1")
    psi = s_tilde_i ^ s_j
    l_plus = quad.at(1 - psi, 1)
    l_minus = quad.at(psi, 0)
    return l_plus, l_minus, l_plus - l_minus


def fill_loss_table(
    meta_state,
    adapt,
    ss: SuperSample,
    mv: MembershipVectors,
    loss_fn,
    run_id: int = 0,
    t1_index: int = 0,
    t2_index: int = 0,
) -> LossTable:
    """Evaluate all 4nm cell losses for one trained run.

    For each task-pair i the parameters adapted on the meta-training side
    (task slot S~_i, its m slot-S_j samples) score both sample slots of that
    task; fresh parameters adapted on the held-out side (slot 1-S~_i, same
    sample slots) score the other two entries.  ``adapt`` is called once per
    task and slot, in a fixed order (i ascending, training side first), so a
    seeded adapt closure yields deterministic tables.

    ``loss_fn(params, features, labels) -> (k,) array`` supplies the losses;
    use the 0-1 loss for the binary protocol.
    """
    if meta_state is None or getattr(meta_state, "meta_params", None) is None:
        raise ValueError("meta_state is untrained")
    if (mv.n, mv.m) != (ss.n, ss.m):
        raise ValueError("membership vectors do not match the supersample shape")
    n, m = ss.n, ss.m
    u = meta_state.meta_params
    jj = np.arange(m)
    losses = np.empty((n, 2, m, 2))
    for i in range(n):
        train_slot = int(mv.s_tilde[i])
        for slot in (train_slot, 1 - train_slot):
            x_train = ss.features[i, slot, jj, mv.s]
            y_train = ss.labels[i, slot, jj, mv.s]
            params = adapt(u, x_train, y_train)
            params.check_finite(f"after adapting task {i} slot {slot}")
            for b in (0, 1):
                vals = np.asarray(
                    loss_fn(params, ss.features[i, slot, :, b], ss.labels[i, slot, :, b]),
                    dtype=float,
                )
                if not np.all(np.isfinite(vals)):
                    raise DivergenceError(f"non-finite loss for task {i} slot {slot}")
                losses[i, slot, :, b] = vals
    return LossTable(
        run_id=run_id,
        t1_index=t1_index,
        t2_index=t2_index,
        losses=losses,
        masks=mv,
    )
