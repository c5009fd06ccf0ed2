"""Task environments: synthetic Gaussian hypercube classes and dataset-backed tasks.

An environment yields tasks and per-task labelled samples.  Two task modes
are supported everywhere:

* ``class-pair``: a task is binary classification between two distinct
  classes (label 0 for the first class, 1 for the second);
* ``one-vs-rest``: a task is one target class (label 1) against a uniform
  mixture of the remaining classes (label 0).

Both give well-posed binary risks; the mode in force is recorded in run
metadata by the harness.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

MODES = ("class-pair", "one-vs-rest")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
_MAX_IDX_ELEMENTS = 1 << 40


class CapacityError(ValueError):
    """The environment cannot supply the requested tasks or samples."""


class IdxMagicError(ValueError):
    """The stream does not start with a known IDX magic number."""


class IdxTruncationError(ValueError):
    """The stream ends before the promised payload does."""


class IdxDimensionError(ValueError):
    """The header declares dimensions that cannot describe a real payload."""


@dataclass(frozen=True)
class Task:
    """One binary prediction problem drawn from an environment."""

    id: int
    classes: tuple  # (a, b) for class-pair; (target,) for one-vs-rest
    mode: str


def _hypercube_centers(num_classes: int, dim: int) -> np.ndarray:
    """Class centers on {-1,+1}^dim vertices, enumerated in Gray-code order."""
    centers = np.empty((num_classes, dim))
    for c in range(num_classes):
        gray = c ^ (c >> 1)
        bits = (gray >> np.arange(dim)) & 1
        centers[c] = 2.0 * bits - 1.0
    return centers


@dataclass
class GaussianEnv:
    """Isotropic Gaussian blobs centred on hypercube vertices."""

    dim: int
    num_classes: int
    std: float = 0.25
    mode: str = "class-pair"
    seed: int | None = None
    centers: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.num_classes > 2**self.dim:
            raise CapacityError(
                f"{self.num_classes} classes do not fit on {2**self.dim} vertices"
            )
        if self.num_classes < 2:
            raise CapacityError("need at least two classes")
        if self.std <= 0:
            raise ValueError("std must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown task mode {self.mode!r}")
        self.centers = _hypercube_centers(self.num_classes, self.dim)

    def draw_tasks(self, count: int, rng: np.random.Generator) -> list[Task]:
        return sample_tasks(self, count, self.mode, rng)

    def new_session(self):
        return None

    def sample_examples(self, task: Task, count: int, rng: np.random.Generator, session=None):
        classes = self._class_draws(task, count, rng)
        labels = self._labels_for(task, classes)
        feats = self.centers[classes] + rng.normal(0.0, self.std, size=(count, self.dim))
        return feats, labels

    def _class_draws(self, task: Task, count: int, rng: np.random.Generator) -> np.ndarray:
        bits = rng.integers(0, 2, size=count)
        if task.mode == "class-pair":
            a, b = task.classes
            return np.where(bits == 0, a, b)
        (target,) = task.classes
        others = rng.integers(0, self.num_classes - 1, size=count)
        others[others >= target] += 1
        return np.where(bits == 1, target, others)

    def _labels_for(self, task: Task, classes: np.ndarray) -> np.ndarray:
        if task.mode == "class-pair":
            return (classes == task.classes[1]).astype(int)
        return (classes == task.classes[0]).astype(int)


def make_gaussian_env(
    num_classes: int,
    dim: int,
    std: float = 0.25,
    seed: int | None = None,
    mode: str = "class-pair",
) -> GaussianEnv:
    """Environment with deterministic Gray-code center assignment."""
    return GaussianEnv(dim=dim, num_classes=num_classes, std=std, mode=mode, seed=seed)


def sample_tasks(env, count: int, mode: str, rng: np.random.Generator) -> list[Task]:
    """``count`` i.i.d. tasks over the environment's classes."""
    if mode not in MODES:
        raise ValueError(f"unknown task mode {mode!r}")
    num_classes = env.num_classes
    if num_classes < 2:
        raise CapacityError("need at least two classes to build tasks")
    tasks = []
    for k in range(count):
        if mode == "class-pair":
            pair = rng.choice(num_classes, size=2, replace=False)
            tasks.append(Task(id=k, classes=(int(pair[0]), int(pair[1])), mode=mode))
        else:
            target = int(rng.integers(0, num_classes))
            tasks.append(Task(id=k, classes=(target,), mode=mode))
    return tasks


def parse_idx(data: bytes) -> np.ndarray:
    """Parse a big-endian IDX stream into a uint8 tensor.

    Magic 0x00000803 yields a 3-d image tensor, 0x00000801 a 1-d label
    vector.  Malformed streams raise IdxMagicError, IdxDimensionError or
    IdxTruncationError depending on what is wrong.
    """
    if len(data) < 4:
        raise IdxTruncationError("stream shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise IdxMagicError(f"unknown magic 0x{magic:08x}")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxTruncationError("stream ends inside the dimension header")
    dims = struct.unpack(">" + "i" * ndim, data[4:header_end])
    if any(d < 0 for d in dims):
        raise IdxDimensionError(f"negative dimension in header: {dims}")
    total = 1
    for d in dims:
        total *= d
    if total > _MAX_IDX_ELEMENTS:
        raise IdxDimensionError(f"header declares {total} elements; refusing")
    payload = data[header_end:]
    if len(payload) < total:
        raise IdxTruncationError(
            f"header promises {total} bytes of payload, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8, count=total).reshape(dims).copy()


@dataclass
class DatasetEnv:
    """Finite-data environment built from a labelled dataset.

    Tasks within one supersample never reuse a sample: ``new_session``
    returns per-class used-index masks that every draw consumes from.
    """

    features: np.ndarray  # (N, dim) float
    labels: np.ndarray  # (N,) int
    mode: str = "class-pair"
    rescaled: bool = False
    centered: bool = False

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (N, dim) aligned with labels")
        classes = np.unique(self.labels)
        if len(classes) < 2:
            raise ValueError("labels cover fewer than two classes")
        self._pools = {int(c): np.flatnonzero(self.labels == c) for c in classes}
        self._classes = [int(c) for c in classes]

    @property
    def num_classes(self) -> int:
        return len(self._classes)

    def draw_tasks(self, count: int, rng: np.random.Generator) -> list[Task]:
        """Distinct tasks, sampled without replacement from the task universe."""
        if self.mode == "class-pair":
            universe = list(itertools.combinations(self._classes, 2))
        else:
            universe = [(c,) for c in self._classes]
        if count > len(universe):
            raise CapacityError(
                f"environment holds {len(universe)} distinct tasks, {count} requested"
            )
        chosen = rng.choice(len(universe), size=count, replace=False)
        return [Task(id=k, classes=universe[int(u)], mode=self.mode) for k, u in enumerate(chosen)]

    def new_session(self):
        return {c: np.zeros(len(pool), dtype=bool) for c, pool in self._pools.items()}

    def _take(self, cls: int, k: int, rng: np.random.Generator, session) -> np.ndarray:
        pool = self._pools[cls]
        used = session[cls] if session is not None else np.zeros(len(pool), dtype=bool)
        avail = np.flatnonzero(~used)
        if k > len(avail):
            raise CapacityError(
                f"class {cls} has {len(avail)} unused samples, {k} requested"
            )
        pick = rng.choice(avail, size=k, replace=False) if k < len(avail) else avail.copy()
        if session is not None:
            session[cls][pick] = True
        return pool[pick]

    def sample_examples(self, task: Task, count: int, rng: np.random.Generator, session=None):
        # Conservative capacity rule: every class named by the task must be
        # able to cover the worst case of all `count` draws landing on it.
        # Session depletion on the realized draws errors inside _take.
        for cls in task.classes:
            if len(self._pools[cls]) < count:
                raise CapacityError(
                    f"class {cls} holds {len(self._pools[cls])} samples, "
                    f"worst case needs {count}"
                )
        bits = rng.integers(0, 2, size=count)
        if task.mode == "class-pair":
            a, b = task.classes
            classes = np.where(bits == 0, a, b)
        else:
            (target,) = task.classes
            rest = [c for c in self._classes if c != target]
            others = rng.integers(0, len(rest), size=count)
            classes = np.where(bits == 1, target, np.asarray(rest)[others])
        rows = np.empty(count, dtype=int)
        for cls in np.unique(classes):
            where = np.flatnonzero(classes == cls)
            rows[where] = self._take(int(cls), len(where), rng, session)
        labels = (
            (classes == task.classes[1]).astype(int)
            if task.mode == "class-pair"
            else (classes == task.classes[0]).astype(int)
        )
        return self.features[rows], labels


def class_tasks_from_dataset(
    images: np.ndarray,
    labels: np.ndarray,
    mode: str = "class-pair",
    center: bool = False,
) -> DatasetEnv:
    """Dataset-backed environment; images are flattened and rescaled to [0, 1]."""
    if mode not in MODES:
        raise ValueError(f"unknown task mode {mode!r}")
    images = np.asarray(images)
    flat = images.reshape(len(images), -1).astype(float)
    rescaled = False
    if flat.size and flat.max() > 1.0:
        flat = flat / 255.0
        rescaled = True
    centered = False
    if center:
        flat = flat - flat.mean(axis=0)
        centered = True
    return DatasetEnv(
        features=flat,
        labels=np.asarray(labels, dtype=int),
        mode=mode,
        rescaled=rescaled,
        centered=centered,
    )
