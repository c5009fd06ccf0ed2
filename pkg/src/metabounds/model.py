"""Small fully-connected network with hand-rolled gradients.

The network is the base learner shared by both meta-training strategies.
Training uses a cross-entropy surrogate (the evaluation loss is 0-1 and has
zero gradient almost everywhere); risk measurement uses ``zero_one_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when parameters or losses stop being finite."""


@dataclass
class MlpParams:
    """Per-layer weight matrices and bias vectors.

    ``weights[k]`` has shape (fan_in, fan_out); consecutive layers must
    chain.  Hidden layers use ReLU unless ``activation`` is "identity".
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if not self.weights:
            raise ValueError("need at least one layer")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {k}: weight/bias shapes disagree")
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input dim does not chain")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed flattening order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def clone(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def check_finite(self, where: str = "") -> None:
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise DivergenceError(f"non-finite parameters {where}".strip())


@dataclass
class Batch:
    """A homogeneous batch of labelled feature vectors."""

    features: np.ndarray  # (B, dim)
    labels: np.ndarray  # (B,) int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a nonempty (B, dim) array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with features")

    @classmethod
    def from_examples(cls, examples) -> "Batch":
        feats = np.stack([np.asarray(e.features, dtype=float) for e in examples])
        labels = np.array([e.label for e in examples], dtype=int)
        return cls(feats, labels)

    def __len__(self) -> int:
        return len(self.labels)


def init_mlp(
    in_dim: int,
    out_dim: int,
    hidden: int = 32,
    layers: int = 4,
    rng: np.random.Generator | None = None,
    activation: str = "relu",
) -> MlpParams:
    """Gaussian init scaled by 1/sqrt(fan_in), zero biases, ``layers`` linear maps."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
    weights = [
        rng.standard_normal((dims[k], dims[k + 1])) / np.sqrt(dims[k])
        for k in range(layers)
    ]
    biases = [np.zeros(dims[k + 1]) for k in range(layers)]
    return MlpParams(weights, biases, activation)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Logits for one feature vector (dim,) or a batch (B, dim)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"expected feature dim {params.in_dim}, got {h.shape[1]}")
    last = params.num_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last and params.activation == "relu":
            h = np.maximum(h, 0.0)
    return h[0] if squeeze else h


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params: MlpParams, batch: Batch) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy on the batch and its exact gradient.

    Returns the gradient as arrays matching ``params.arrays()`` order.
    """
    x, y = batch.features, batch.labels
    if np.any(y < 0) or np.any(y >= params.out_dim):
        raise ValueError("label out of range for the network head")
    n = len(batch)
    last = params.num_layers - 1

    # Forward pass keeping pre/post activations for the backward sweep.
    # Overflow is tolerated here; the finiteness check below catches it.
    acts = [x]  # inputs to each layer
    with np.errstate(over="ignore", invalid="ignore"):
        h = x
        for k, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = h @ w + b
            h = np.maximum(z, 0.0) if (k < last and params.activation == "relu") else z
            acts.append(h)

        logp = _log_softmax(acts[-1])
    loss = float(-logp[np.arange(n), y].mean())
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(logp[np.arange(n), y]))[0])
        raise DivergenceError(f"non-finite loss at batch index {bad}")

    # Backward: d(mean CE)/d(logits) = (softmax - onehot)/n.
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [np.empty(0)] * (2 * params.num_layers)
    for k in range(last, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ params.weights[k].T
            if params.activation == "relu":
                delta = delta * (acts[k] > 0)
    return loss, grads


def zero_one_loss(params: MlpParams, example) -> int:
    """0 iff argmax(logits) equals the label; ties go to the lowest class index."""
    logits = forward(params, np.asarray(example.features, dtype=float))
    return int(int(np.argmax(logits)) != int(example.label))


def zero_one_losses(params: MlpParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorised 0-1 losses; same tie rule as ``zero_one_loss``."""
    logits = forward(params, features)
    return (np.argmax(logits, axis=1) != np.asarray(labels, dtype=int)).astype(float)


def flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def unflatten_like(vec: np.ndarray, params: MlpParams) -> MlpParams:
    out = params.clone()
    pos = 0
    for a in out.arrays():
        a[...] = vec[pos : pos + a.size].reshape(a.shape)
        pos += a.size
    if pos != vec.size:
        raise ValueError("vector length does not match parameter count")
    return out


def grad_check(params: MlpParams, batch: Batch, eps: float = 1e-5) -> float:
    """Worst-case error of ``loss_and_grad`` against central finite differences.

    The error is |analytic - numeric| / max(1, |analytic|, |numeric|), i.e.
    relative for O(1) gradients and absolute near zero.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError("eps must be in (0, 1e-3]")
    _, grads = loss_and_grad(params, batch)
    worst = 0.0
    probe = params.clone()
    for arr, g in zip(probe.arrays(), grads):
        flat = arr.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + eps
            up, _ = loss_and_grad(probe, batch)
            flat[idx] = keep - eps
            down, _ = loss_and_grad(probe, batch)
            flat[idx] = keep
            numeric = (up - down) / (2.0 * eps)
            err = abs(gflat[idx] - numeric) / max(1.0, abs(gflat[idx]), abs(numeric))
            worst = max(worst, err)
    return worst
