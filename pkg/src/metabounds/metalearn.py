"""Noisy iterative meta-learners and task adaptation.

Two trainers are provided.  The joint trainer updates the meta parameters and
the selected per-task parameters together from whole-task batches; the split
trainer adapts task parameters on an in-task training slice and moves the
meta parameters along gradients taken on the in-task test slice.  Both inject
isotropic Gaussian noise each step and can record per-step gradient resamples
so the covariance trajectory bounds can be evaluated without re-training.

Sign convention: gradients are stored raw and negated inside the update, so
every step is a descent step plus noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Batch, DivergenceError, MlpParams, flatten, init_mlp, loss_and_grad


@dataclass
class SgldConfig:
    """Joint trainer settings; also carries the shared adaptation settings."""

    iterations: int = 40
    step_size: float | tuple = 0.5  # eta_t, scalar or per-step schedule
    noise: float | tuple = 0.0  # sigma_t
    task_batch: int = 0  # |I_t|; 0 means all tasks
    sample_batch: int = 0  # |J_i|; 0 means all m samples
    adapt_steps: int = 10
    adapt_step_size: float = 0.5
    adapt_noise: float = 0.0
    hidden: int = 32
    layers: int = 4
    capture: bool = False  # record gradient resamples for trajectory bounds
    covariance_samples: int = 16  # B resamples per step
    max_capture_dim: int = 512  # skip capture above this stacked dimension

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.adapt_steps < 0:
            raise ValueError("adapt_steps must be >= 0")
        if self.covariance_samples < 2:
            raise ValueError("need at least two covariance resamples")


@dataclass
class MamlConfig(SgldConfig):
    inner_step_size: float | tuple = 0.5  # beta_t
    split_train: int = 0  # in-task training slice size; 0 means floor(m/2)


@dataclass(frozen=True)
class TrajectoryStep:
    """Everything needed to evaluate one step's covariance term later."""

    step_size: float
    noise_scale: float
    task_indices: tuple
    grad_samples: np.ndarray | None = None  # (B, D) stacked resamples
    inner_step_size: float | None = None
    inner_grad_samples: np.ndarray | None = None  # (B, |I_t|*d), split mode


@dataclass
class GradientTrajectory:
    mode: str  # "joint" or "split"
    param_dim: int
    capture_enabled: bool
    steps: list = field(default_factory=list)


@dataclass
class MetaState:
    meta_params: MlpParams | None
    task_params: list
    trajectory: GradientTrajectory


def _schedule(value, t: int) -> np.ndarray:
    if np.isscalar(value):
        return np.full(t, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (t,):
        raise ValueError(f"schedule must be scalar or length {t}")
    return arr


def _descend(params: MlpParams, grads, eta: float) -> None:
    for arr, g in zip(params.arrays(), grads):
        arr -= eta * g


def _add_noise(params: MlpParams, scale: float, rng: np.random.Generator) -> None:
    if scale == 0.0:
        return
    for arr in params.arrays():
        arr += rng.normal(0.0, scale, size=arr.shape)


def _mean_grads(grad_lists) -> list[np.ndarray]:
    out = [g.copy() for g in grad_lists[0]]
    for grads in grad_lists[1:]:
        for acc, g in zip(out, grads):
            acc += g
    for acc in out:
        acc /= len(grad_lists)
    return out


def _init_from_split(split, cfg, rng: np.random.Generator) -> MlpParams:
    dim = split.features.shape[-1]
    classes = int(split.labels.max()) + 1
    return init_mlp(dim, max(classes, 2), hidden=cfg.hidden, layers=cfg.layers, rng=rng)


def _batch_indices(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    if size >= len(pool):
        return pool.copy()
    return np.sort(rng.choice(pool, size=size, replace=False))


def estimate_step_covariance(grad_fn, batch_sampler, b: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical covariance of ``b`` stacked gradients over fresh batch draws.

    ``grad_fn(batch) -> 1-d vector`` is evaluated at a fixed parameter state;
    only the batch randomness supplied by ``batch_sampler(rng)`` varies.
    """
    if b < 2:
        raise ValueError("need at least two resamples")
    samples = np.stack([np.asarray(grad_fn(batch_sampler(rng)), dtype=float) for _ in range(b)])
    centered = samples - samples.mean(axis=0, keepdims=True)
    return centered.T @ centered / (b - 1)


def joint_sgld_train(
    meta_train,
    cfg: SgldConfig,
    rng: np.random.Generator,
    init_params: MlpParams | None = None,
) -> MetaState:
    """Noisy joint meta-training over all selected tasks at once.

    Per step a task batch I_t and per-task sample batches J_i are drawn; the
    selected task parameters take a descent step on their own batch gradient
    while the meta parameters move along the average of those gradients, and
    both receive independent isotropic noise of scale sigma_t.  Unselected
    task parameters are carried unchanged.
    """
    n_tasks, m = meta_train.n, meta_train.m
    etas = _schedule(cfg.step_size, cfg.iterations)
    sigmas = _schedule(cfg.noise, cfg.iterations)
    task_batch = cfg.task_batch or n_tasks
    sample_batch = cfg.sample_batch or m
    task_batch = min(task_batch, n_tasks)
    sample_batch = min(sample_batch, m)

    u = init_params.clone() if init_params is not None else _init_from_split(meta_train, cfg, rng)
    w_list = [u.clone() for _ in range(n_tasks)]
    # Separate stream so toggling capture never changes the training path.
    capture_rng = np.random.default_rng(int(rng.integers(0, 2**63)))

    dim = u.size()
    stacked_dim = (task_batch + 1) * dim
    capture = cfg.capture and stacked_dim <= cfg.max_capture_dim
    traj = GradientTrajectory(mode="joint", param_dim=dim, capture_enabled=capture)

    all_tasks = np.arange(n_tasks)
    all_samples = np.arange(m)
    for t in range(cfg.iterations):
        try:
            i_t = _batch_indices(rng, all_tasks, task_batch)
            task_grads = {}
            for i in i_t:
                j_i = _batch_indices(rng, all_samples, sample_batch)
                x, y = meta_train.task_batch(int(i))
                _, grads = loss_and_grad(w_list[int(i)], Batch(x[j_i], y[j_i]))
                task_grads[int(i)] = grads
            u_grad = _mean_grads(list(task_grads.values()))

            samples = None
            if capture:
                def stacked_grad():
                    per_task = []
                    for i in i_t:
                        j = _batch_indices(capture_rng, all_samples, sample_batch)
                        x, y = meta_train.task_batch(int(i))
                        _, g = loss_and_grad(w_list[int(i)], Batch(x[j], y[j]))
                        per_task.append(flatten(g))
                    mean = np.mean(per_task, axis=0)
                    return np.concatenate([mean] + per_task)

                samples = np.stack(
                    [stacked_grad() for _ in range(cfg.covariance_samples)]
                )

            eta, sigma = float(etas[t]), float(sigmas[t])
            _descend(u, u_grad, eta)
            _add_noise(u, sigma, rng)
            for i in i_t:
                _descend(w_list[int(i)], task_grads[int(i)], eta)
                _add_noise(w_list[int(i)], sigma, rng)
            u.check_finite()
            for i in i_t:
                w_list[int(i)].check_finite()
        except DivergenceError as exc:
            raise DivergenceError(f"joint training diverged at step {t}") from exc

        traj.steps.append(
            TrajectoryStep(
                step_size=eta,
                noise_scale=sigma,
                task_indices=tuple(int(i) for i in i_t),
                grad_samples=samples,
            )
        )
    return MetaState(meta_params=u, task_params=w_list, trajectory=traj)


def maml_noisy_train(
    meta_train,
    cfg: MamlConfig,
    rng: np.random.Generator,
    init_params: MlpParams | None = None,
) -> MetaState:
    """Noisy first-order training with separate in-task train/test slices.

    Inner loop: task parameters start at the meta parameters and take one
    noisy step on a batch from the task's training slice.  Outer loop: the
    meta parameters take a noisy step along the batch-mean gradient on the
    test slices, evaluated at the freshly adapted task parameters.
    """
    n_tasks, m = meta_train.n, meta_train.m
    m_tr = cfg.split_train or m // 2
    m_te = m - m_tr
    if m_tr < 1 or m_te < 1:
        raise ValueError("both in-task slices need at least one sample")
    etas = _schedule(cfg.step_size, cfg.iterations)
    betas = _schedule(cfg.inner_step_size, cfg.iterations)
    sigmas = _schedule(cfg.noise, cfg.iterations)
    task_batch = min(cfg.task_batch or n_tasks, n_tasks)
    tr_batch = min(cfg.sample_batch or m_tr, m_tr)
    te_batch = min(cfg.sample_batch or m_te, m_te)

    u = init_params.clone() if init_params is not None else _init_from_split(meta_train, cfg, rng)
    capture_rng = np.random.default_rng(int(rng.integers(0, 2**63)))

    dim = u.size()
    capture = cfg.capture and task_batch * dim <= cfg.max_capture_dim
    traj = GradientTrajectory(mode="split", param_dim=dim, capture_enabled=capture)

    all_tasks = np.arange(n_tasks)
    tr_pool = np.arange(m_tr)
    te_pool = np.arange(m_tr, m)
    for t in range(cfg.iterations):
        try:
            eta, beta, sigma = float(etas[t]), float(betas[t]), float(sigmas[t])
            i_t = _batch_indices(rng, all_tasks, task_batch)

            def inner_grad(i, pool_rng):
                j = _batch_indices(pool_rng, tr_pool, tr_batch)
                x, y = meta_train.task_batch(int(i))
                _, g = loss_and_grad(u, Batch(x[j], y[j]))
                return g

            inner_samples = None
            if capture:
                inner_samples = np.stack(
                    [
                        np.concatenate([flatten(inner_grad(i, capture_rng)) for i in i_t])
                        for _ in range(cfg.covariance_samples)
                    ]
                )

            w_t = {}
            for i in i_t:
                w = u.clone()
                _descend(w, inner_grad(i, rng), beta)
                _add_noise(w, sigma, rng)
                w_t[int(i)] = w

            def outer_grad(pool_rng):
                per_task = []
                for i in i_t:
                    j = _batch_indices(pool_rng, te_pool, te_batch)
                    x, y = meta_train.task_batch(int(i))
                    _, g = loss_and_grad(w_t[int(i)], Batch(x[j], y[j]))
                    per_task.append(g)
                return _mean_grads(per_task)

            outer_samples = None
            if capture:
                outer_samples = np.stack(
                    [flatten(outer_grad(capture_rng)) for _ in range(cfg.covariance_samples)]
                )

            _descend(u, outer_grad(rng), eta)
            _add_noise(u, sigma, rng)
            u.check_finite()
        except DivergenceError as exc:
            raise DivergenceError(f"split training diverged at step {t}") from exc

        traj.steps.append(
            TrajectoryStep(
                step_size=eta,
                noise_scale=sigma,
                task_indices=tuple(int(i) for i in i_t),
                grad_samples=outer_samples,
                inner_step_size=beta,
                inner_grad_samples=inner_samples,
            )
        )
    return MetaState(meta_params=u, task_params=[], trajectory=traj)


def adapt_task(
    u: MlpParams,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: SgldConfig,
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """k full-batch descent steps from the meta parameters on one task's data."""
    if cfg.adapt_noise > 0.0 and rng is None:
        raise ValueError("noisy adaptation needs a generator")
    w = u.clone()
    if cfg.adapt_steps == 0:
        return w
    batch = Batch(features, labels)
    for k in range(cfg.adapt_steps):
        _, grads = loss_and_grad(w, batch)
        _descend(w, grads, cfg.adapt_step_size)
        if cfg.adapt_noise > 0.0:
            _add_noise(w, cfg.adapt_noise, rng)
        try:
            w.check_finite()
        except DivergenceError as exc:
            raise DivergenceError(f"adaptation diverged at step {k}") from exc
    return w
