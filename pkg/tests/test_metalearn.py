import numpy as np
import pytest

from metabounds import metalearn as ml
from metabounds import model
from metabounds.model import Batch, MlpParams, flatten
from metabounds.supersample import TaskSplit


def make_split(rng, n=2, m=4, dim=3):
    return TaskSplit(
        features=rng.standard_normal((n, m, dim)),
        labels=rng.integers(0, 2, size=(n, m)),
        cells=(),
    )


def params_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


class TestJointSgld:
    def test_zero_rates_leave_parameters_alone(self):
        rng = np.random.default_rng(0)
        split = make_split(rng)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        cfg = ml.SgldConfig(iterations=7, step_size=0.0, noise=0.0, hidden=4, layers=2)
        state = ml.joint_sgld_train(split, cfg, np.random.default_rng(1), init_params=init)
        assert params_equal(state.meta_params, init)
        assert all(params_equal(w, init) for w in state.task_params)

    def test_single_noiseless_step_matches_hand_computation(self):
        rng = np.random.default_rng(3)
        split = make_split(rng, n=1, m=4)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        cfg = ml.SgldConfig(iterations=1, step_size=0.25, noise=0.0, hidden=4, layers=2)
        state = ml.joint_sgld_train(split, cfg, np.random.default_rng(5), init_params=init)

        x, y = split.task_batch(0)
        _, grads = model.loss_and_grad(init, Batch(x, y))
        for got, start, g in zip(state.meta_params.arrays(), init.arrays(), grads):
            np.testing.assert_allclose(got, start - 0.25 * g, rtol=1e-12)
        # Single task: the task parameters take the exact same step.
        assert params_equal(state.meta_params, state.task_params[0])

    def test_meta_gradient_is_task_average(self):
        rng = np.random.default_rng(9)
        split = make_split(rng, n=3, m=4)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        cfg = ml.SgldConfig(iterations=1, step_size=1.0, noise=0.0, hidden=4, layers=2)
        state = ml.joint_sgld_train(split, cfg, np.random.default_rng(2), init_params=init)
        per_task = []
        for i in range(3):
            x, y = split.task_batch(i)
            _, g = model.loss_and_grad(init, Batch(x, y))
            per_task.append(flatten(g))
        want = flatten(init.arrays()) - np.mean(per_task, axis=0)
        np.testing.assert_allclose(flatten(state.meta_params.arrays()), want, rtol=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(10)
        split = make_split(rng)
        cfg = ml.SgldConfig(iterations=5, step_size=0.2, noise=0.05, task_batch=1,
                            sample_batch=2, hidden=4, layers=2)
        a = ml.joint_sgld_train(split, cfg, np.random.default_rng(77))
        b = ml.joint_sgld_train(split, cfg, np.random.default_rng(77))
        assert params_equal(a.meta_params, b.meta_params)
        assert [s.task_indices for s in a.trajectory.steps] == [
            s.task_indices for s in b.trajectory.steps
        ]

    def test_noise_statistics(self):
        # step_size 0 isolates the injected noise: per-step increments of every
        # coordinate are N(0, sigma^2) draws.
        rng = np.random.default_rng(0)
        split = make_split(rng, n=1, m=2)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        sigma = 0.03
        cfg = ml.SgldConfig(iterations=1, step_size=0.0, noise=sigma, hidden=4, layers=2)
        increments = []
        for run in range(300):
            state = ml.joint_sgld_train(
                split, cfg, np.random.default_rng(1000 + run), init_params=init
            )
            increments.append(flatten(state.meta_params.arrays()) - flatten(init.arrays()))
        draws = np.concatenate(increments)
        assert abs(draws.std(ddof=0) - sigma) / sigma < 0.05
        assert abs(draws.mean()) < 3 * sigma / np.sqrt(draws.size)

    def test_divergence_reported_with_step(self):
        rng = np.random.default_rng(1)
        split = make_split(rng, n=1, m=2)
        cfg = ml.SgldConfig(iterations=3, step_size=1e200, noise=0.0, hidden=4, layers=2)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        with pytest.raises(model.DivergenceError, match="step"):
            ml.joint_sgld_train(split, cfg, np.random.default_rng(0), init_params=init)

    def test_capture_guard_and_shapes(self):
        rng = np.random.default_rng(6)
        split = make_split(rng, n=2, m=4, dim=2)
        small = MlpParams([np.zeros((2, 2))], [np.zeros(2)])  # 6 parameters
        cfg = ml.SgldConfig(iterations=2, step_size=0.1, noise=0.01, capture=True,
                            covariance_samples=5, hidden=2, layers=1)
        state = ml.joint_sgld_train(split, cfg, np.random.default_rng(3), init_params=small)
        assert state.trajectory.capture_enabled
        for step in state.trajectory.steps:
            assert step.grad_samples.shape == (5, (2 + 1) * 6)

        cfg_big = ml.SgldConfig(iterations=1, step_size=0.1, noise=0.01, capture=True,
                                max_capture_dim=4, hidden=2, layers=1)
        state2 = ml.joint_sgld_train(split, cfg_big, np.random.default_rng(3), init_params=small)
        assert not state2.trajectory.capture_enabled
        assert state2.trajectory.steps[0].grad_samples is None

    def test_capture_does_not_change_training_path(self):
        rng = np.random.default_rng(12)
        split = make_split(rng, n=2, m=4, dim=2)
        small = MlpParams([np.zeros((2, 2))], [np.zeros(2)])
        base = ml.SgldConfig(iterations=3, step_size=0.1, noise=0.02, capture=False,
                             hidden=2, layers=1)
        with_cap = ml.SgldConfig(iterations=3, step_size=0.1, noise=0.02, capture=True,
                                 covariance_samples=4, hidden=2, layers=1)
        a = ml.joint_sgld_train(split, base, np.random.default_rng(5), init_params=small)
        b = ml.joint_sgld_train(split, with_cap, np.random.default_rng(5), init_params=small)
        assert params_equal(a.meta_params, b.meta_params)


class TestMamlNoisy:
    def test_zero_rates_keep_meta_parameters(self):
        rng = np.random.default_rng(0)
        split = make_split(rng, n=2, m=4)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        cfg = ml.MamlConfig(iterations=5, step_size=0.0, inner_step_size=0.0, noise=0.0,
                            hidden=4, layers=2, split_train=2)
        state = ml.maml_noisy_train(split, cfg, np.random.default_rng(2), init_params=init)
        assert params_equal(state.meta_params, init)

    def test_two_step_chain_matches_hand_computation(self):
        rng = np.random.default_rng(4)
        split = make_split(rng, n=1, m=2)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        beta, eta = 0.3, 0.2
        cfg = ml.MamlConfig(iterations=1, step_size=eta, inner_step_size=beta, noise=0.0,
                            hidden=4, layers=2, split_train=1)
        state = ml.maml_noisy_train(split, cfg, np.random.default_rng(8), init_params=init)

        x, y = split.task_batch(0)
        _, g_tr = model.loss_and_grad(init, Batch(x[:1], y[:1]))
        w = init.clone()
        for arr, g in zip(w.arrays(), g_tr):
            arr -= beta * g
        _, g_te = model.loss_and_grad(w, Batch(x[1:], y[1:]))
        want = init.clone()
        for arr, g in zip(want.arrays(), g_te):
            arr -= eta * g
        assert params_equal(state.meta_params, want)

    def test_noise_statistics(self):
        rng = np.random.default_rng(0)
        split = make_split(rng, n=1, m=2)
        init = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        sigma = 0.05
        cfg = ml.MamlConfig(iterations=1, step_size=0.0, inner_step_size=0.0,
                            noise=sigma, hidden=4, layers=2, split_train=1)
        increments = []
        for run in range(300):
            state = ml.maml_noisy_train(
                split, cfg, np.random.default_rng(2000 + run), init_params=init
            )
            increments.append(flatten(state.meta_params.arrays()) - flatten(init.arrays()))
        draws = np.concatenate(increments)
        assert abs(draws.std(ddof=0) - sigma) / sigma < 0.05

    def test_split_sizes_validated(self):
        rng = np.random.default_rng(0)
        split = make_split(rng, n=1, m=1)
        cfg = ml.MamlConfig(iterations=1, split_train=1, hidden=4, layers=2)
        with pytest.raises(ValueError, match="slice"):
            ml.maml_noisy_train(split, cfg, np.random.default_rng(0))

    def test_capture_blocks(self):
        rng = np.random.default_rng(2)
        split = make_split(rng, n=2, m=4, dim=2)
        small = MlpParams([np.zeros((2, 2))], [np.zeros(2)])
        cfg = ml.MamlConfig(iterations=2, step_size=0.1, inner_step_size=0.1, noise=0.01,
                            capture=True, covariance_samples=4, split_train=2,
                            hidden=2, layers=1)
        state = ml.maml_noisy_train(split, cfg, np.random.default_rng(3), init_params=small)
        step = state.trajectory.steps[0]
        assert step.inner_grad_samples.shape == (4, 2 * 6)
        assert step.grad_samples.shape == (4, 6)
        assert step.inner_step_size == 0.1


class TestAdaptTask:
    def test_zero_steps_is_identity(self):
        rng = np.random.default_rng(0)
        u = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        cfg = ml.SgldConfig(adapt_steps=0)
        w = ml.adapt_task(u, rng.standard_normal((4, 3)), rng.integers(0, 2, 4), cfg)
        assert params_equal(w, u)
        assert w is not u

    def test_single_noiseless_step(self):
        rng = np.random.default_rng(1)
        u = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        x = rng.standard_normal((4, 3))
        y = rng.integers(0, 2, 4)
        cfg = ml.SgldConfig(adapt_steps=1, adapt_step_size=0.4, adapt_noise=0.0)
        w = ml.adapt_task(u, x, y, cfg)
        _, grads = model.loss_and_grad(u, Batch(x, y))
        for got, start, g in zip(w.arrays(), u.arrays(), grads):
            np.testing.assert_allclose(got, start - 0.4 * g, rtol=1e-12)

    def test_noisy_adaptation_is_seed_deterministic(self):
        rng = np.random.default_rng(2)
        u = model.init_mlp(3, 2, hidden=4, layers=2, rng=rng)
        x = rng.standard_normal((4, 3))
        y = rng.integers(0, 2, 4)
        cfg = ml.SgldConfig(adapt_steps=3, adapt_step_size=0.2, adapt_noise=0.01)
        a = ml.adapt_task(u, x, y, cfg, np.random.default_rng(11))
        b = ml.adapt_task(u, x, y, cfg, np.random.default_rng(11))
        assert params_equal(a, b)
        with pytest.raises(ValueError):
            ml.adapt_task(u, x, y, cfg)  # noise without a generator


class TestEstimateStepCovariance:
    def test_constant_gradient_gives_zero_matrix(self):
        cov = ml.estimate_step_covariance(
            grad_fn=lambda batch: np.array([1.0, -2.0]),
            batch_sampler=lambda rng: None,
            b=16,
            rng=np.random.default_rng(0),
        )
        np.testing.assert_array_equal(cov, np.zeros((2, 2)))

    def test_least_squares_batch_covariance(self):
        # grad for sample i at fixed w: (w.x_i - y_i) x_i; batch size 1 uniform.
        rng = np.random.default_rng(5)
        n, d = 12, 3
        xs = rng.standard_normal((n, d))
        ys = rng.standard_normal(n)
        w = rng.standard_normal(d)
        per_sample = (xs @ w - ys)[:, None] * xs
        mean = per_sample.mean(axis=0)
        analytic = (per_sample - mean).T @ (per_sample - mean) / n

        cov = ml.estimate_step_covariance(
            grad_fn=lambda i: per_sample[i],
            batch_sampler=lambda g: int(g.integers(0, n)),
            b=10_000,
            rng=np.random.default_rng(7),
        )
        rel = np.linalg.norm(cov - analytic) / np.linalg.norm(analytic)
        assert rel < 0.05

    def test_output_is_symmetric_psd(self):
        rng = np.random.default_rng(9)
        cov = ml.estimate_step_covariance(
            grad_fn=lambda b: b,
            batch_sampler=lambda g: g.standard_normal(4),
            b=50,
            rng=rng,
        )
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            ml.estimate_step_covariance(lambda b: b, lambda g: np.zeros(2), 1,
                                        np.random.default_rng(0))
