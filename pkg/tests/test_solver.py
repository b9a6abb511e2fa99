import numpy as np
import pytest

from krica.kernels import KernelSpec
from krica.objective import BasisModel, full_objective, identity_pooling, make_selectors
from krica.solver import (
    Hyperparams,
    SolveConfig,
    fixed_point_residuals,
    fixed_point_step,
    grad_check,
    kmeans_init,
    train,
)


def clustered(m, n, centers=24, center_scale=1.3, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    C = rng.normal(0, center_scale, size=(centers, n))
    return C[rng.integers(0, centers, size=m)] + rng.normal(0, spread, size=(m, n))


class TestKmeans:
    def test_k_equals_m_returns_rows(self, rng):
        X = rng.normal(size=(6, 3))
        W = kmeans_init(X, 6, SolveConfig(seed=0))
        # every row of X appears exactly once among the centroids
        matched = set()
        for w in W:
            hits = np.where(np.all(np.isclose(X, w), axis=1))[0]
            assert hits.size == 1
            matched.add(int(hits[0]))
        assert matched == set(range(6))

    def test_two_blobs(self, rng):
        a = rng.normal(size=(30, 2)) + np.array([10.0, 0.0])
        b = rng.normal(size=(30, 2)) - np.array([10.0, 0.0])
        X = np.vstack([a, b])
        W = kmeans_init(X, 2, SolveConfig(seed=3))
        sides = sorted(np.sign(W[:, 0]))
        assert sides == [-1.0, 1.0]
        for w in W:
            blob = a if w[0] > 0 else b
            assert np.linalg.norm(w - blob.mean(axis=0)) < 1.5

    def test_deterministic(self, rng):
        X = rng.normal(size=(40, 5))
        W1 = kmeans_init(X, 8, SolveConfig(seed=7))
        W2 = kmeans_init(X, 8, SolveConfig(seed=7))
        np.testing.assert_array_equal(W1, W2)

    def test_k_greater_than_m_rejected(self, rng):
        with pytest.raises(ValueError):
            kmeans_init(rng.normal(size=(3, 2)), 4, SolveConfig())

    def test_duplicate_rows_no_crash(self):
        X = np.ones((5, 2))
        W = kmeans_init(X, 3, SolveConfig(seed=0))
        assert W.shape == (3, 2)
        assert np.isfinite(W).all()


def kernel_model(W, lam=0.0, gamma=0.5, selectors=None, alpha=0.0, eta=0.0):
    mode = "d_krica" if selectors is not None else "krica"
    return BasisModel(W=np.asarray(W, float), mode=mode,
                      kernel=KernelSpec("gaussian", gamma=gamma),
                      pooling=identity_pooling(len(W)), selectors=selectors,
                      lam=lam, alpha=alpha, eta=eta)


class TestFixedPointStep:
    def test_single_sample_attractor(self):
        # any start within kernel range solves straight to the sample; far
        # starts hit the stall guard because every coefficient underflows
        x = np.array([[0.4, -1.0, 2.0]])
        for start in ([1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, 3.0]):
            model = kernel_model([start])
            np.testing.assert_allclose(fixed_point_step(model, x, p=0), x[0], atol=1e-12)
        dead = kernel_model([[50.0, 50.0, 50.0]])
        np.testing.assert_array_equal(fixed_point_step(dead, x, p=0), [50.0, 50.0, 50.0])

    def test_frozen_residual_vanishes_after_step(self, rng):
        X = clustered(30, 4, centers=6, seed=2)
        model = kernel_model(kmeans_init(X, 5, SolveConfig(seed=1)), lam=1e-2)
        from krica.solver import _SweepState

        for p in range(5):
            state = _SweepState(model, X, None)
            cx, cv, denom = state.coefficients(p)
            w_new = fixed_point_step(model, X, p=p)
            residual = np.linalg.norm(denom * w_new - (cx @ X + cv @ model.W))
            assert residual < 1e-10

    def test_damping_mixes_old_and_solved(self, rng):
        X = clustered(20, 3, centers=5, seed=4)
        model = kernel_model(kmeans_init(X, 4, SolveConfig(seed=2)))
        old = model.W[1].copy()
        solved = fixed_point_step(model, X, p=1, damping=0.0)
        mixed = fixed_point_step(model, X, p=1, damping=0.5)
        np.testing.assert_allclose(mixed, 0.5 * old + 0.5 * solved, atol=1e-12)

    def test_rejects_linear_mode(self, rng):
        model = BasisModel(W=rng.normal(size=(3, 2)), mode="rica",
                           kernel=KernelSpec("linear"), pooling=identity_pooling(3))
        with pytest.raises(ValueError):
            fixed_point_step(model, rng.normal(size=(5, 2)), p=0)

    def test_rejects_bad_row(self, rng):
        model = kernel_model(rng.normal(size=(3, 2)))
        with pytest.raises(ValueError):
            fixed_point_step(model, rng.normal(size=(5, 2)), p=3)


class TestTrainKernelModes:
    def test_contract_on_clustered_patches(self):
        X = clustered(200, 16, centers=48, seed=5)
        hp = Hyperparams(mode="krica", kernel=KernelSpec("gaussian", gamma=0.1),
                         basis_size=32, lam=1e-2, whiten="none", center_patches=False)
        cfg = SolveConfig(max_outer_iters=100, tol=1e-5, seed=42)
        model, report = train(X, None, hp, cfg)
        trace = np.asarray(report.objective_trace)
        assert report.converged
        assert report.iterations_used <= 100
        assert len(trace) == report.iterations_used + 1
        assert np.all(np.diff(trace) <= 0)
        res = fixed_point_residuals(model, X)
        assert np.all(res < 1e-6 * (1 + np.linalg.norm(model.W, axis=1)))

    def test_bit_identical_reruns(self):
        X = clustered(80, 8, centers=16, seed=1)
        hp = Hyperparams(mode="krica", kernel=KernelSpec("gaussian", gamma=0.1),
                         basis_size=12, lam=1e-2, whiten="none", center_patches=False)
        cfg = SolveConfig(max_outer_iters=40, seed=9)
        m1, r1 = train(X, None, hp, cfg)
        m2, r2 = train(X, None, hp, cfg)
        np.testing.assert_array_equal(m1.W, m2.W)
        assert r1.objective_trace == r2.objective_trace

    def test_final_objective_never_exceeds_initial(self):
        # white noise is an adversarial landscape for the frozen updates; the
        # safeguard must still keep the trace monotone
        rng = np.random.default_rng(0)
        X = rng.normal(size=(100, 10))
        hp = Hyperparams(mode="krica", kernel=KernelSpec("gaussian", gamma=0.1),
                         basis_size=16, lam=1e-2, whiten="none", center_patches=False)
        model, report = train(X, None, hp, SolveConfig(max_outer_iters=30, seed=3))
        trace = np.asarray(report.objective_trace)
        assert trace[-1] <= trace[0]
        assert np.all(np.diff(trace) <= 0)

    def test_distinct_points_trace_ends_at_its_minimum(self):
        # K basis vectors on K distinct points: only the monotone-trace
        # contract is guaranteed, not a near-zero reconstruction
        X = clustered(12, 3, centers=12, spread=0.0, seed=6)
        hp = Hyperparams(mode="krica", kernel=KernelSpec("gaussian", gamma=0.1),
                         basis_size=12, lam=0.0, whiten="none", center_patches=False)
        _, report = train(X, None, hp, SolveConfig(max_outer_iters=50, seed=0))
        trace = np.asarray(report.objective_trace)
        assert trace[-1] <= trace.min() + 1e-6

    def test_kernel_mode_requires_gaussian(self):
        X = clustered(30, 4, seed=0)
        hp = Hyperparams(mode="krica", kernel=KernelSpec("polynomial"), basis_size=4,
                         whiten="none")
        with pytest.raises(ValueError):
            train(X, None, hp, SolveConfig())

    def test_discriminative_needs_labels_and_block_structure(self):
        X = clustered(30, 4, seed=0)
        hp = Hyperparams(mode="d_krica", basis_size=6, class_count=2, whiten="none")
        with pytest.raises(ValueError):
            train(X, None, hp, SolveConfig())
        hp_bad = Hyperparams(mode="d_krica", basis_size=7, class_count=2, whiten="none")
        with pytest.raises(ValueError):
            train(X, np.zeros(30, dtype=int), hp_bad, SolveConfig())

    def test_trains_discriminative(self):
        rng = np.random.default_rng(8)
        X = clustered(120, 6, centers=12, seed=8)
        labels = rng.integers(0, 2, size=120)
        hp = Hyperparams(mode="d_krica", kernel=KernelSpec("gaussian", gamma=0.3),
                         basis_size=8, class_count=2, lam=1e-2, alpha=1e-1,
                         whiten="none", center_patches=False)
        model, report = train(X, labels, hp, SolveConfig(max_outer_iters=30, seed=1))
        assert model.selectors is not None
        assert model.eta == 5.0  # per-class size 4 + 1
        trace = np.asarray(report.objective_trace)
        assert np.all(np.diff(trace) <= 0)


class TestTrainLinearModes:
    def test_gradient_descent_contract(self, rng):
        X = rng.normal(size=(60, 6)) @ rng.normal(size=(6, 6))
        hp = Hyperparams(mode="rica", basis_size=6, lam=0.0, whiten="pca",
                         center_patches=False)
        cfg = SolveConfig(max_outer_iters=400, tol=1e-9, seed=2)
        model, report = train(X, None, hp, cfg)
        trace = np.asarray(report.objective_trace)
        assert np.all(np.diff(trace) <= 0)
        # whitened data, complete basis: orthonormality stationary point
        assert report.final_grad_norm < 1e-4

    def test_fixed_point_rejected_for_linear(self, rng):
        X = rng.normal(size=(30, 4))
        hp = Hyperparams(mode="rica", basis_size=4, whiten="none")
        with pytest.raises(ValueError):
            train(X, None, hp, SolveConfig(linear_solver="fixed_point"))

    def test_deterministic(self, rng):
        X = rng.normal(size=(40, 5))
        hp = Hyperparams(mode="rica", basis_size=8, lam=1e-2, whiten="pca")
        m1, _ = train(X, None, hp, SolveConfig(max_outer_iters=25, seed=4))
        m2, _ = train(X, None, hp, SolveConfig(max_outer_iters=25, seed=4))
        np.testing.assert_array_equal(m1.W, m2.W)


class TestSolveConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            SolveConfig(tol=0.0)
        with pytest.raises(ValueError):
            SolveConfig(max_outer_iters=0)
        with pytest.raises(ValueError):
            SolveConfig(damping=1.0)
        with pytest.raises(ValueError):
            SolveConfig(step_size=0.0)
        with pytest.raises(ValueError):
            SolveConfig(linear_solver="newton")


class TestGradCheck:
    def test_quadratic_linear_case_tight(self, rng):
        model = BasisModel(W=rng.normal(size=(6, 4)), mode="rica",
                           kernel=KernelSpec("linear"), pooling=identity_pooling(6),
                           lam=0.0)
        assert grad_check(model, rng.normal(size=(15, 4)), step=1e-5) < 1e-7

    def test_full_discriminative_instance(self, rng):
        sel = make_selectors(4, 3)
        model = BasisModel(W=0.5 * rng.normal(size=(12, 8)), mode="d_krica",
                           kernel=KernelSpec("gaussian", gamma=0.5),
                           pooling=identity_pooling(12), selectors=sel,
                           lam=1e-2, alpha=1e-1, eta=5.0)
        labels = rng.integers(0, 3, size=20)
        assert grad_check(model, rng.normal(size=(20, 8)), labels, step=1e-5) < 1e-4

    def test_zero_step_rejected(self, rng):
        model = BasisModel(W=rng.normal(size=(3, 2)), mode="rica",
                           kernel=KernelSpec("linear"), pooling=identity_pooling(3))
        with pytest.raises(ValueError):
            grad_check(model, rng.normal(size=(5, 2)), step=0.0)

    def test_subsamples_large_bases(self, rng):
        model = BasisModel(W=0.3 * rng.normal(size=(30, 10)), mode="krica",
                           kernel=KernelSpec("gaussian", gamma=0.4),
                           pooling=identity_pooling(30), lam=1e-2)
        # 300 coordinates > 200: subsampled check still verifies the gradient
        assert grad_check(model, rng.normal(size=(10, 10)), step=1e-5) < 1e-4
