import numpy as np
import pytest

from krica.kernels import KernelSpec
from krica.whitening import (
    WhitenTransform,
    apply_whitener,
    fit_kpca_whitener,
    fit_pca_whitener,
    identity_whitener,
)


def cov(Z):
    return (Z.T @ Z) / Z.shape[0]


class TestPcaWhitener:
    def test_idempotent_on_white_data(self, rng):
        # orthogonal mix of standardized independent columns is already white
        Z = rng.normal(size=(400, 5))
        Z -= Z.mean(axis=0)
        # exact empirical whitening so input covariance is I to machine precision
        evals, evecs = np.linalg.eigh(cov(Z))
        Z = Z @ evecs / np.sqrt(evals)
        t = fit_pca_whitener(Z, retained_energy=1.0, eps=0.0)
        out = apply_whitener(t, Z)
        assert np.linalg.norm(cov(out) - np.eye(5)) < 1e-8

    def test_two_points(self):
        t = fit_pca_whitener(np.array([[0.0, 0.0], [2.0, 1.0]]))
        assert 1 <= t.retained <= 2
        assert np.all(t.eigenvalues > 0)

    def test_random_data_whitens(self, rng):
        X = rng.normal(size=(100, 8)) @ rng.normal(size=(8, 8))
        t = fit_pca_whitener(X, retained_energy=1.0, eps=0.0)
        W = apply_whitener(t, X)
        assert np.linalg.norm(cov(W) - np.eye(t.retained)) < 1e-6

    def test_rank_deficient_drops_null_directions(self, rng):
        base = rng.normal(size=(60, 3))
        X = np.hstack([base, base @ rng.normal(size=(3, 2))])  # rank 3 in 5 dims
        t = fit_pca_whitener(X, retained_energy=1.0, eps=0.0)
        assert t.retained == 3
        W = apply_whitener(t, X)
        assert np.isfinite(W).all()
        assert np.linalg.norm(cov(W) - np.eye(3)) < 1e-6

    def test_retained_energy_cuts_dimensions(self, rng):
        X = rng.normal(size=(200, 6)) * np.array([10.0, 5.0, 1.0, 0.1, 0.05, 0.01])
        t = fit_pca_whitener(X, retained_energy=0.9)
        assert t.retained < 6

    def test_degenerate_input_errors(self):
        with pytest.raises(ValueError):
            fit_pca_whitener(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            fit_pca_whitener(np.zeros((10, 3)), retained_energy=0.0)

    def test_linear_after_mean_removal(self, rng):
        X = rng.normal(size=(50, 4))
        t = fit_pca_whitener(X)
        A = rng.normal(size=(7, 4))
        B = rng.normal(size=(7, 4))
        base = apply_whitener(t, np.zeros((1, 4)))
        fa = apply_whitener(t, A) - base
        fb = apply_whitener(t, B) - base
        fab = apply_whitener(t, A + B) - base
        np.testing.assert_allclose(fab, fa + fb, atol=1e-10)
        np.testing.assert_allclose(
            apply_whitener(t, 3.0 * A) - base, 3.0 * fa, atol=1e-10
        )


class TestKpcaWhitener:
    def test_linear_kernel_matches_pca(self, rng):
        X = rng.normal(size=(60, 5))
        pca = fit_pca_whitener(X, retained_energy=1.0, eps=0.0)
        kpca = fit_kpca_whitener(X, KernelSpec("linear"), retained=5)
        Zp = apply_whitener(pca, X)
        Zk = apply_whitener(kpca, X)
        assert Zk.shape == Zp.shape
        for j in range(Zp.shape[1]):
            d = min(np.linalg.norm(Zk[:, j] - Zp[:, j]), np.linalg.norm(Zk[:, j] + Zp[:, j]))
            assert d < 1e-6

    def test_unit_variance_per_axis(self, rng):
        X = rng.normal(size=(40, 6))
        with pytest.warns(UserWarning):
            # retained = m necessarily drops the centering null direction
            t = fit_kpca_whitener(X, KernelSpec("gaussian", gamma=0.1), retained=40)
        Z = apply_whitener(t, X)
        assert t.dropped >= 1
        np.testing.assert_allclose(Z.var(axis=0), np.ones(t.retained), atol=1e-8)

    def test_single_repeated_point(self):
        X = np.ones((8, 3))
        with pytest.warns(UserWarning):
            t = fit_kpca_whitener(X, KernelSpec("gaussian", gamma=0.5), retained=4)
        assert t.retained == 0
        assert t.dropped == 4

    def test_held_out_rows_finite_and_shaped(self, rng):
        X = rng.normal(size=(30, 4))
        t = fit_kpca_whitener(X, KernelSpec("gaussian", gamma=0.2), retained=10)
        Z = apply_whitener(t, rng.normal(size=(7, 4)))
        assert Z.shape == (7, t.retained)
        assert np.isfinite(Z).all()

    def test_retained_bounds(self, rng):
        X = rng.normal(size=(10, 3))
        with pytest.raises(ValueError):
            fit_kpca_whitener(X, KernelSpec("gaussian"), retained=11)


class TestApply:
    def test_none_is_identity(self, rng):
        X = rng.normal(size=(9, 4))
        np.testing.assert_array_equal(apply_whitener(identity_whitener(), X), X)

    def test_dimension_mismatch(self, rng):
        t = fit_pca_whitener(rng.normal(size=(20, 4)))
        with pytest.raises(ValueError):
            apply_whitener(t, rng.normal(size=(3, 5)))

    def test_eigenvalue_positivity_enforced(self):
        with pytest.raises(ValueError):
            WhitenTransform(kind="pca", eigenvalues=np.array([1.0, 0.0]), retained=2)
