import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krica.kernels import (
    KERNEL_KINDS,
    KernelSpec,
    gram,
    kernel_eval,
    kernel_grad_wrt_first,
    kernel_self,
)

GAUSS_HALF = KernelSpec("gaussian", gamma=0.5)


class TestKernelEval:
    def test_gaussian_self_is_one(self, rng):
        x = rng.normal(size=7)
        assert kernel_eval(KernelSpec("gaussian", gamma=2.3), x, x) == 1.0

    def test_gaussian_closed_form(self):
        got = kernel_eval(GAUSS_HALF, np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        assert got == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_polynomial_b3(self):
        got = kernel_eval(KernelSpec("polynomial", b=3), np.ones(2), np.ones(2))
        assert got == pytest.approx(27.0, abs=1e-12)

    def test_default_b_per_kind(self):
        assert KernelSpec("polynomial").b == 3.0
        assert KernelSpec("inverse_distance").b == 1.0
        assert KernelSpec("exp_histogram_intersection").b == 1.0

    def test_alternative_kernel_formulas(self):
        x, y = np.array([1.0, 2.0]), np.array([0.0, 2.0])
        assert kernel_eval(KernelSpec("inverse_distance", b=2.0), x, y) == pytest.approx(1 / 3)
        assert kernel_eval(KernelSpec("inverse_square_distance", b=2.0), x, y) == pytest.approx(1 / 3)
        expected = min(math.e, 1.0) + min(math.e ** 2, math.e ** 2)
        assert kernel_eval(KernelSpec("exp_histogram_intersection", b=1.0), x, y) == pytest.approx(expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(GAUSS_HALF, np.zeros(2), np.zeros(3))

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            kernel_eval(GAUSS_HALF, np.array([np.nan, 0.0]), np.zeros(2))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", gamma=0.0)
        with pytest.raises(ValueError):
            KernelSpec("sigmoid")


class TestKernelGrad:
    def test_gaussian_at_equal_points_is_zero(self, rng):
        w = rng.normal(size=5)
        np.testing.assert_array_equal(kernel_grad_wrt_first(GAUSS_HALF, w, w), np.zeros(5))

    def test_gaussian_closed_form(self):
        got = kernel_grad_wrt_first(GAUSS_HALF, np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        np.testing.assert_allclose(got, [-math.exp(-0.5), 0.0], atol=1e-12)

    def test_linear_returns_other_point(self, rng):
        w = rng.normal(size=2)
        np.testing.assert_array_equal(
            kernel_grad_wrt_first(KernelSpec("linear"), w, np.array([2.0, 3.0])), [2.0, 3.0]
        )

    def test_unsupported_kind_named_in_error(self):
        with pytest.raises(ValueError, match="inverse_distance"):
            kernel_grad_wrt_first(KernelSpec("inverse_distance"), np.zeros(2), np.ones(2))

    @pytest.mark.parametrize("kind,kwargs", [
        ("gaussian", {"gamma": 0.7}),
        ("linear", {}),
        ("polynomial", {"b": 3.0}),
    ])
    def test_matches_central_differences(self, kind, kwargs, rng):
        spec = KernelSpec(kind, **kwargs)
        for _ in range(5):
            w = rng.normal(size=6) * 0.8
            x = rng.normal(size=6) * 0.8
            g = kernel_grad_wrt_first(spec, w, x)
            h = 1e-6
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                num = (kernel_eval(spec, w + e, x) - kernel_eval(spec, w - e, x)) / (2 * h)
                assert abs(g[j] - num) / max(1e-8, abs(g[j]) + abs(num)) < 1e-6


class TestGram:
    def test_single_row_gaussian(self):
        A = np.array([[0.4, -1.0]])
        np.testing.assert_array_equal(gram(GAUSS_HALF, A, A), [[1.0]])

    def test_linear_identity_rows(self):
        A = np.eye(2)
        np.testing.assert_array_equal(gram(KernelSpec("linear"), A, A), np.eye(2))

    def test_gaussian_two_points(self):
        A = np.array([[0.0], [1.0]])
        expected = [[1.0, math.exp(-1)], [math.exp(-1), 1.0]]
        np.testing.assert_allclose(gram(KernelSpec("gaussian", gamma=1.0), A, A), expected, atol=1e-15)

    def test_matches_kernel_eval_entrywise(self, rng):
        A = rng.normal(size=(4, 3))
        B = rng.normal(size=(5, 3))
        for spec in (GAUSS_HALF, KernelSpec("linear"), KernelSpec("polynomial"),
                     KernelSpec("inverse_distance"), KernelSpec("inverse_square_distance"),
                     KernelSpec("exp_histogram_intersection")):
            K = gram(spec, A, B)
            for i in range(4):
                for j in range(5):
                    assert K[i, j] == pytest.approx(kernel_eval(spec, A[i], B[j]), rel=1e-12, abs=1e-12)

    def test_symmetric_on_same_matrix(self, rng):
        A = rng.normal(size=(8, 4))
        for kind in KERNEL_KINDS:
            K = gram(KernelSpec(kind), A, A)
            np.testing.assert_array_equal(K, K.T)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            gram(GAUSS_HALF, rng.normal(size=(2, 3)), rng.normal(size=(2, 4)))

    def test_kernel_self_matches_diagonal(self, rng):
        A = rng.normal(size=(6, 4))
        for kind in KERNEL_KINDS:
            spec = KernelSpec(kind)
            np.testing.assert_allclose(
                kernel_self(spec, A), np.diag(gram(spec, A, A)), rtol=1e-12, atol=1e-12
            )


@settings(deadline=None, max_examples=50)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    st.sampled_from(KERNEL_KINDS),
)
def test_symmetry_property(xs, ys, kind):
    n = min(len(xs), len(ys))
    x, y = np.asarray(xs[:n]), np.asarray(ys[:n])
    spec = KernelSpec(kind, gamma=0.3, b=2.0)
    assert kernel_eval(spec, x, y) == pytest.approx(kernel_eval(spec, y, x), rel=1e-12, abs=1e-12)


@settings(deadline=None, max_examples=50)
@given(
    st.integers(1, 6).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(-5, 5), min_size=n, max_size=n),
            st.lists(st.floats(-5, 5), min_size=n, max_size=n),
        )
    ),
    st.floats(0.01, 1.0),
)
def test_gaussian_bounds(xy, gamma):
    # value ranges bounded so gamma*dist^2 stays well inside float64 range
    x, y = np.asarray(xy[0]), np.asarray(xy[1])
    v = kernel_eval(KernelSpec("gaussian", gamma=gamma), x, y)
    assert 0.0 < v <= 1.0
    if v == 1.0:
        np.testing.assert_array_almost_equal(x, y)
