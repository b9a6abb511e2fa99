"""Kernel functions, their gradients, and Gram matrices.

Every learner mode evaluates similarities through this module.  The linear
variants use ``kind="linear"`` so the plain and kernelized objectives share a
single code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAUSSIAN = "gaussian"
POLYNOMIAL = "polynomial"
INVERSE_DISTANCE = "inverse_distance"
INVERSE_SQUARE_DISTANCE = "inverse_square_distance"
EXP_HISTOGRAM_INTERSECTION = "exp_histogram_intersection"
LINEAR = "linear"

KERNEL_KINDS = (
    GAUSSIAN,
    POLYNOMIAL,
    INVERSE_DISTANCE,
    INVERSE_SQUARE_DISTANCE,
    EXP_HISTOGRAM_INTERSECTION,
    LINEAR,
)

# Kinds with an implemented analytic gradient; the rest are evaluation-only
# and learners reject them.
DIFFERENTIABLE_KINDS = (GAUSSIAN, LINEAR, POLYNOMIAL)


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to evaluate and its parameters.

    ``gamma`` is the Gaussian width; ``b`` parameterizes the four alternative
    kernels (default 3 for the polynomial kernel, 1 for the others).  The
    linear kind takes no parameters.
    """

    kind: str = GAUSSIAN
    gamma: float = 1e-1
    b: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == GAUSSIAN and not self.gamma > 0:
            raise ValueError("gaussian kernel needs gamma > 0")
        if self.b is None:
            object.__setattr__(self, "b", 3.0 if self.kind == POLYNOMIAL else 1.0)

    @property
    def differentiable(self) -> bool:
        return self.kind in DIFFERENTIABLE_KINDS


def _check_vectors(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"vectors must share one dimension, got {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite kernel input")
    return x, y


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate kappa(x, y) for the given spec."""
    x, y = _check_vectors(x, y)
    if spec.kind == GAUSSIAN:
        d = x - y
        return float(np.exp(-spec.gamma * np.dot(d, d)))
    if spec.kind == LINEAR:
        return float(np.dot(x, y))
    if spec.kind == POLYNOMIAL:
        return float((1.0 + np.dot(x, y)) ** spec.b)
    if spec.kind == INVERSE_DISTANCE:
        return float(1.0 / (1.0 + spec.b * np.linalg.norm(x - y)))
    if spec.kind == INVERSE_SQUARE_DISTANCE:
        d = x - y
        return float(1.0 / (1.0 + spec.b * np.dot(d, d)))
    # exp-histogram-intersection
    return float(np.minimum(np.exp(spec.b * x), np.exp(spec.b * y)).sum())


def kernel_grad_wrt_first(spec: KernelSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of kappa(w, x) with respect to w.

    Only the differentiable kinds are supported: gaussian gives
    -2*gamma*kappa(w,x)*(w-x), linear gives x, polynomial gives
    b*(1+w.x)^(b-1)*x.
    """
    w, x = _check_vectors(w, x)
    if spec.kind == GAUSSIAN:
        return -2.0 * spec.gamma * kernel_eval(spec, w, x) * (w - x)
    if spec.kind == LINEAR:
        return x.copy()
    if spec.kind == POLYNOMIAL:
        return spec.b * (1.0 + np.dot(w, x)) ** (spec.b - 1.0) * x
    raise ValueError(f"kernel kind {spec.kind!r} has no implemented gradient")


def _check_matrices(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise ValueError("non-finite kernel input")
    return A, B


def _sqdist(A: np.ndarray, B: np.ndarray, same: bool) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = aa if same else np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    if same:
        # exact zeros on the diagonal so kappa(x, x) comes out exactly
        np.fill_diagonal(d2, 0.0)
    return d2


def gram(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise kernel matrix: entry (i, j) = kappa(A[i], B[j])."""
    same = A is B
    A, B = _check_matrices(A, B)
    if spec.kind == GAUSSIAN:
        K = np.exp(-spec.gamma * _sqdist(A, B, same))
    elif spec.kind == LINEAR:
        K = A @ B.T
    elif spec.kind == POLYNOMIAL:
        K = (1.0 + A @ B.T) ** spec.b
    elif spec.kind == INVERSE_DISTANCE:
        K = 1.0 / (1.0 + spec.b * np.sqrt(_sqdist(A, B, same)))
    elif spec.kind == INVERSE_SQUARE_DISTANCE:
        K = 1.0 / (1.0 + spec.b * _sqdist(A, B, same))
    else:
        eA = np.exp(spec.b * A)
        eB = np.exp(spec.b * B)
        K = np.minimum(eA[:, None, :], eB[None, :, :]).sum(axis=2)
    if same:
        K = 0.5 * (K + K.T)
    return K


def kernel_self(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """kappa(x, x) for every row of X (the Gram diagonal, computed cheaply)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if spec.kind in (GAUSSIAN, INVERSE_DISTANCE, INVERSE_SQUARE_DISTANCE):
        return np.ones(X.shape[0])
    sq = np.einsum("ij,ij->i", X, X)
    if spec.kind == LINEAR:
        return sq
    if spec.kind == POLYNOMIAL:
        return (1.0 + sq) ** spec.b
    return np.exp(spec.b * X).sum(axis=1)


def kernel_grad_factors(
    spec: KernelSpec, A: np.ndarray, B: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Factor the gradient of kappa(a_u, b_v) with respect to a_u.

    Returns (ca, cb), each (p, q), such that

        d kappa(a_u, b_v) / d a_u = ca[u, v] * a_u + cb[u, v] * b_v.

    This holds for all differentiable kinds and lets objective gradients stay
    fully vectorized.
    """
    if spec.kind == GAUSSIAN:
        K = gram(spec, A, B)
        return -2.0 * spec.gamma * K, 2.0 * spec.gamma * K
    A2, B2 = _check_matrices(A, B)
    if spec.kind == LINEAR:
        shape = (A2.shape[0], B2.shape[0])
        return np.zeros(shape), np.ones(shape)
    if spec.kind == POLYNOMIAL:
        cb = spec.b * (1.0 + A2 @ B2.T) ** (spec.b - 1.0)
        return np.zeros_like(cb), cb
    raise ValueError(f"kernel kind {spec.kind!r} has no implemented gradient")
