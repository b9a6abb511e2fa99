"""Cost functions and analytic gradients for all four learner modes.

The model minimizes, over the basis rows w_1..w_K,

    (1/m) sum_i [ rec(x_i) + lambda * g(s_i) + alpha * d(s_i) ]

where s_i is the per-sample response vector (s_ij = kappa(w_j, x_i), which is
W x_i in the linear modes), rec is the feature-space reconstruction cost

    kappa(x,x) - 2 sum_u kappa(w_u,x)^2
              + sum_u sum_v kappa(w_u,x) kappa(w_u,w_v) kappa(w_v,x),

g is the L2-pooling penalty sum_j sqrt(eps + H_j (s^2)), and d is the
discrimination term (d_minus.s)^2 - (d_plus.s)^2 + eta ||s||^2 (discriminative
modes only).  For the linear kernel the reconstruction cost equals
(1/m) sum_i ||W^T W x_i - x_i||^2 exactly, so the plain modes are the linear
special case of the kernel expansion.

The gradient is assembled from the chain rule through the kernel gradient
factorization (see :func:`krica.kernels.kernel_grad_factors`); one vectorized
path serves every differentiable kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    GAUSSIAN,
    LINEAR,
    KernelSpec,
    gram,
    kernel_grad_factors,
    kernel_self,
)
from .whitening import WhitenTransform, identity_whitener

RICA = "rica"
KRICA = "krica"
D_RICA = "d_rica"
D_KRICA = "d_krica"
MODES = (RICA, KRICA, D_RICA, D_KRICA)

IDENTITY = "identity"
GRID3X3 = "grid3x3"


def is_kernel_mode(mode: str) -> bool:
    return mode in (KRICA, D_KRICA)


def is_discriminative(mode: str) -> bool:
    return mode in (D_RICA, D_KRICA)


# ---------------------------------------------------------------------------
# pooling


@dataclass(frozen=True)
class PoolingMatrix:
    """Fixed pooling weights H (K x K) plus the epsilon smoothing constant."""

    H: np.ndarray
    topology: str
    epsilon: float = 1e-6

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        object.__setattr__(self, "H", H)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("pooling matrix must be square")
        if np.any(H < 0):
            raise ValueError("pooling weights must be non-negative")
        if not np.all(H.sum(axis=1) > 0):
            raise ValueError("every pooling row needs a positive entry")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @property
    def size(self) -> int:
        return self.H.shape[0]


def identity_pooling(K: int, epsilon: float = 1e-6) -> PoolingMatrix:
    return PoolingMatrix(np.eye(K), IDENTITY, epsilon)


def grid3x3_pooling(K: int, epsilon: float = 1e-6) -> PoolingMatrix:
    """Toroidal 3x3 neighborhoods on a sqrt(K) x sqrt(K) grid of units."""
    side = int(round(np.sqrt(K)))
    if side * side != K or side < 3:
        raise ValueError("grid3x3 pooling needs K a perfect square with side >= 3")
    H = np.zeros((K, K))
    for j in range(K):
        r, c = divmod(j, side)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                H[j, ((r + dr) % side) * side + ((c + dc) % side)] = 1.0
    return PoolingMatrix(H, GRID3X3, epsilon)


def default_pooling(K: int, mode: str, epsilon: float = 1e-6) -> PoolingMatrix:
    """Grid pooling for unsupervised modes when K is a square grid with side
    >= 3, identity otherwise (groups must never straddle class blocks)."""
    side = int(round(np.sqrt(K)))
    if not is_discriminative(mode) and side * side == K and side >= 3:
        return grid3x3_pooling(K, epsilon)
    return identity_pooling(K, epsilon)


def pooling_penalty(pooling: PoolingMatrix, s: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of g(s) = sum_j sqrt(eps + H_j (s^2))."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (pooling.size,):
        raise ValueError(f"response vector must have length {pooling.size}")
    vals, grads = pooling_penalty_batch(pooling, s[:, None])
    return float(vals[0]), grads[:, 0]


def pooling_penalty_batch(pooling: PoolingMatrix, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched pooling penalty over response columns S (K x m)."""
    A = pooling.epsilon + pooling.H @ (S * S)
    root = np.sqrt(A)
    values = root.sum(axis=0)
    grads = S * (pooling.H.T @ (1.0 / root))
    return values, grads


# ---------------------------------------------------------------------------
# selectors and the discrimination term


@dataclass(frozen=True)
class Selectors:
    """Per-class homogeneous/inhomogeneous indicator vectors.

    Class y owns the contiguous coefficient block [y*k, (y+1)*k); D_plus[y]
    marks it and D_minus[y] marks everything else.
    """

    class_count: int
    per_class_size: int
    D_plus: np.ndarray   # (c, K) 0/1
    D_minus: np.ndarray  # (c, K) 0/1

    @property
    def basis_size(self) -> int:
        return self.class_count * self.per_class_size


def make_selectors(per_class_size: int, class_count: int) -> Selectors:
    if per_class_size < 1 or class_count < 1:
        raise ValueError("selector sizes must be positive")
    K = per_class_size * class_count
    D_plus = np.zeros((class_count, K))
    for y in range(class_count):
        D_plus[y, y * per_class_size : (y + 1) * per_class_size] = 1.0
    return Selectors(class_count, per_class_size, D_plus, 1.0 - D_plus)


def _check_labels(selectors: Selectors, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-d integer vector")
    if labels.size and (labels.min() < 0 or labels.max() >= selectors.class_count):
        raise ValueError(
            f"labels must lie in [0, {selectors.class_count}), got "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.intp)


def discrimination_term(
    selectors: Selectors,
    eta: float,
    y: int,
    s: np.ndarray,
    rank_one: bool = True,
) -> tuple[float, np.ndarray]:
    """Value and gradient of d(s) for one labeled sample.

    Under the default rank-one reading D.s is a scalar dot product:
    d(s) = (D_minus.s)^2 - (D_plus.s)^2 + eta ||s||^2.  The ``rank_one=False``
    mask reading uses elementwise masking instead: ||D_minus o s||^2 - ...
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (selectors.basis_size,):
        raise ValueError(f"response vector must have length {selectors.basis_size}")
    labels = _check_labels(selectors, np.asarray([y]))
    if eta < selectors.per_class_size + 1:
        warnings.warn("eta below per_class_size + 1: discrimination term not convex")
    vals, grads = discrimination_batch(selectors, eta, labels, s[:, None], rank_one)
    return float(vals[0]), grads[:, 0]


def discrimination_batch(
    selectors: Selectors,
    eta: float,
    labels: np.ndarray,
    S: np.ndarray,
    rank_one: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched discrimination term over response columns S (K x m)."""
    labels = _check_labels(selectors, labels)
    if labels.shape[0] != S.shape[1]:
        raise ValueError("label count must match sample count")
    Dp = selectors.D_plus[labels]   # (m, K)
    Dm = selectors.D_minus[labels]
    if rank_one:
        dp = np.einsum("ik,ki->i", Dp, S)
        dm = np.einsum("ik,ki->i", Dm, S)
        values = dm * dm - dp * dp + eta * np.einsum("ki,ki->i", S, S)
        grads = 2.0 * (Dm.T * dm[None, :] - Dp.T * dp[None, :] + eta * S)
    else:
        S2 = S * S
        values = (
            np.einsum("ik,ki->i", Dm, S2)
            - np.einsum("ik,ki->i", Dp, S2)
            + eta * S2.sum(axis=0)
        )
        grads = 2.0 * (Dm.T * S - Dp.T * S + eta * S)
    return values, grads


def hessian_of_d(
    selectors: Selectors, eta: float, y: int, rank_one: bool = True
) -> np.ndarray:
    """Hessian of d(s) with respect to s: 2*(eta*I + Dm^T Dm - Dp^T Dp)."""
    labels = _check_labels(selectors, np.asarray([y]))
    dp = selectors.D_plus[labels[0]]
    dm = selectors.D_minus[labels[0]]
    K = selectors.basis_size
    if rank_one:
        return 2.0 * (eta * np.eye(K) + np.outer(dm, dm) - np.outer(dp, dp))
    return 2.0 * (eta * np.eye(K) + np.diag(dm) - np.diag(dp))


def homogeneous_energy_ratio(
    selectors: Selectors, responses: np.ndarray, labels: np.ndarray
) -> float:
    """Mean over samples of (D_plus.s)^2 / ((D_plus.s)^2 + (D_minus.s)^2).

    ``responses`` holds one response vector per row (m x K).  Higher means
    more of each sample's aggregate response sits on its own class block.
    """
    S = np.asarray(responses, dtype=np.float64).T
    labels = _check_labels(selectors, labels)
    dp = np.einsum("ik,ki->i", selectors.D_plus[labels], S)
    dm = np.einsum("ik,ki->i", selectors.D_minus[labels], S)
    return float(np.mean(dp * dp / (dp * dp + dm * dm + 1e-12)))


# ---------------------------------------------------------------------------
# the model and its composite objective


@dataclass
class BasisModel:
    """A learned basis W (K x n rows) plus everything needed to encode with it."""

    W: np.ndarray
    mode: str
    kernel: KernelSpec
    pooling: PoolingMatrix
    selectors: Selectors | None = None
    lam: float = 1e-2
    alpha: float = 1e-1
    eta: float = 0.0
    whitener: WhitenTransform = field(default_factory=identity_whitener)
    center_patches: bool = True
    rank_one_selectors: bool = True
    seed: int = 0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a K x n matrix")
        if not np.isfinite(self.W).all():
            raise ValueError("W must be finite")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not is_kernel_mode(self.mode) and self.kernel.kind != LINEAR:
            raise ValueError(f"mode {self.mode} requires the linear kernel")
        if self.pooling.size != self.W.shape[0]:
            raise ValueError("pooling matrix size must match basis size")
        if is_discriminative(self.mode):
            if self.selectors is None:
                raise ValueError(f"mode {self.mode} requires selectors")
            if self.selectors.basis_size != self.W.shape[0]:
                raise ValueError("selector layout must match basis size")
            if self.eta < self.selectors.per_class_size + 1:
                warnings.warn(
                    "eta below per_class_size + 1: discrimination term not convex"
                )

    @property
    def basis_size(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


def _sample_matrix(model: BasisModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.input_dim:
        raise ValueError(f"model expects {model.input_dim} columns, got {X.shape[1]}")
    return X, single


def encode(model: BasisModel, x) -> np.ndarray:
    """Responses s for one sample (n,) -> (K,) or a batch (m, n) -> (m, K).

    Linear modes give s = W x; kernel modes give s_j = kappa(w_j, x).  Inputs
    are expected in the model's whitened coordinate space.
    """
    X, single = _sample_matrix(model, x)
    if is_kernel_mode(model.mode):
        S = gram(model.kernel, X, model.W)
    else:
        S = X @ model.W.T
    return S[0] if single else S


def _require_labels(model: BasisModel, labels) -> np.ndarray | None:
    if not is_discriminative(model.mode):
        return None
    if labels is None:
        raise ValueError(f"mode {model.mode} requires labels")
    return np.asarray(labels)


def reconstruction_cost(model: BasisModel, X) -> float:
    """Mean feature-space reconstruction error of the kernel expansion."""
    X, _ = _sample_matrix(model, X)
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    S = gram(model.kernel, model.W, X)       # (K, m)
    M = gram(model.kernel, model.W, model.W)
    kxx = kernel_self(model.kernel, X)
    m = X.shape[0]
    return float((kxx.sum() - 2.0 * (S * S).sum() + (S * (M @ S)).sum()) / m)


def full_objective(model: BasisModel, X, labels=None) -> float:
    """reconstruction + (lam/m) sum g(s_i) + (alpha/m) sum d(s_i)."""
    X, _ = _sample_matrix(model, X)
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    labels = _require_labels(model, labels)
    total = reconstruction_cost(model, X)
    m = X.shape[0]
    if model.lam != 0.0 or labels is not None:
        S = gram(model.kernel, model.W, X) if is_kernel_mode(model.mode) else model.W @ X.T
        if model.lam != 0.0:
            gvals, _ = pooling_penalty_batch(model.pooling, S)
            total += model.lam * gvals.sum() / m
        if labels is not None and model.alpha != 0.0:
            dvals, _ = discrimination_batch(
                model.selectors, model.eta, labels, S, model.rank_one_selectors
            )
            total += model.alpha * dvals.sum() / m
    return float(total)


def _gradient_terms(model: BasisModel, X, labels):
    """Shared multipliers for the analytic gradient and fixed-point updates.

    Returns (S, M, E, F) where the gradient of the full objective for row p is

        sum_i E[p,i] * dkappa(w_p, x_i)/dw_p + sum_v F[p,v] * dkappa(w_p, w_v)/dw_p.
    """
    m = X.shape[0]
    W = model.W
    S = gram(model.kernel, W, X)
    M = gram(model.kernel, W, W)
    E = -4.0 * S + 2.0 * (M @ S)
    if model.lam != 0.0:
        _, PG = pooling_penalty_batch(model.pooling, S)
        E += model.lam * PG
    if labels is not None and model.alpha != 0.0:
        _, DG = discrimination_batch(
            model.selectors, model.eta, labels, S, model.rank_one_selectors
        )
        E += model.alpha * DG
    E /= m
    F = (2.0 / m) * (S @ S.T)
    return S, M, E, F


def full_gradient(model: BasisModel, X, labels=None) -> np.ndarray:
    """Exact gradient of :func:`full_objective` with respect to W (K x n)."""
    if not model.kernel.differentiable:
        raise ValueError(f"kernel kind {model.kernel.kind!r} has no implemented gradient")
    X, _ = _sample_matrix(model, X)
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    labels = _require_labels(model, labels)
    _, _, E, F = _gradient_terms(model, X, labels)
    cw, cx = kernel_grad_factors(model.kernel, model.W, X)
    dw, dx = kernel_grad_factors(model.kernel, model.W, model.W)
    g = ((E * cw).sum(axis=1) + (F * dw).sum(axis=1))[:, None] * model.W
    g += (E * cx) @ X
    g += (F * dx) @ model.W
    return g
