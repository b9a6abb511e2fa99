"""PCA whitening in input space and KPCA whitening in feature space.

Both fits produce a :class:`WhitenTransform` that maps raw row vectors to
whitened coordinates.  PCA whitening centers the data and rescales principal
axes to unit variance.  KPCA whitening double-centers the Gram matrix of the
training points, eigendecomposes it, and stores dual coefficients so that the
mapped training set has unit variance along every retained kernel principal
axis; new points are mapped through the centered kernel vector against the
stored landmarks.

Eigenvalues below ``eps`` times the largest one are dropped (counted in
``dropped``) so degenerate directions never divide by zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, gram

NONE = "none"
PCA = "pca"
KPCA = "kpca"

# relative floor below which an eigenvalue counts as numerically null even
# when the caller asks for eps=0
_NULL_FLOOR = 1e-12


@dataclass
class WhitenTransform:
    kind: str = NONE
    mean: np.ndarray | None = None            # (n,) pca centering
    projection: np.ndarray | None = None      # (r, n) pca rows: eigvec / sqrt(eigval)
    dual_coef: np.ndarray | None = None       # (m, r) kpca coefficients
    eigenvalues: np.ndarray | None = None     # (r,) positive, descending
    retained: int = 0
    landmarks: np.ndarray | None = None       # (m, n) kpca training points
    kernel: KernelSpec | None = None
    landmark_row_means: np.ndarray | None = None  # (m,) training Gram row means
    landmark_mean: float = 0.0                    # training Gram grand mean
    regularizer: float = 0.0                      # added to eigenvalues before 1/sqrt
    dropped: int = 0
    input_dim: int = 0

    def __post_init__(self):
        if self.kind not in (NONE, PCA, KPCA):
            raise ValueError(f"unknown whitener kind {self.kind!r}")
        if self.eigenvalues is not None and len(self.eigenvalues) and not np.all(
            np.asarray(self.eigenvalues) + self.regularizer > 0
        ):
            raise ValueError("whitener eigenvalues must be positive after regularization")


def identity_whitener() -> WhitenTransform:
    return WhitenTransform(kind=NONE)


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d sample matrix, got shape {X.shape}")
    return X


def _descending_eigh(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    return np.maximum(evals[order], 0.0), evecs[:, order]


def fit_pca_whitener(X, retained_energy: float = 1.0, eps: float = 1e-8) -> WhitenTransform:
    """Fit a PCA whitener so the training data gets identity covariance.

    ``retained_energy`` in (0, 1] picks the smallest leading eigenspace whose
    eigenvalue mass reaches that fraction; directions below ``eps`` times the
    largest eigenvalue are dropped regardless.
    """
    X = _as_2d(X)
    m, n = X.shape
    if m < 2:
        raise ValueError("pca whitening needs at least 2 samples")
    if not 0.0 < retained_energy <= 1.0:
        raise ValueError("retained_energy must be in (0, 1]")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mean = X.mean(axis=0)
    Xc = X - mean
    evals, evecs = _descending_eigh((Xc.T @ Xc) / m)

    total = evals.sum()
    if total <= 0.0:
        return WhitenTransform(
            kind=PCA, mean=mean, projection=np.zeros((0, n)),
            eigenvalues=np.zeros(0), retained=0, dropped=n, input_dim=n,
        )
    floor = max(eps, _NULL_FLOOR) * evals[0]
    usable = int(np.sum(evals > floor))
    r_energy = int(np.searchsorted(np.cumsum(evals), retained_energy * total) + 1)
    r = min(usable, r_energy)
    dropped = max(r_energy - usable, 0)

    scale = 1.0 / np.sqrt(evals[:r])
    projection = (evecs[:, :r] * scale[None, :]).T
    return WhitenTransform(
        kind=PCA, mean=mean, projection=projection,
        eigenvalues=evals[:r].copy(), retained=r, dropped=dropped, input_dim=n,
    )


def fit_kpca_whitener(X, kernel: KernelSpec, retained: int, eps: float = 1e-8) -> WhitenTransform:
    """Fit a KPCA whitener on X with the given kernel.

    The Gram matrix is centered in feature space before eigendecomposition.
    Requested axes whose eigenvalues fall below ``eps`` times the largest are
    dropped with a warning; the count lands in the transform record.
    """
    X = _as_2d(X)
    m, n = X.shape
    if not 1 <= retained <= m:
        raise ValueError(f"retained must be in [1, {m}], got {retained}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    G = gram(kernel, X, X)
    row_means = G.mean(axis=1)
    grand_mean = float(G.mean())
    Gc = G - row_means[:, None] - row_means[None, :] + grand_mean
    Gc = 0.5 * (Gc + Gc.T)
    evals, evecs = _descending_eigh(Gc)

    if evals[0] <= 0.0:
        # all points coincide in feature space: nothing to whiten
        warnings.warn("centered Gram matrix is zero; no kpca axes retained")
        return WhitenTransform(
            kind=KPCA, dual_coef=np.zeros((m, 0)), eigenvalues=np.zeros(0),
            retained=0, landmarks=X.copy(), kernel=kernel,
            landmark_row_means=row_means, landmark_mean=grand_mean,
            dropped=retained, input_dim=n,
        )
    floor = max(eps, _NULL_FLOOR) * evals[0]
    usable = int(np.sum(evals > floor))
    r = min(retained, usable)
    dropped = retained - r
    if dropped:
        warnings.warn(f"dropped {dropped} kpca axes with eigenvalues below eps")

    lam = evals[:r]
    # column i maps k_centered -> sqrt(m) * u_i / Lambda_i, giving the mapped
    # training set unit variance along axis i
    dual = evecs[:, :r] * (np.sqrt(m) / lam)[None, :]
    return WhitenTransform(
        kind=KPCA, dual_coef=dual, eigenvalues=lam / m, retained=r,
        landmarks=X.copy(), kernel=kernel, landmark_row_means=row_means,
        landmark_mean=grand_mean, dropped=dropped, input_dim=n,
    )


def apply_whitener(t: WhitenTransform, X) -> np.ndarray:
    """Map rows of X to whitened coordinates (p x retained)."""
    X = _as_2d(X)
    if t.kind == NONE:
        return X
    if X.shape[1] != t.input_dim:
        raise ValueError(f"whitener expects {t.input_dim} columns, got {X.shape[1]}")
    if t.kind == PCA:
        if t.regularizer != 0.0:
            scale = np.sqrt(t.eigenvalues / (t.eigenvalues + t.regularizer))
            return (X - t.mean) @ (t.projection * scale[:, None]).T
        return (X - t.mean) @ t.projection.T
    K = gram(t.kernel, X, t.landmarks)
    Kc = K - K.mean(axis=1, keepdims=True) - t.landmark_row_means[None, :] + t.landmark_mean
    return Kc @ t.dual_coef
