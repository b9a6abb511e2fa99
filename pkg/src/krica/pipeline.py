"""Patch-based image classification on top of a trained basis.

Flow: every stride-1 receptive field of an image is (optionally) centered,
whitened with the model's stored transform, and encoded; the resulting
response map is sum-pooled over four spatial quadrants into a 4K-dimensional
descriptor; descriptors feed a one-vs-rest linear SVM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objective import BasisModel, encode
from .whitening import apply_whitener

SUM = "sum"
MAX = "max"


def _as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"images must be (height, width, channels), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("non-finite pixel values")
    return a


def extract_patches(img, p: int, stride: int = 1, limit: int | None = None, seed: int = 0):
    """All p x p receptive fields in raster order, flattened row-major.

    Rows come out as (p*p*channels,) with channel-last layout.  With ``limit``
    set, a seeded uniform subsample (in raster order) is returned.
    """
    a = _as_image(img)
    N, M, d = a.shape
    if not 1 <= p <= min(N, M):
        raise ValueError(f"patch size {p} does not fit a {N}x{M} image")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    windows = np.lib.stride_tricks.sliding_window_view(a, (p, p), axis=(0, 1))
    windows = windows[::stride, ::stride]  # (rows, cols, d, p, p)
    rows, cols = windows.shape[:2]
    # row-major flattening of the (p, p, d) patch
    patches = windows.transpose(0, 1, 3, 4, 2).reshape(rows * cols, p * p * d)
    if limit is not None and limit < patches.shape[0]:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(patches.shape[0], size=limit, replace=False))
        patches = patches[keep]
    return np.ascontiguousarray(patches)


def patch_grid_shape(img_shape: tuple[int, int], p: int, stride: int = 1) -> tuple[int, int]:
    N, M = img_shape
    return (N - p) // stride + 1, (M - p) // stride + 1


def encode_image(model: BasisModel, img, p: int, pool: str = SUM) -> np.ndarray:
    """Dense-encode an image into its 4K-dimensional pooled descriptor.

    The (N-p+1) x (M-p+1) x K response map is pooled over the four spatial
    quadrants (an odd extra row/column joins the lower/right quadrant) and
    concatenated top-left, top-right, bottom-left, bottom-right.
    """
    if pool not in (SUM, MAX):
        raise ValueError(f"unknown pooling statistic {pool!r}")
    a = _as_image(img)
    patches = extract_patches(a, p, stride=1)
    if model.center_patches:
        patches = patches - patches.mean(axis=1, keepdims=True)
    coords = apply_whitener(model.whitener, patches)
    responses = encode(model, coords)  # (rows*cols, K)
    rows, cols = patch_grid_shape(a.shape[:2], p, 1)
    rmap = responses.reshape(rows, cols, model.basis_size)
    rsplit, csplit = rows // 2, cols // 2
    quadrants = (
        rmap[:rsplit, :csplit],
        rmap[:rsplit, csplit:],
        rmap[rsplit:, :csplit],
        rmap[rsplit:, csplit:],
    )
    reduce = np.sum if pool == SUM else np.max
    blocks = [
        reduce(q.reshape(-1, model.basis_size), axis=0) if q.size else
        np.zeros(model.basis_size)
        for q in quadrants
    ]
    return np.concatenate(blocks)


def encode_dataset(model: BasisModel, images, p: int, pool: str = SUM) -> np.ndarray:
    return np.stack([encode_image(model, img, p, pool) for img in images])


# ---------------------------------------------------------------------------
# one-vs-rest linear SVM


@dataclass
class LinearClassifier:
    """One-vs-rest linear SVM with stored feature standardization."""

    weights: np.ndarray       # (c, D)
    biases: np.ndarray        # (c,)
    feature_mean: np.ndarray  # (D,)
    feature_scale: np.ndarray # (D,)
    classes: np.ndarray       # (c,) original label values
    reg: float
    epochs: int
    seed: int

    def scores(self, D) -> np.ndarray:
        D = np.atleast_2d(np.asarray(D, dtype=np.float64))
        if D.shape[1] != self.weights.shape[1]:
            raise ValueError(
                f"classifier expects {self.weights.shape[1]} features, got {D.shape[1]}"
            )
        Z = (D - self.feature_mean) / self.feature_scale
        return Z @ self.weights.T + self.biases


def train_classifier(D, y, reg: float = 1e-2, epochs: int = 300, seed: int = 0) -> LinearClassifier:
    """Fit a one-vs-rest hinge-loss classifier with L2 regularization.

    Features are standardized with training-set statistics stored in the
    classifier.  Each binary problem is minimized by deterministic subgradient
    descent on the averaged hinge objective with 1/(reg*t) steps and averaged
    iterates; seeded initialization makes runs reproducible, and averaging the
    loss over samples makes the fit invariant to duplicating the training set.
    """
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    y = np.asarray(y)
    if y.shape[0] != D.shape[0]:
        raise ValueError("label count must match descriptor count")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("classification needs at least 2 classes")
    if reg <= 0:
        raise ValueError("regularization must be positive")
    mean = D.mean(axis=0)
    scale = D.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (D - mean) / scale
    m, dim = Z.shape
    rng = np.random.default_rng(seed)
    weights = np.empty((classes.size, dim))
    biases = np.empty(classes.size)
    for ci, cls in enumerate(classes):
        sign = np.where(y == cls, 1.0, -1.0)
        w = rng.normal(0.0, 1e-3, size=dim)
        b = 0.0
        w_avg = np.zeros(dim)
        b_avg = 0.0
        for t in range(1, epochs + 1):
            margins = sign * (Z @ w + b)
            active = margins < 1.0
            eta_t = 1.0 / (reg * t)
            g_w = reg * w - (sign[active, None] * Z[active]).sum(axis=0) / m
            g_b = -sign[active].sum() / m
            w -= eta_t * g_w
            b -= eta_t * g_b
            w_avg += (w - w_avg) / t
            b_avg += (b - b_avg) / t
        weights[ci] = w_avg
        biases[ci] = b_avg
    return LinearClassifier(
        weights=weights, biases=biases, feature_mean=mean, feature_scale=scale,
        classes=classes, reg=reg, epochs=epochs, seed=seed,
    )


def predict(clf: LinearClassifier, D) -> np.ndarray:
    """Argmax class scores; ties break toward the lowest class index."""
    scores = clf.scores(D)
    return clf.classes[np.argmax(scores, axis=1)]


def accuracy(clf: LinearClassifier, D, y) -> float:
    return float(np.mean(predict(clf, D) == np.asarray(y)))


def per_class_accuracy(clf: LinearClassifier, D, y) -> dict[int, float]:
    y = np.asarray(y)
    pred = predict(clf, D)
    return {int(c): float(np.mean(pred[y == c] == c)) for c in np.unique(y)}


# ---------------------------------------------------------------------------
# similarity diagnostics


def descriptor_distance_matrix(descriptors: np.ndarray) -> np.ndarray:
    # explicit differences (not the Gram shortcut) so identical descriptors
    # land at exactly zero and the matrix is exactly symmetric
    D = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    diff = D[:, None, :] - D[None, :, :]
    out = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(out, 0.0)
    return out


def similarity_matrix(model: BasisModel, images, p: int) -> np.ndarray:
    """Pairwise Euclidean distances between pooled descriptors.

    Smaller means more similar; the diagonal is exactly zero.  Use
    :func:`similarity_render` for a bright-block visualization.
    """
    if len(images) < 2:
        raise ValueError("similarity needs at least 2 images")
    return descriptor_distance_matrix(encode_dataset(model, images, p))


def similarity_render(distances: np.ndarray) -> np.ndarray:
    """Map a distance matrix to exp(-d / median offdiagonal d) in (0, 1]."""
    d = np.asarray(distances, dtype=np.float64)
    off = d[~np.eye(d.shape[0], dtype=bool)]
    scale = float(np.median(off)) if off.size else 1.0
    if scale <= 0:
        scale = 1.0
    return np.exp(-d / scale)


def within_between_distances(distances: np.ndarray, labels) -> tuple[float, float]:
    """Mean within-class and between-class entries of a distance matrix."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(distances.shape[0], dtype=bool)
    return (
        float(distances[same & off].mean()),
        float(distances[~same].mean()),
    )
