"""Basis optimization: k-means init, fixed-point row updates, gradient descent.

Kernel modes (gaussian kernel) are trained row by row.  Freezing every kernel
evaluation at the current iterate turns the stationarity condition for row p
into a weighted-average equation

    sum_j c_j (w_p - v_j) = 0,   v_j in {x_i} union {w_v, v != p},

solved directly as w_p = (sum_j c_j v_j) / (sum_j c_j).  Because the frozen
linear form evaluated at the current row equals the true gradient row, a
vanishing update step means a stationary point.

The raw scheme has no descent guarantee, so each full row sweep is accepted
only if the objective did not increase; otherwise the sweep is rolled back and
retried with damping pushed toward 1 (up to 5 times) before giving up.  The
reported objective trace is therefore non-increasing by construction.

Linear modes run backtracking gradient descent on the full objective.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from .kernels import GAUSSIAN, LINEAR, KernelSpec, gram
from .objective import (
    BasisModel,
    default_pooling,
    full_gradient,
    full_objective,
    grid3x3_pooling,
    identity_pooling,
    is_discriminative,
    is_kernel_mode,
    make_selectors,
)
from .whitening import (
    WhitenTransform,
    apply_whitener,
    fit_kpca_whitener,
    fit_pca_whitener,
    identity_whitener,
)

FIXED_POINT = "fixed_point"
GRADIENT_DESCENT = "gradient_descent"

_STALL_EPS = 1e-12
_MAX_REJECTS = 5


@dataclass
class SolveConfig:
    max_outer_iters: int = 100
    tol: float = 1e-5              # relative max-row-change stopping threshold
    kmeans_iters: int = 50
    seed: int = 0
    damping: float = 0.0           # updated row = damping*old + (1-damping)*solved
    linear_solver: str = GRADIENT_DESCENT
    step_size: float = 1e-1        # linear modes, halved by backtracking

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.linear_solver not in (FIXED_POINT, GRADIENT_DESCENT):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass
class SolveReport:
    objective_trace: list[float]
    converged: bool
    iterations_used: int
    final_grad_norm: float
    stall_count: int = 0


@dataclass
class Hyperparams:
    """Model hyperparameters for :func:`train` (optimization knobs live in
    :class:`SolveConfig`)."""

    mode: str = "krica"
    kernel: KernelSpec | None = None      # default: linear for linear modes, gaussian else
    basis_size: int = 64
    class_count: int = 0                  # d-modes only; K must divide evenly
    lam: float = 1e-2
    alpha: float = 1e-1
    eta: float | None = None              # None -> per_class_size + 1
    pooling: str = "auto"                 # identity | grid3x3 | auto
    pooling_eps: float = 1e-6
    whiten: str = "auto"                  # none | pca | kpca | auto
    retained: float | None = None         # pca energy (0,1] or kpca axis count
    whiten_eps: float = 1e-8
    whiten_sample_limit: int = 2000       # landmark cap for whitener fitting
    center_patches: bool = True
    rank_one_selectors: bool = True


# ---------------------------------------------------------------------------
# k-means initialization


def _plusplus_seeds(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    chosen = np.empty(K, dtype=np.intp)
    chosen[0] = rng.integers(m)
    diff = X - X[chosen[0]]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for t in range(1, K):
        total = d2.sum()
        if total <= 0.0:
            # every point coincides with a center; take the first unchosen
            # index to stay deterministic
            remaining = np.setdiff1d(np.arange(m), chosen[:t])
            chosen[t] = remaining[0]
        else:
            r = rng.random() * total
            chosen[t] = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), m - 1)
        diff = X - X[chosen[t]]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return X[chosen].copy()


def kmeans_init(X, K: int, cfg: SolveConfig) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; deterministic given cfg.seed.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    m = X.shape[0]
    if K > m:
        raise ValueError(f"cannot place {K} centroids on {m} samples")
    if K < 1:
        raise ValueError("K must be positive")
    rng = np.random.default_rng(cfg.seed)
    centroids = _plusplus_seeds(X, K, rng)
    assign = np.full(m, -1, dtype=np.intp)
    xx = np.einsum("ij,ij->i", X, X)
    for _ in range(max(cfg.kmeans_iters, 1)):
        d2 = xx[:, None] - 2.0 * X @ centroids.T + np.einsum("ij,ij->i", centroids, centroids)[None, :]
        new_assign = np.argmin(d2, axis=1)
        nearest = d2[np.arange(m), new_assign]
        for k in range(K):
            mask = new_assign == k
            if mask.any():
                centroids[k] = X[mask].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                centroids[k] = X[far]
                new_assign[far] = k
                nearest[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centroids


# ---------------------------------------------------------------------------
# fixed-point row updates (gaussian kernel modes)


class _SweepState:
    """Responses and per-sample aggregates kept current across one row sweep.

    S and M are refreshed from W at sweep start and patched incrementally as
    rows update, so a full sweep costs O(K^2 m + K m n) instead of
    O(K^2 m n) from per-row recomputation.
    """

    def __init__(self, model: BasisModel, X: np.ndarray, labels):
        self.model = model
        self.X = X
        self.m = X.shape[0]
        self.labels = labels
        self.S = gram(model.kernel, model.W, X)       # (K, m)
        self.M = gram(model.kernel, model.W, model.W)  # (K, K)
        if model.lam != 0.0:
            self.A = model.pooling.epsilon + model.pooling.H @ (self.S * self.S)
        if labels is not None and model.alpha != 0.0 and is_discriminative(model.mode):
            sel = model.selectors
            self.Dp = sel.D_plus[labels]    # (m, K)
            self.Dm = sel.D_minus[labels]
            if model.rank_one_selectors:
                self.dp = np.einsum("ik,ki->i", self.Dp, self.S)
                self.dm = np.einsum("ik,ki->i", self.Dm, self.S)
        else:
            self.Dp = None

    def coefficients(self, p: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Frozen-kernel weights for row p: (cx over samples, cv over rows, sum)."""
        model = self.model
        e_p = -4.0 * self.S[p] + 2.0 * (self.M[p] @ self.S)
        if model.lam != 0.0:
            pg = self.S[p] * (model.pooling.H[:, p] @ (1.0 / np.sqrt(self.A)))
            e_p = e_p + model.lam * pg
        if self.Dp is not None:
            if model.rank_one_selectors:
                dg = 2.0 * (
                    self.Dm[:, p] * self.dm
                    - self.Dp[:, p] * self.dp
                    + model.eta * self.S[p]
                )
            else:
                dg = 2.0 * (self.Dm[:, p] - self.Dp[:, p] + model.eta) * self.S[p]
            e_p = e_p + model.alpha * dg
        e_p /= self.m
        f_p = (2.0 / self.m) * (self.S @ self.S[p])
        gamma = model.kernel.gamma
        cx = -2.0 * gamma * e_p * self.S[p]
        cv = -2.0 * gamma * f_p * self.M[p]
        cv[p] = 0.0
        return cx, cv, float(cx.sum() + cv.sum())

    def set_row(self, p: int, row: np.ndarray) -> None:
        model = self.model
        model.W[p] = row
        diff = self.X - row
        s_new = np.exp(-model.kernel.gamma * np.einsum("ij,ij->i", diff, diff))
        if model.lam != 0.0:
            self.A += np.outer(model.pooling.H[:, p], s_new * s_new - self.S[p] * self.S[p])
        if self.Dp is not None and model.rank_one_selectors:
            delta = s_new - self.S[p]
            self.dp += self.Dp[:, p] * delta
            self.dm += self.Dm[:, p] * delta
        self.S[p] = s_new
        diff = model.W - row
        m_new = np.exp(-model.kernel.gamma * np.einsum("ij,ij->i", diff, diff))
        m_new[p] = 1.0
        self.M[p, :] = m_new
        self.M[:, p] = m_new


def _sweep(model: BasisModel, X: np.ndarray, labels, damping: float) -> int:
    """One ascending pass of frozen-kernel updates over all rows in place.

    A row is skipped (stall) when its coefficient sum is not positive: the
    frozen surrogate then has no minimizer along the update and the solved
    point would be an ascent target, which the objective safeguard would only
    reject wholesale.  Skipped rows get revisited on later sweeps once their
    neighborhood has moved.
    """
    state = _SweepState(model, X, labels)
    stalls = 0
    for p in range(model.basis_size):
        cx, cv, denom = state.coefficients(p)
        if denom < _STALL_EPS:
            stalls += 1
            continue
        solved = (cx @ X + cv @ model.W) / denom
        state.set_row(p, damping * model.W[p] + (1.0 - damping) * solved)
    return stalls


def _check_fixed_point_inputs(model: BasisModel, X, labels):
    if not is_kernel_mode(model.mode):
        raise ValueError("fixed-point updates apply to kernel modes only")
    if model.kernel.kind != GAUSSIAN:
        raise ValueError("fixed-point updates need the gaussian kernel")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if is_discriminative(model.mode) and labels is None:
        raise ValueError(f"mode {model.mode} requires labels")
    labels = np.asarray(labels) if labels is not None else None
    return X, labels


def fixed_point_step(model: BasisModel, X, labels=None, p: int = 0, damping: float = 0.0) -> np.ndarray:
    """One frozen-kernel update of basis row p (kernel modes only).

    Returns damping*old + (1-damping)*solved; when the coefficient sum is
    numerically zero the previous row is returned unchanged.
    """
    X, labels = _check_fixed_point_inputs(model, X, labels)
    if not 0 <= p < model.basis_size:
        raise ValueError(f"row index {p} out of range")
    state = _SweepState(model, X, labels)
    cx, cv, denom = state.coefficients(p)
    if abs(denom) < _STALL_EPS:
        return model.W[p].copy()
    solved = (cx @ X + cv @ model.W) / denom
    return damping * model.W[p] + (1.0 - damping) * solved


def fixed_point_residuals(model: BasisModel, X, labels=None) -> np.ndarray:
    """Norm of the frozen-kernel linear form at the current rows.

    Entry p is ||sum_j c_j (w_p - v_j)|| evaluated at W itself, which equals
    the exact gradient row norm for the gaussian kernel; near zero at a
    converged basis.
    """
    X, labels = _check_fixed_point_inputs(model, X, labels)
    state = _SweepState(model, X, labels)
    out = np.empty(model.basis_size)
    for p in range(model.basis_size):
        cx, cv, denom = state.coefficients(p)
        out[p] = np.linalg.norm(denom * model.W[p] - (cx @ X + cv @ model.W))
    return out


def _max_relative_row_change(W_new: np.ndarray, W_old: np.ndarray) -> float:
    num = np.linalg.norm(W_new - W_old, axis=1)
    den = 1.0 + np.linalg.norm(W_old, axis=1)
    return float((num / den).max())


def _train_fixed_point(model: BasisModel, X, labels, cfg: SolveConfig):
    trace = [full_objective(model, X, labels)]
    if not np.isfinite(trace[0]):
        raise ValueError("objective is not finite at initialization")
    converged = False
    stalls = 0
    iters = 0
    for _ in range(cfg.max_outer_iters):
        W_prev = model.W.copy()
        damping = cfg.damping
        accepted = False
        for _attempt in range(_MAX_REJECTS + 1):
            sweep_stalls = _sweep(model, X, labels, damping)
            f_new = full_objective(model, X, labels)
            if f_new <= trace[-1]:
                accepted = True
                stalls += sweep_stalls
                break
            model.W = W_prev.copy()
            damping = 0.5 * (1.0 + damping)
        if not accepted:
            break
        trace.append(f_new)
        iters += 1
        if _max_relative_row_change(model.W, W_prev) < cfg.tol:
            converged = True
            break
    return trace, converged, iters, stalls


def _train_gradient_descent(model: BasisModel, X, labels, cfg: SolveConfig):
    trace = [full_objective(model, X, labels)]
    if not np.isfinite(trace[0]):
        raise ValueError("objective is not finite at initialization")
    converged = False
    iters = 0
    for _ in range(cfg.max_outer_iters):
        g = full_gradient(model, X, labels)
        W_prev = model.W.copy()
        step = cfg.step_size
        improved = False
        for _halving in range(40):
            model.W = W_prev - step * g
            f_new = full_objective(model, X, labels)
            if f_new <= trace[-1]:
                improved = True
                break
            step *= 0.5
        if not improved:
            # no step along -g improves: numerically stationary
            model.W = W_prev
            converged = True
            break
        trace.append(f_new)
        iters += 1
        if _max_relative_row_change(model.W, W_prev) < cfg.tol:
            converged = True
            break
    return trace, converged, iters, 0


# ---------------------------------------------------------------------------
# end-to-end fit


def _fit_whitener(X: np.ndarray, hp: Hyperparams, rng: np.random.Generator) -> WhitenTransform:
    kind = hp.whiten
    if kind == "auto":
        kind = "kpca" if is_kernel_mode(hp.mode) else "pca"
    if kind == "none":
        return identity_whitener()
    fit_X = X
    if hp.whiten_sample_limit and X.shape[0] > hp.whiten_sample_limit:
        idx = np.sort(rng.choice(X.shape[0], size=hp.whiten_sample_limit, replace=False))
        fit_X = X[idx]
    if kind == "pca":
        energy = 1.0 if hp.retained is None else float(hp.retained)
        return fit_pca_whitener(fit_X, retained_energy=energy, eps=hp.whiten_eps)
    if kind == "kpca":
        kernel = hp.kernel if hp.kernel is not None else KernelSpec(GAUSSIAN)
        retained = X.shape[1] if hp.retained is None else int(hp.retained)
        retained = min(retained, fit_X.shape[0])
        return fit_kpca_whitener(fit_X, kernel, retained, eps=hp.whiten_eps)
    raise ValueError(f"unknown whitening kind {kind!r}")


def _resolve_model(Xw, labels, hp: Hyperparams, whitener, cfg: SolveConfig) -> BasisModel:
    kernel = hp.kernel
    if kernel is None:
        kernel = KernelSpec(GAUSSIAN) if is_kernel_mode(hp.mode) else KernelSpec(LINEAR)
    selectors = None
    eta = 0.0
    per_class_init = None
    if is_discriminative(hp.mode):
        if labels is None:
            raise ValueError(f"mode {hp.mode} requires labels")
        if hp.class_count < 2:
            raise ValueError("discriminative modes need class_count >= 2")
        if hp.basis_size % hp.class_count != 0:
            raise ValueError(
                f"basis size {hp.basis_size} not divisible by {hp.class_count} classes"
            )
        selectors = make_selectors(hp.basis_size // hp.class_count, hp.class_count)
        eta = float(hp.eta) if hp.eta is not None else selectors.per_class_size + 1.0
        # each class block starts on its own class's samples so the structured
        # basis begins aligned with the selectors
        k = selectors.per_class_size
        blocks = []
        for y in range(hp.class_count):
            class_rows = Xw[np.asarray(labels) == y]
            if class_rows.shape[0] < k:
                raise ValueError(
                    f"class {y} has {class_rows.shape[0]} samples, fewer than "
                    f"the {k} basis vectors of its block"
                )
            block_cfg = SolveConfig(
                kmeans_iters=cfg.kmeans_iters, seed=cfg.seed + y,
                max_outer_iters=cfg.max_outer_iters, tol=cfg.tol,
            )
            blocks.append(kmeans_init(class_rows, k, block_cfg))
        per_class_init = np.vstack(blocks)
    if hp.pooling == "auto":
        pooling = default_pooling(hp.basis_size, hp.mode, hp.pooling_eps)
    elif hp.pooling == "identity":
        pooling = identity_pooling(hp.basis_size, hp.pooling_eps)
    elif hp.pooling == "grid3x3":
        pooling = grid3x3_pooling(hp.basis_size, hp.pooling_eps)
    else:
        raise ValueError(f"unknown pooling topology {hp.pooling!r}")
    W0 = per_class_init if per_class_init is not None else kmeans_init(Xw, hp.basis_size, cfg)
    return BasisModel(
        W=W0, mode=hp.mode, kernel=kernel, pooling=pooling, selectors=selectors,
        lam=hp.lam, alpha=hp.alpha, eta=eta, whitener=whitener,
        center_patches=hp.center_patches, rank_one_selectors=hp.rank_one_selectors,
        seed=cfg.seed,
    )


def train(X, labels, hp: Hyperparams, cfg: SolveConfig | None = None):
    """Fit a BasisModel on raw patch rows X (m x n).

    Applies per-patch centering (when enabled), fits the configured whitener,
    initializes the basis with seeded k-means on the whitened coordinates, and
    optimizes: fixed-point row sweeps for kernel modes, backtracking gradient
    descent for linear modes.  Returns (model, report) with a non-increasing
    objective trace; everything is deterministic given cfg.seed.
    """
    cfg = cfg or SolveConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != X.shape[0]:
            raise ValueError("label count must match sample count")
    if hp.mode not in ("rica", "krica", "d_rica", "d_krica"):
        raise ValueError(f"unknown mode {hp.mode!r}")
    if hp.center_patches:
        X = X - X.mean(axis=1, keepdims=True)
    rng = np.random.default_rng(cfg.seed)
    whitener = _fit_whitener(X, hp, rng)
    Xw = apply_whitener(whitener, X)
    if Xw.shape[1] == 0:
        raise ValueError("whitener retained no axes; cannot train")
    model = _resolve_model(Xw, labels, hp, whitener, cfg)

    if is_kernel_mode(hp.mode):
        if model.kernel.kind != GAUSSIAN:
            raise ValueError("kernel-mode training needs the gaussian kernel")
        trace, converged, iters, stalls = _train_fixed_point(model, Xw, labels, cfg)
    else:
        if cfg.linear_solver == FIXED_POINT:
            raise ValueError(
                "fixed-point updates are undefined for linear modes; "
                "use linear_solver='gradient_descent'"
            )
        trace, converged, iters, stalls = _train_gradient_descent(model, Xw, labels, cfg)

    grad_norm = float(np.linalg.norm(full_gradient(model, Xw, labels)))
    report = SolveReport(
        objective_trace=trace, converged=converged, iterations_used=iters,
        final_grad_norm=grad_norm, stall_count=stalls,
    )
    return model, report


# ---------------------------------------------------------------------------
# finite-difference gradient verification


def grad_check(model: BasisModel, X, labels=None, step: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central differences.

    Checks every coordinate of W, or a seeded random subsample of 200 when
    K*n exceeds 200.  The relative error denominator is
    max(1e-8, |analytic| + |numeric|).
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    G = full_gradient(model, X, labels)
    K, n = model.W.shape
    coords = [(p, j) for p in range(K) for j in range(n)]
    if len(coords) > 200:
        rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=200, replace=False)
        coords = [coords[i] for i in picks]
    W0 = model.W.copy()
    worst = 0.0
    for p, j in coords:
        h = step * (1.0 + abs(W0[p, j]))
        model.W = W0.copy()
        model.W[p, j] = W0[p, j] + h
        f_plus = full_objective(model, X, labels)
        model.W[p, j] = W0[p, j] - h
        f_minus = full_objective(model, X, labels)
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = G[p, j]
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    model.W = W0
    return worst
