"""Weighted soft-margin linear SVM solved in the dual.

Minimizes ``0.5 ||w||^2 + reg_c * sum_i weight_i * hinge(y_i, w.x_i + b)``
via sequential minimal optimization on the dual with per-sample boxes
``0 <= alpha_i <= reg_c * weight_i`` and the explicit equality constraint
``sum_i y_i alpha_i = 0`` (the bias is exact, not regularized). Pair
selection is the maximal violating pair; the stopping test is the usual
KKT gap max-over-I_up minus min-over-I_low below tol. Zero-weight samples
have a zero-width box and are never selected, so they cannot influence the
solution.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._validation import check_feature_matrix, check_diagnosis_labels


@dataclass(frozen=True)
class Hyperplane:
    """One face of a polytope: decision score is weights @ x + bias."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias)):
            raise ValueError("hyperplane parameters must be finite")

    def scores(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias


@njit(cache=True)
def _smo(G, y, box, tol, max_iter, alpha):  # pragma: no cover - exercised via wrappers
    n = y.shape[0]
    # gradient of 0.5 a'Qa - e'a at the (possibly warm) start
    grad = np.empty(n)
    for t in range(n):
        acc = -1.0
        for s in range(n):
            if alpha[s] != 0.0:
                acc += y[t] * y[s] * G[t, s] * alpha[s]
        grad[t] = acc
    it = 0
    while True:
        # first index: maximal KKT violation over I_up
        i = -1
        gmax = -1e300
        gmin = 1e300
        for t in range(n):
            yt = y[t]
            m = -yt * grad[t]
            if ((yt > 0 and alpha[t] < box[t]) or (yt < 0 and alpha[t] > 0)) and m > gmax:
                gmax = m
                i = t
            if ((yt > 0 and alpha[t] > 0) or (yt < 0 and alpha[t] < box[t])) and m < gmin:
                gmin = m
        if i < 0 or gmin > 1e299:
            gmax = 0.0
            gmin = 0.0
            break
        if gmax - gmin < tol or it >= max_iter:
            break
        # second index: best second-order objective decrease among I_low
        j = -1
        best = -1.0
        for t in range(n):
            yt = y[t]
            if not ((yt > 0 and alpha[t] > 0) or (yt < 0 and alpha[t] < box[t])):
                continue
            m = -yt * grad[t]
            bdiff = gmax - m
            if bdiff <= 0.0:
                continue
            a = G[i, i] + G[t, t] - 2.0 * G[i, t]
            if a <= 1e-12:
                a = 1e-12
            gain = bdiff * bdiff / a
            if gain > best:
                best = gain
                j = t
        if j < 0:
            break
        yi = y[i]
        yj = y[j]
        a = G[i, i] + G[j, j] - 2.0 * G[i, j]
        if a <= 1e-12:
            a = 1e-12
        d = (gmax - (-yj * grad[j])) / a
        # largest step keeping both alphas inside their boxes
        dmax_i = box[i] - alpha[i] if yi > 0 else alpha[i]
        dmax_j = alpha[j] if yj > 0 else box[j] - alpha[j]
        if d > dmax_i:
            d = dmax_i
        if d > dmax_j:
            d = dmax_j
        dai = yi * d
        daj = -yj * d
        alpha[i] += dai
        alpha[j] += daj
        for t in range(n):
            grad[t] += y[t] * (dai * yi * G[t, i] + daj * yj * G[t, j])
        it += 1
    bias = 0.5 * (gmax + gmin)
    gap = gmax - gmin
    return alpha, bias, it, gap


def _newton_refine(G, y, box, alpha, n_steps=4):
    """Jump the free-set variables to their exact KKT optimum.

    On correlated data the pairwise updates crawl once the active set has
    stabilized; solving the bordered KKT system over the strictly-interior
    alphas (holding bounded ones fixed) and line-searching toward that point
    is a guaranteed dual ascent, so it can only accelerate the outer loop.
    """
    for _ in range(n_steps):
        free = (alpha > 0.0) & (alpha < box)
        nf = int(free.sum())
        if nf == 0:
            break
        bounded = ~free
        yF = y[free]
        QFF = np.outer(yF, yF) * G[np.ix_(free, free)]
        ab = alpha[bounded] * y[bounded]
        rhs_top = 1.0 - yF * (G[np.ix_(free, bounded)] @ ab)
        M = np.zeros((nf + 1, nf + 1))
        M[:nf, :nf] = QFF
        M[:nf, nf] = yF
        M[nf, :nf] = yF
        rhs = np.empty(nf + 1)
        rhs[:nf] = rhs_top
        rhs[nf] = -float(y[bounded] @ alpha[bounded])
        try:
            sol = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(sol).all():
            break
        d = sol[:nf] - alpha[free]
        if np.abs(d).max() < 1e-14:
            break
        step_hi = np.where(d > 0, (box[free] - alpha[free]) / np.where(d > 0, d, 1.0), np.inf)
        step_lo = np.where(d < 0, -alpha[free] / np.where(d < 0, d, 1.0), np.inf)
        s = min(1.0, float(np.minimum(step_hi, step_lo).min()))
        if not s > 0.0:
            break
        alpha = alpha.copy()
        alpha[free] = np.clip(alpha[free] + s * d, 0.0, box[free])
        if s >= 1.0:
            break
    return alpha


def solve_svm_dual(G, y, box, tol, max_iter, alpha0=None):
    """Solve the dual on a precomputed Gram matrix.

    Runs SMO in chunks with an active-set Newton refinement in between
    (pure acceleration; the SMO KKT gap remains the exit criterion).
    Returns (alpha, bias, n_iter, kkt_gap). Callers that solve many
    subproblems over the same samples should precompute G once; alpha0
    warm-starts the dual (it is clipped to the box and rebalanced so the
    equality constraint holds before iterating).
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    box = np.ascontiguousarray(box, dtype=np.float64)
    n = y.shape[0]
    if alpha0 is None:
        alpha = np.zeros(n)
    else:
        alpha = feasible_warm_start(alpha0, y, box)
    max_iter = int(max_iter)
    chunk = max(2 * n, 1000)
    total = 0
    bias = 0.0
    gap = 0.0
    while True:
        budget = min(chunk, max_iter - total)
        if budget <= 0:
            break
        alpha, bias, it, gap = _smo(G, y, box, float(tol), budget, alpha)
        total += it
        if gap < tol or it < budget:
            break
        alpha = _newton_refine(G, y, box, alpha)
    return alpha, bias, total, gap


def feasible_warm_start(alpha, y, box):
    """Clip a dual vector to a new box and rescale one class so the
    equality constraint sum_i y_i alpha_i = 0 holds again."""
    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, box)
    delta = float(y @ a)
    if delta > 0.0:
        pos = y > 0
        s = a[pos].sum()
        a[pos] *= (s - delta) / s if s > 0 else 0.0
    elif delta < 0.0:
        neg = y < 0
        s = a[neg].sum()
        a[neg] *= (s + delta) / s if s > 0 else 0.0
    return a


def fit_weighted_linear_svm(features, labels, sample_weights=None, reg_c=1.0,
                            tol=1e-6, max_iter=200000):
    """Fit one weighted soft-margin linear SVM.

    Parameters
    ----------
    features : array (n_samples, n_features)
    labels : array of -1/+1
    sample_weights : non-negative array (n_samples,), default all ones
    reg_c : float > 0, hinge penalty
    tol : float, KKT gap at which the dual solver stops
    max_iter : int, SMO iteration cap

    Returns a Hyperplane. Both classes must carry positive total weight.
    """
    X = check_feature_matrix(np.atleast_2d(features), "features")
    y = check_diagnosis_labels(labels, n_expected=X.shape[0], name="labels")
    if sample_weights is None:
        sw = np.ones(X.shape[0])
    else:
        sw = np.asarray(sample_weights, dtype=np.float64)
        if sw.shape != (X.shape[0],):
            raise ValueError("sample_weights length must match the number of samples")
        if not np.isfinite(sw).all() or (sw < 0).any():
            raise ValueError("sample_weights must be finite and non-negative")
    if reg_c <= 0:
        raise ValueError("reg_c must be positive")
    for cls in (-1, 1):
        if sw[y == cls].sum() <= 0:
            raise ValueError(f"class {cls} has zero total weight")

    G = X @ X.T
    alpha, bias, _, _ = solve_svm_dual(G, y.astype(np.float64), reg_c * sw, tol, max_iter)
    w = X.T @ (alpha * y)
    return Hyperplane(weights=w, bias=float(bias))


def svm_objective(hyperplane, features, labels, sample_weights, reg_c):
    """Primal objective of the weighted hinge problem at a given hyperplane."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    hinge = np.maximum(0.0, 1.0 - y * hyperplane.scores(X))
    return 0.5 * float(hyperplane.weights @ hyperplane.weights) + reg_c * float(
        np.asarray(sample_weights, dtype=np.float64) @ hinge
    )
