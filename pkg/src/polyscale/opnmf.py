"""Orthonormal projective non-negative matrix factorization.

Factorizes a non-negative data matrix X (features x subjects) as
``X ~ C @ L`` where the loading matrix is the projection ``L = C.T @ X``.
Only the component matrix C is a free variable; it is updated with the
multiplicative rule ``C <- C * (X X' C) / (C C' X X' C + eps)`` and its
columns renormalized to unit L2 norm after every step. Orthonormality of
the columns is not imposed as a hard constraint (that would conflict with
non-negativity); it emerges from the projective update and the gap
``||C'C - I||_F`` is tracked as a diagnostic.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_feature_matrix, derived_rng, derived_seed

_EPS = 1e-16


def _nndsvd_init(Xdn, k, rng):
    """Non-negative double-SVD initialization (deterministic up to the seeded
    fill of degenerate columns); zeros are replaced by the data mean."""
    U, S, Vt = np.linalg.svd(Xdn, full_matrices=False)
    D = Xdn.shape[0]
    C = np.zeros((D, k))
    C[:, 0] = np.sqrt(S[0]) * np.abs(U[:, 0])
    for j in range(1, k):
        u, v = U[:, j], Vt[j]
        up, un = np.maximum(u, 0.0), np.maximum(-u, 0.0)
        vp, vn = np.maximum(v, 0.0), np.maximum(-v, 0.0)
        n_up, n_un = np.linalg.norm(up), np.linalg.norm(un)
        n_vp, n_vn = np.linalg.norm(vp), np.linalg.norm(vn)
        if n_up * n_vp >= n_un * n_vn and n_up > 0:
            C[:, j] = np.sqrt(S[j] * n_vp / n_up) * up
        elif n_un > 0:
            C[:, j] = np.sqrt(S[j] * n_vn / n_un) * un
    fill = Xdn.mean() if Xdn.mean() > 0 else 1.0
    C[C < 1e-12] = fill
    dead = ~np.isfinite(C).all(axis=0)
    if dead.any():  # rank-deficient tail: seeded random fallback
        C[:, dead] = rng.uniform(0.1, 1.0, size=(D, int(dead.sum())))
    return C


def _objective(Xdn, C):
    """||X - C C'X||_F^2 (residual form: exact and never negative)."""
    R = Xdn - C @ (C.T @ Xdn)
    return float(np.einsum("ij,ij->", R, R))


def _orth_gap(C):
    k = C.shape[1]
    return float(np.linalg.norm(C.T @ C - np.eye(k)))


class OPNMF(BaseEstimator, TransformerMixin):
    """Projective NMF transformer with unit-norm non-negative components.

    Parameters
    ----------
    n_components : int
        Number of components K (the decomposition scale).
    init : {"nndsvd", "random"}
        Deterministic double-SVD initialization (default) or seeded uniform.
    tol : float
        Stop when the relative objective decrease falls below tol.
    max_iter : int
    random_state : int
        Seeds the random init / degenerate-column fallback.

    Attributes (after fit)
    ----------------------
    components_ : ndarray (n_features, K), non-negative, unit-norm columns
    loadings_ : ndarray (K, n_subjects), equal to components_.T @ X.T
    objective_trace_ : list of float, squared Frobenius objective per iteration
    n_iter_, converged_, orthonormality_gap_init_, orthonormality_gap_
    """

    def __init__(self, n_components=2, init="nndsvd", tol=1e-6, max_iter=2000,
                 random_state=0):
        self.n_components = n_components
        self.init = init
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_feature_matrix(X, "X")
        if (X < 0).any():
            i, j = np.argwhere(X < 0)[0]
            raise ValueError(f"negative entry X[{i}, {j}] = {X[i, j]!r}; input must be non-negative")
        Xdn = np.ascontiguousarray(X.T)  # features x subjects
        D, N = Xdn.shape
        k = int(self.n_components)
        if not 1 <= k <= min(D, N):
            raise ValueError(f"n_components must be in [1, {min(D, N)}], got {k}")

        rng = derived_rng(self.random_state)
        if self.init == "nndsvd":
            C = _nndsvd_init(Xdn, k, rng)
        elif self.init == "random":
            C = rng.uniform(0.0, 1.0, size=(D, k)) + 1e-4
        else:
            raise ValueError(f"unknown init {self.init!r}")
        C /= np.linalg.norm(C, axis=0, keepdims=True)

        W = Xdn @ Xdn.T
        trace = [_objective(Xdn, C)]
        self.orthonormality_gap_init_ = _orth_gap(C)
        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            WC = W @ C
            C = C * (WC / (C @ (C.T @ WC) + _EPS))
            norms = np.linalg.norm(C, axis=0, keepdims=True)
            norms[norms == 0.0] = 1.0
            C = C / norms
            obj = _objective(Xdn, C)
            trace.append(obj)
            prev = trace[-2]
            if prev - obj < self.tol * max(prev, _EPS):
                converged = True
                break

        self.components_ = C
        self.loadings_ = C.T @ Xdn
        self.objective_trace_ = trace
        self.n_iter_ = it
        self.converged_ = converged
        self.orthonormality_gap_ = _orth_gap(C)
        return self

    def transform(self, X):
        """Project subjects (rows) onto the components: returns (n, K) loadings."""
        X = check_feature_matrix(X, "X")
        if X.shape[1] != self.components_.shape[0]:
            raise ValueError(
                f"X has {X.shape[1]} features, components were fit with {self.components_.shape[0]}"
            )
        return X @ self.components_

    def reconstruction_error(self, X, loadings=None):
        """Squared Frobenius norm of X.T - components_ @ loadings."""
        X = check_feature_matrix(X, "X")
        if X.shape[1] != self.components_.shape[0]:
            raise ValueError("dimension mismatch between X and components")
        L = self.components_.T @ X.T if loadings is None else np.asarray(loadings, dtype=np.float64)
        R = X.T - self.components_ @ L
        return float(np.einsum("ij,ij->", R, R))


@dataclass
class MultiScaleBasis:
    """Decompositions of one data matrix over a set of scales K.

    ``decompositions`` maps each scale to its fitted OPNMF estimator.
    """

    scales: list
    decompositions: dict
    feature_names: list = None
    subject_ids: list = None
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        self.scales = [int(k) for k in self.scales]
        if not self.scales:
            raise ValueError("basis needs at least one scale")
        if sorted(set(self.scales)) != self.scales:
            raise ValueError("scales must be sorted and distinct")
        if set(self.scales) != set(self.decompositions):
            raise ValueError("scales do not match decomposition keys")

    @property
    def total_component_count(self):
        return int(sum(self.scales))

    @property
    def n_features(self):
        return self.decompositions[self.scales[0]].components_.shape[0]

    @property
    def n_subjects(self):
        return self.decompositions[self.scales[0]].loadings_.shape[1]

    def loadings(self, k):
        return self.decompositions[k].loadings_

    def components(self, k):
        return self.decompositions[k].components_


def fit_multiscale(X, k_list, init="nndsvd", tol=1e-6, max_iter=2000, seed=0,
                   n_jobs=1, feature_names=None, subject_ids=None):
    """Fit one OPNMF per scale in k_list (parallel over scales).

    X is (n_subjects, n_features); per-scale seeds are derived from (seed, K)
    so results do not depend on n_jobs or scale order.
    """
    ks = sorted({int(k) for k in k_list})
    if not ks:
        raise ValueError("k_list must be non-empty")
    X = check_feature_matrix(X, "X")

    def one(k):
        return OPNMF(n_components=k, init=init, tol=tol, max_iter=max_iter,
                     random_state=derived_seed(seed, k)).fit(X)

    fits = Parallel(n_jobs=n_jobs)(delayed(one)(k) for k in ks)
    return MultiScaleBasis(
        scales=ks,
        decompositions=dict(zip(ks, fits)),
        feature_names=list(feature_names) if feature_names is not None else None,
        subject_ids=list(subject_ids) if subject_ids is not None else None,
        seed=seed,
        tol=tol,
    )


def save_basis(basis, path):
    """Persist a basis as manifest.json plus per-scale component/loading CSVs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    D, N = basis.n_features, basis.n_subjects
    feat = basis.feature_names or [f"f{j:04d}" for j in range(D)]
    subj = basis.subject_ids or [f"s{i:04d}" for i in range(N)]
    manifest = {
        "scales": basis.scales,
        "n_features": D,
        "n_subjects": N,
        "seed": basis.seed,
        "tol": basis.tol,
        "per_scale": {
            str(k): {
                "iterations": basis.decompositions[k].n_iter_,
                "converged": bool(basis.decompositions[k].converged_),
                "objective": basis.decompositions[k].objective_trace_[-1],
                "orthonormality_gap": basis.decompositions[k].orthonormality_gap_,
            }
            for k in basis.scales
        },
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for k in basis.scales:
        comp = pd.DataFrame(basis.components(k),
                            columns=[f"comp_{j:02d}" for j in range(k)])
        comp.insert(0, "feature_name", feat)
        comp.to_csv(path / f"components_k{k:03d}.csv", index=False, float_format="%.17g")
        load = pd.DataFrame(basis.loadings(k), columns=subj)
        load.insert(0, "component", np.arange(k))
        load.to_csv(path / f"loadings_k{k:03d}.csv", index=False, float_format="%.17g")


def load_basis(path):
    """Load a basis saved by save_basis."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    scales = [int(k) for k in manifest["scales"]]
    decs = {}
    feat = subj = None
    for k in scales:
        comp = pd.read_csv(path / f"components_k{k:03d}.csv")
        feat = comp["feature_name"].tolist()
        C = comp.drop(columns="feature_name").to_numpy(dtype=np.float64)
        load = pd.read_csv(path / f"loadings_k{k:03d}.csv")
        subj = [c for c in load.columns if c != "component"]
        L = load.drop(columns="component").to_numpy(dtype=np.float64)
        est = OPNMF(n_components=k, tol=manifest["tol"])
        est.components_ = C
        est.loadings_ = L
        per = manifest["per_scale"][str(k)]
        est.n_iter_ = per["iterations"]
        est.converged_ = per["converged"]
        est.objective_trace_ = [per["objective"]]
        est.orthonormality_gap_ = per["orthonormality_gap"]
        decs[k] = est
    return MultiScaleBasis(scales=scales, decompositions=decs, feature_names=feat,
                           subject_ids=subj, seed=manifest["seed"], tol=manifest["tol"])
