"""Semi-supervised max-margin convex-polytope clustering.

A polytope of ``n_clusters`` linear faces separates patients from controls:
controls lie inside (all face scores negative), each patient outside at
least one face. Fitting alternates between (a) solving one weighted linear
SVM per face, where a face's positives are the patients currently assigned
to it and all controls participate in every face's problem with weight
1/n_clusters, and (b) reassigning every patient to its highest-scoring
face. The assignment step never increases the joint objective and the SVM
step is solved to tolerance, so the recorded objective trace is
non-increasing up to solver tolerance (except across an empty-cluster
repair, which forcibly moves the worst-fit patient into the empty face).
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans

from ._validation import check_diagnosis_labels, check_feature_matrix, derived_rng, derived_seed
from .svm import Hyperplane, solve_svm_dual, svm_objective

# the SVM subproblems are solved two decades tighter than the model tol so
# that the alternation objective stays monotone within tol
_SOLVER_TOL_FACTOR = 1e-2


def init_membership(patient_features, n_clusters, strategy="kmeans", seed=0, n_init=10):
    """Initial hard assignment of patients to clusters; every cluster non-empty.

    strategy "random" draws uniform cluster ids (empties are refilled from
    the largest cluster); "kmeans" clusters the patient features.
    """
    Xp = check_feature_matrix(patient_features, "patient_features")
    c = int(n_clusters)
    if c < 1:
        raise ValueError("n_clusters must be >= 1")
    if Xp.shape[0] < c:
        raise ValueError(f"cannot split {Xp.shape[0]} patients into {c} clusters")
    if c == 1:
        return np.zeros(Xp.shape[0], dtype=np.int64)
    if strategy == "random":
        rng = derived_rng(seed)
        assign = rng.integers(0, c, size=Xp.shape[0])
        return _fill_empty_clusters(assign, Xp, c)
    if strategy == "kmeans":
        km = KMeans(n_clusters=c, n_init=n_init, random_state=derived_seed(seed) % (2**31))
        return km.fit_predict(Xp).astype(np.int64)
    raise ValueError(f"unknown init strategy {strategy!r}")


def _fill_empty_clusters(assign, Xp, c):
    """Move the most off-center patient of the largest cluster into each empty one."""
    assign = np.asarray(assign, dtype=np.int64).copy()
    counts = np.bincount(assign, minlength=c)
    for j in range(c):
        if counts[j] > 0:
            continue
        src = int(np.argmax(counts))
        members = np.flatnonzero(assign == src)
        centroid = Xp[members].mean(axis=0)
        pick = members[np.argmax(np.linalg.norm(Xp[members] - centroid, axis=1))]
        assign[pick] = j
        counts[src] -= 1
        counts[j] += 1
    return assign


def _joint_objective(W, b, Xs, y, assign, reg_c):
    """Sum of face margins plus weighted hinge losses at a given assignment."""
    c = W.shape[0]
    scores = Xs @ W.T + b
    hinge = np.maximum(0.0, 1.0 - y[:, None] * scores)
    controls = y == -1
    patients = np.flatnonzero(y == 1)
    total = 0.5 * float(np.einsum("ij,ij->", W, W))
    total += reg_c * float(hinge[controls].sum()) / c
    total += reg_c * float(hinge[patients, assign].sum())
    return total


def _repair_empty(assign, scores, c):
    """Re-seed each empty face with the worst-fit patient (lowest max score)."""
    moved = 0
    max_scores = scores.max(axis=1)
    for j in range(c):
        if (assign == j).any():
            continue
        counts = np.bincount(assign, minlength=c)
        movable = np.flatnonzero(counts[assign] >= 2)
        if movable.size == 0:
            continue
        pick = movable[np.argmin(max_scores[movable])]
        assign[pick] = j
        moved += 1
    return moved


def _alternate(Xs, y, G, assign0, c, reg_c, solver_tol, max_alternations, svm_max_iter):
    """Run the membership/faces alternation from one initial assignment.

    Face duals are warm-started across alternations (the subproblems change
    only through the reassigned patients' boxes). Stops on a repair-free
    fixed point, on an assignment revisit (a repair-induced cycle cannot
    improve further), or when the alternation budget is exhausted; the
    returned assignment is always the one the final faces were solved on.
    """
    n, k = Xs.shape
    yf = y.astype(np.float64)
    patients = np.flatnonzero(y == 1)
    assign = np.asarray(assign0, dtype=np.int64).copy()
    W = np.zeros((c, k))
    b = np.zeros(c)
    alphas = np.zeros((c, n))
    trace = []
    n_repairs = 0
    converged = False
    seen = {assign.tobytes()}
    warm_cap = max(2000, 10 * n)
    for t in range(max_alternations):
        for j in range(c):
            sw = np.zeros(n)
            sw[y == -1] = 1.0 / c
            sw[patients[assign == j]] = 1.0
            box = reg_c * sw
            # capped warm attempt; a stale dual can be a bad start, so fall
            # back to a cold solve when the cap is hit short of tolerance
            alpha, bias, niter, gap = solve_svm_dual(G, yf, box, solver_tol,
                                                     warm_cap, alpha0=alphas[j])
            if gap >= solver_tol and niter >= warm_cap:
                alpha, bias, _, _ = solve_svm_dual(G, yf, box, solver_tol, svm_max_iter)
            alphas[j] = alpha
            W[j] = Xs.T @ (alpha * yf)
            b[j] = bias
        trace.append(_joint_objective(W, b, Xs, y, assign, reg_c))
        scores = Xs[patients] @ W.T + b
        new_assign = np.argmax(scores, axis=1)
        repaired = _repair_empty(new_assign, scores, c)
        n_repairs += repaired
        if repaired == 0 and np.array_equal(new_assign, assign):
            converged = True
            break
        if t == max_alternations - 1:
            break
        key = new_assign.tobytes()
        if key in seen:
            break
        seen.add(key)
        assign = new_assign
    return W.copy(), b.copy(), assign, trace, n_repairs, converged


class PolytopeClustering(BaseEstimator):
    """Single-scale polytope classifier/clusterer over loading features.

    Parameters
    ----------
    n_clusters : int, number of faces (patient subtypes)
    reg_c : float, hinge penalty of every face's SVM
    n_restarts : int
        Independent initializations; their assignments are combined by
        co-occurrence consensus and the model is refit from the consensus.
    max_alternations : int
    tol : float, convergence tolerance handed to the SVM subproblems
    init : {"kmeans", "random"}, restart initialization strategy
    standardize : bool
        Standardize features (train mean/variance) before fitting; the
        scaler is stored and applied by every predict method.
    random_state : int

    Attributes
    ----------
    weights_ : ndarray (n_clusters, n_features), biases_ : ndarray (n_clusters,)
    labels_ : ndarray (n_patients,), face assignment of each patient
    patient_index_ : row indices of patients in the training X
    joint_objective_, objective_trace_, n_alternations_, converged_, n_repairs_
    mean_, scale_ : stored scaler
    """

    def __init__(self, n_clusters=2, reg_c=1.0, n_restarts=10, max_alternations=50,
                 tol=1e-6, init="kmeans", standardize=True, random_state=0):
        self.n_clusters = n_clusters
        self.reg_c = reg_c
        self.n_restarts = n_restarts
        self.max_alternations = max_alternations
        self.tol = tol
        self.init = init
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y, initial_assignments=None):
        """Fit the polytope. When initial_assignments is given (one cluster id
        per patient row) a single warm-started run replaces the restarts."""
        X = check_feature_matrix(X, "X")
        y = check_diagnosis_labels(y, n_expected=X.shape[0])
        c = int(self.n_clusters)
        if c < 1:
            raise ValueError("n_clusters must be >= 1")
        patients = np.flatnonzero(y == 1)
        if patients.size < c:
            raise ValueError(f"need at least {c} patients for {c} clusters")
        if self.reg_c <= 0:
            raise ValueError("reg_c must be positive")

        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0.0] = 1.0
            self.scale_ = scale
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Xs = (X - self.mean_) / self.scale_
        G = Xs @ Xs.T
        solver_tol = self.tol * _SOLVER_TOL_FACTOR

        if initial_assignments is not None:
            a0 = self._check_init(initial_assignments, patients.size, c, Xs[patients])
            result = _alternate(Xs, y, G, a0, c, self.reg_c, solver_tol,
                                self.max_alternations, 500000)
        else:
            assigns = []
            for r in range(int(self.n_restarts)):
                a0 = init_membership(Xs[patients], c, strategy=self.init,
                                     seed=derived_seed(self.random_state, r),
                                     n_init=1 if self.init == "kmeans" else 10)
                _, _, assign, _, _, _ = _alternate(Xs, y, G, a0, c, self.reg_c,
                                                   solver_tol, self.max_alternations, 500000)
                assigns.append(assign)
            if len(assigns) > 1:
                cons = consensus_from_runs(assigns, c)
                cons = self._check_init(cons, patients.size, c, Xs[patients])
            else:
                cons = assigns[0]
            result = _alternate(Xs, y, G, cons, c, self.reg_c, solver_tol,
                                self.max_alternations, 500000)

        W, b, assign, trace, n_repairs, converged = result
        self.weights_ = W
        self.biases_ = b
        self.labels_ = assign
        self.patient_index_ = patients
        self.objective_trace_ = trace
        self.joint_objective_ = trace[-1]
        self.n_alternations_ = len(trace)
        self.n_repairs_ = n_repairs
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _check_init(assign, n_patients, c, Xp):
        assign = np.asarray(assign, dtype=np.int64)
        if assign.shape != (n_patients,):
            raise ValueError(f"initial assignments must have length {n_patients}")
        if assign.min() < 0 or assign.max() >= c:
            raise ValueError(f"initial assignments must lie in [0, {c - 1}]")
        return _fill_empty_clusters(assign, Xp, c)

    def _face_scores(self, X):
        X = check_feature_matrix(X, "X")
        if X.shape[1] != self.weights_.shape[1]:
            raise ValueError(
                f"X has {X.shape[1]} features, model was fit with {self.weights_.shape[1]}"
            )
        Xs = (X - self.mean_) / self.scale_
        return Xs @ self.weights_.T + self.biases_

    def decision_function(self, X):
        """Maximum face score; positive means outside the polytope."""
        return self._face_scores(X).max(axis=1)

    def predict(self, X):
        """+1 (patient-like, outside) iff the maximum face score is > 0."""
        return np.where(self.decision_function(X) > 0, 1, -1)

    def predict_subtype(self, X):
        """Index of the highest-scoring face (ties go to the lowest id)."""
        return np.argmax(self._face_scores(X), axis=1)


def consensus_from_runs(label_sets, n_clusters):
    """Consensus partition of repeated clustering runs over the same patients.

    Builds the pairwise co-occurrence fraction across runs and cuts an
    average-linkage dendrogram of (1 - co-occurrence) at n_clusters.
    """
    runs = [np.asarray(ls, dtype=np.int64) for ls in label_sets]
    if not runs:
        raise ValueError("need at least one run")
    P = runs[0].size
    if any(r.size != P for r in runs):
        raise ValueError("label sets cover different patient sets")
    if len(runs) == 1:
        return runs[0].copy()
    co = np.zeros((P, P))
    for r in runs:
        co += r[:, None] == r[None, :]
    co /= len(runs)
    condensed = squareform(1.0 - co, checks=False)
    merged = fcluster(linkage(condensed, method="average"), t=n_clusters, criterion="maxclust")
    return _relabel_first_seen(merged)


def _relabel_first_seen(labels):
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty(labels.size, dtype=np.int64)
    for i, v in enumerate(labels):
        mapping.setdefault(v, len(mapping))
        out[i] = mapping[v]
    return out


def balanced_accuracy(y_true, y_pred):
    """Mean of sensitivity and specificity for -1/+1 labels."""
    yt = check_diagnosis_labels(y_true, name="y_true")
    yp = check_diagnosis_labels(y_pred, n_expected=yt.shape[0], require_both=False,
                                name="y_pred")
    sens = float(np.mean(yp[yt == 1] == 1))
    spec = float(np.mean(yp[yt == -1] == -1))
    return 0.5 * (sens + spec)


def fit_random_split_polytope(features, labels, split_sizes, reg_c=1.0, seed=0,
                              standardize=True, tol=1e-6):
    """Two-face polytope from a random patient split (classification baseline).

    Patients are randomly partitioned into the given sizes and one plain
    weighted SVM (all controls at weight 1 vs. one split) is fit per face.
    """
    X = check_feature_matrix(features, "features")
    y = check_diagnosis_labels(labels, n_expected=X.shape[0])
    patients = np.flatnonzero(y == 1)
    try:
        n1, n2 = (int(s) for s in split_sizes)
    except Exception as exc:
        raise ValueError("split_sizes must be a pair of integers") from exc
    if n1 <= 0 or n2 <= 0:
        raise ValueError("both split sizes must be positive")
    if n1 + n2 != patients.size:
        raise ValueError(
            f"split sizes {n1}+{n2} must sum to the patient count {patients.size}"
        )

    rng = derived_rng(seed)
    perm = rng.permutation(patients.size)
    assign = np.empty(patients.size, dtype=np.int64)
    assign[perm[:n1]] = 0
    assign[perm[n1:]] = 1

    model = PolytopeClustering(n_clusters=2, reg_c=reg_c, standardize=standardize,
                               tol=tol, random_state=seed)
    if standardize:
        model.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        model.scale_ = scale
    else:
        model.mean_ = np.zeros(X.shape[1])
        model.scale_ = np.ones(X.shape[1])
    Xs = (X - model.mean_) / model.scale_
    G = Xs @ Xs.T
    yf = y.astype(np.float64)

    W = np.zeros((2, X.shape[1]))
    b = np.zeros(2)
    obj = 0.0
    for j in (0, 1):
        sw = np.zeros(X.shape[0])
        sw[y == -1] = 1.0
        sw[patients[assign == j]] = 1.0
        alpha, bias, _, _ = solve_svm_dual(G, yf, reg_c * sw, tol * _SOLVER_TOL_FACTOR, 500000)
        W[j] = Xs.T @ (alpha * yf)
        b[j] = bias
        obj += svm_objective(Hyperplane(W[j], float(bias)), Xs, y, sw, reg_c)
    model.weights_ = W
    model.biases_ = b
    model.labels_ = assign
    model.patient_index_ = patients
    model.joint_objective_ = obj
    model.objective_trace_ = [obj]
    model.n_alternations_ = 1
    model.n_repairs_ = 0
    model.converged_ = True
    model.n_features_in_ = X.shape[1]
    return model


def save_polytope(model, path, patient_ids, scale_k=None):
    """Persist a fitted polytope: manifest.json + weights.csv + assignments.csv."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_clusters": int(model.weights_.shape[0]),
        "n_features": int(model.weights_.shape[1]),
        "scale_k": None if scale_k is None else int(scale_k),
        "reg_c": float(model.reg_c),
        "standardize": bool(model.standardize),
        "scaler_mean": model.mean_.tolist(),
        "scaler_scale": model.scale_.tolist(),
        "joint_objective": float(model.joint_objective_),
        "n_alternations": int(model.n_alternations_),
        "converged": bool(model.converged_),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    k = model.weights_.shape[1]
    wdf = pd.DataFrame(np.column_stack([model.weights_, model.biases_]),
                       columns=[f"w_{i:02d}" for i in range(k)] + ["bias"])
    wdf.to_csv(path / "weights.csv", index=False, float_format="%.17g")
    if len(patient_ids) != model.labels_.size:
        raise ValueError("patient_ids must match the number of clustered patients")
    pd.DataFrame({"participant_id": list(patient_ids), "cluster": model.labels_}).to_csv(
        path / "assignments.csv", index=False
    )


def load_polytope(path):
    """Load a polytope saved by save_polytope.

    Returns (model, assignments DataFrame, scale_k).
    """
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    wdf = pd.read_csv(path / "weights.csv")
    W = wdf[[c for c in wdf.columns if c != "bias"]].to_numpy(dtype=np.float64)
    b = wdf["bias"].to_numpy(dtype=np.float64)
    model = PolytopeClustering(n_clusters=manifest["n_clusters"], reg_c=manifest["reg_c"],
                               standardize=manifest["standardize"])
    model.weights_ = W
    model.biases_ = b
    model.mean_ = np.asarray(manifest["scaler_mean"], dtype=np.float64)
    model.scale_ = np.asarray(manifest["scaler_scale"], dtype=np.float64)
    model.joint_objective_ = manifest["joint_objective"]
    model.objective_trace_ = [manifest["joint_objective"]]
    model.n_alternations_ = manifest["n_alternations"]
    model.converged_ = manifest["converged"]
    model.n_features_in_ = manifest["n_features"]
    assignments = pd.read_csv(path / "assignments.csv", dtype={"participant_id": str})
    model.labels_ = assignments["cluster"].to_numpy(dtype=np.int64)
    return model, assignments, manifest["scale_k"]
