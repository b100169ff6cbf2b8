"""Double cyclic multi-scale polytope clustering.

Outer loop: every scale in turn serves as the initialization scale, where a
restarted consensus polytope fit produces the starting membership. Inner
loop: the membership is carried through the remaining scales in cyclic
order, warm-starting a polytope fit at each scale, until the partition at
the end of a full cycle agrees with its start (ARI at or above the
consistency threshold) or the cycle budget runs out. The per-initialization
final partitions are merged into one consensus subtype labeling; prediction
uses the single scale whose final-cycle polytope has the best in-sample
balanced accuracy.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import check_diagnosis_labels, check_feature_matrix, derived_seed
from .polytope import PolytopeClustering, balanced_accuracy, consensus_from_runs, save_polytope
from .selection import adjusted_rand_index


def cross_scale_consistency(label_sets):
    """(min, mean) pairwise ARI across two or more partitions of the same patients."""
    runs = [np.asarray(ls) for ls in label_sets]
    if len(runs) < 2:
        raise ValueError("need at least 2 label sets")
    if any(r.size != runs[0].size for r in runs):
        raise ValueError("label sets cover different patient sets")
    aris = [adjusted_rand_index(runs[i], runs[j])
            for i in range(len(runs)) for j in range(i + 1, len(runs))]
    return float(min(aris)), float(np.mean(aris))


class MultiScaleClustering(BaseEstimator):
    """Consensus subtypes from polytope fits cycled across decomposition scales.

    Parameters
    ----------
    n_clusters : int
    scales : list of int or None
        Scales to cycle over; None uses every scale in the basis.
    reg_c, n_restarts, max_alternations, tol, init, standardize
        Forwarded to the per-scale PolytopeClustering fits (restarts apply
        only to the initialization fit of each outer run).
    consistency_threshold : float in (0, 1]
        Cycle-start vs cycle-end ARI at which the inner loop stops.
    max_cycles : int
    cycle_alternations : int
        Alternation budget of each scale visit inside a cycle. The default
        of 1 performs one block update per visit, so no single scale can
        fully re-converge (and possibly wreck) the carried membership;
        repeated cycles provide the iteration depth.
    random_state : int
    n_jobs : int, parallelism over the outer initializations

    Attributes
    ----------
    consensus_labels_ : ndarray (n_patients,), final subtype per patient
    per_init_labels_ : dict scale -> final labels of that initialization
    cycle_ari_trace_ : dict scale -> list of cycle ARIs
    models_ : dict scale -> PolytopeClustering (final cycle, best initialization)
    predict_scale_ : int, scale used by predict/predict_subtype
    best_init_scale_ : int
    components_ : components of predict_scale_ (n_features, K)
    """

    def __init__(self, n_clusters=2, scales=None, reg_c=1.0, n_restarts=10,
                 consistency_threshold=0.98, max_cycles=10, max_alternations=50,
                 cycle_alternations=1, tol=1e-6, init="kmeans", standardize=True,
                 random_state=0, n_jobs=1):
        self.n_clusters = n_clusters
        self.scales = scales
        self.reg_c = reg_c
        self.n_restarts = n_restarts
        self.consistency_threshold = consistency_threshold
        self.max_cycles = max_cycles
        self.max_alternations = max_alternations
        self.cycle_alternations = cycle_alternations
        self.tol = tol
        self.init = init
        self.standardize = standardize
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _polytope(self, seed, n_restarts=1):
        return PolytopeClustering(
            n_clusters=self.n_clusters, reg_c=self.reg_c, n_restarts=n_restarts,
            max_alternations=self.max_alternations, tol=self.tol, init=self.init,
            standardize=self.standardize, random_state=seed,
        )

    def _run_one_init(self, k_init, scales, feats, y):
        """One outer run: consensus init at k_init, then cyclic refinement."""
        seed = derived_seed(self.random_state, k_init)
        membership = self._polytope(seed, n_restarts=self.n_restarts).fit(
            feats[k_init], y
        ).labels_
        pos = scales.index(k_init)
        cycle_order = scales[pos + 1:] + scales[:pos + 1]  # start after k_init
        trace = []
        models = {}
        for _ in range(int(self.max_cycles)):
            start = membership
            for k in cycle_order:
                tuner = self._polytope(seed)
                tuner.max_alternations = int(self.cycle_alternations)
                model = tuner.fit(feats[k], y, initial_assignments=membership)
                membership = model.labels_
                models[k] = model
            ari = adjusted_rand_index(start, membership)
            trace.append(ari)
            if ari >= self.consistency_threshold:
                break
        return membership, trace, models

    def fit(self, basis, y):
        """Fit on a MultiScaleBasis and -1/+1 diagnosis labels (subject order
        must match the basis loadings)."""
        if not 0.0 < self.consistency_threshold <= 1.0:
            raise ValueError("consistency_threshold must be in (0, 1]")
        scales = sorted(int(k) for k in (self.scales if self.scales is not None else basis.scales))
        if not scales:
            raise ValueError("scales must be non-empty")
        if len(set(scales)) != len(scales):
            raise ValueError("scales must be distinct")
        missing = [k for k in scales if k not in set(basis.scales)]
        if missing:
            raise ValueError(f"scales {missing} not present in the basis")
        y = check_diagnosis_labels(y, n_expected=basis.n_subjects)

        feats = {k: basis.loadings(k).T.copy() for k in scales}
        runs = Parallel(n_jobs=self.n_jobs)(
            delayed(self._run_one_init)(k, scales, feats, y) for k in scales
        )
        per_init = {k: run[0] for k, run in zip(scales, runs)}
        traces = {k: run[1] for k, run in zip(scales, runs)}
        consensus = consensus_from_runs([per_init[k] for k in scales], self.n_clusters)

        # best initialization: final labels closest to the consensus
        agreement = [adjusted_rand_index(per_init[k], consensus) for k in scales]
        best_k = scales[int(np.argmax(agreement))]
        models = runs[scales.index(best_k)][2]

        # prediction polytopes: converged refits from the consensus membership,
        # so the classifier benefits from the cross-scale agreement
        refits = {}
        bas = {}
        for k in scales:
            refit = self._polytope(derived_seed(self.random_state, 3, k)).fit(
                feats[k], y, initial_assignments=consensus
            )
            refits[k] = refit
            bas[k] = balanced_accuracy(y, refit.predict(feats[k]))
        predict_scale = max(scales, key=lambda k: (bas[k], -k))

        self.scales_ = scales
        self.consensus_labels_ = consensus
        self.per_init_labels_ = per_init
        self.cycle_ari_trace_ = traces
        self.models_ = models
        self.best_init_scale_ = best_k
        self.predict_scale_ = predict_scale
        self.predict_model_ = refits[predict_scale]
        self.in_sample_ba_ = bas
        self.components_ = basis.components(predict_scale).copy()
        self.patient_index_ = np.flatnonzero(y == 1)
        return self

    def _project(self, X_raw):
        X = check_feature_matrix(X_raw, "X")
        if X.shape[1] != self.components_.shape[0]:
            raise ValueError(
                f"X has {X.shape[1]} raw features, basis was fit with {self.components_.shape[0]}"
            )
        return X @ self.components_

    def predict(self, X_raw):
        """-1/+1 diagnosis prediction from raw (harmonized) features."""
        return self.predict_model_.predict(self._project(X_raw))

    def predict_subtype(self, X_raw):
        """Subtype (face index at the prediction scale) from raw features."""
        return self.predict_model_.predict_subtype(self._project(X_raw))


def save_clustering(model, path, patient_ids):
    """Persist consensus/per-initialization labels, the convergence trace and
    the prediction-scale polytope."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ids = list(patient_ids)
    pd.DataFrame({"participant_id": ids, "subtype": model.consensus_labels_}).to_csv(
        path / "consensus.csv", index=False
    )
    per = pd.DataFrame({"participant_id": ids})
    for k in model.scales_:
        per[f"init_k{k:03d}"] = model.per_init_labels_[k]
    per.to_csv(path / "per_init.csv", index=False)
    payload = {
        "scales": model.scales_,
        "cycle_ari_trace": {str(k): model.cycle_ari_trace_[k] for k in model.scales_},
        "best_init_scale": int(model.best_init_scale_),
        "predict_scale": int(model.predict_scale_),
        "in_sample_balanced_accuracy": {str(k): model.in_sample_ba_[k] for k in model.scales_},
        "n_clusters": int(model.n_clusters),
    }
    (path / "convergence.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    save_polytope(model.predict_model_, path / "polytope", ids,
                  scale_k=model.predict_scale_)
