"""Cluster-count selection by clustering stability under repeated holdouts.

For every (number of clusters, scale) cell the polytope clustering is refit
on the training side of repeated stratified holdout splits and the adjusted
Rand index between every pair of repetitions (over the training patients
they share) summarizes how stable the partition is. The cluster count is
chosen as the one with the highest mean stability over a plateau of scales.
"""

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._validation import derived_seed
from .dataset import stratified_split_indices
from .polytope import PolytopeClustering


def adjusted_rand_index(labels_a, labels_b):
    """Hubert-Arabie adjusted Rand index between two partitions.

    Degenerate cases where max index equals expected index (both partitions
    a single cluster, or both all singletons) return 1.0 when the partitions
    are identical and 0.0 otherwise.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size == 0:
        raise ValueError("cannot compare empty partitions")
    if a.size != b.size:
        raise ValueError(f"partitions label different item counts: {a.size} vs {b.size}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)

    def comb2(x):
        return x * (x - 1.0) / 2.0

    index = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(float(a.size))
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # equal partitions iff every pair agrees in both
        return 1.0 if index == sum_rows == sum_cols else 0.0
    return float((index - expected) / (max_index - expected))


@dataclass
class StabilityReport:
    """Mean/std pairwise ARI per (n_clusters, scale) cell."""

    c_values: list
    k_values: list
    mean_ari: np.ndarray  # (len(c_values), len(k_values))
    std_ari: np.ndarray
    repetitions: int
    test_fraction: float

    def __post_init__(self):
        shape = (len(self.c_values), len(self.k_values))
        if self.mean_ari.shape != shape or self.std_ari.shape != shape:
            raise ValueError("ARI matrices do not match the value lists")


def _stability_cell(feats_all, labels, splits, c, reg_c, n_restarts, seeds):
    """Mean/std pairwise ARI of one (c, K) cell over all repetition splits."""
    maps = []
    for train, fit_seed in zip(splits, seeds):
        model = PolytopeClustering(n_clusters=c, reg_c=reg_c, n_restarts=n_restarts,
                                   random_state=fit_seed).fit(feats_all[train], labels[train])
        rows = train[model.patient_index_]  # global indices of clustered patients
        maps.append(dict(zip(rows.tolist(), model.labels_.tolist())))
    aris = []
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            common = sorted(maps[i].keys() & maps[j].keys())
            if len(common) < 2:
                raise ValueError(
                    "two repetitions share fewer than 2 training patients; "
                    "test_fraction is too large for this cohort"
                )
            aris.append(adjusted_rand_index([maps[i][p] for p in common],
                                            [maps[j][p] for p in common]))
    return float(np.mean(aris)), float(np.std(aris))


def stability_analysis(ds, basis, c_range, k_values, repetitions=100, test_fraction=0.2,
                       reg_c=1.0, n_restarts=10, seed=0, n_jobs=1):
    """Stability surface over cluster counts and scales.

    One set of stratified holdout splits (derived from seed) is shared by
    every cell; each (c, K, repetition) fit gets its own derived seed, so the
    result is independent of n_jobs and evaluation order.
    """
    if repetitions < 2:
        raise ValueError("repetitions must be >= 2")
    c_values = sorted({int(c) for c in c_range})
    k_values = sorted({int(k) for k in k_values})
    missing = [k for k in k_values if k not in set(basis.scales)]
    if missing:
        raise ValueError(f"scales {missing} not present in the basis")

    splits = [stratified_split_indices(ds.labels, test_fraction, derived_seed(seed, 1, r))[0]
              for r in range(repetitions)]

    cells = [(ci, ki, c, k) for ci, c in enumerate(c_values) for ki, k in enumerate(k_values)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_stability_cell)(
            np.ascontiguousarray(basis.loadings(k).T), ds.labels, splits, c, reg_c,
            n_restarts, [derived_seed(seed, 2, c, k, r) for r in range(repetitions)]
        )
        for ci, ki, c, k in cells
    )

    mean_ari = np.zeros((len(c_values), len(k_values)))
    std_ari = np.zeros_like(mean_ari)
    for (ci, ki, _, _), (m, s) in zip(cells, results):
        mean_ari[ci, ki] = m
        std_ari[ci, ki] = s
    return StabilityReport(c_values, k_values, mean_ari, std_ari,
                           int(repetitions), float(test_fraction))


def select_num_clusters(report, k_subset=None):
    """Cluster count with the highest mean ARI averaged over the chosen scales
    (ties go to the smallest count)."""
    if k_subset is None:
        cols = list(range(len(report.k_values)))
    else:
        k_subset = sorted({int(k) for k in k_subset})
        if not k_subset:
            raise ValueError("k_subset is empty")
        missing = [k for k in k_subset if k not in report.k_values]
        if missing:
            raise ValueError(f"scales {missing} not present in the report")
        cols = [report.k_values.index(k) for k in k_subset]
    averaged = report.mean_ari[:, cols].mean(axis=1)
    return int(report.c_values[int(np.argmax(averaged))])


def save_stability_report(report, json_path, csv_path):
    """Persist as JSON (axes + matrices) and long-format CSV."""
    payload = {
        "c_values": report.c_values,
        "k_values": report.k_values,
        "mean_ari": report.mean_ari.tolist(),
        "std_ari": report.std_ari.tolist(),
        "repetitions": report.repetitions,
        "test_fraction": report.test_fraction,
    }
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    rows = [(c, k, report.mean_ari[ci, ki], report.std_ari[ci, ki])
            for ci, c in enumerate(report.c_values)
            for ki, k in enumerate(report.k_values)]
    pd.DataFrame(rows, columns=["c", "k", "mean_ari", "std_ari"]).to_csv(
        csv_path, index=False, float_format="%.17g"
    )


def load_stability_report(json_path):
    with open(json_path) as fh:
        payload = json.load(fh)
    return StabilityReport(
        c_values=[int(c) for c in payload["c_values"]],
        k_values=[int(k) for k in payload["k_values"]],
        mean_ari=np.asarray(payload["mean_ari"], dtype=np.float64),
        std_ari=np.asarray(payload["std_ari"], dtype=np.float64),
        repetitions=int(payload["repetitions"]),
        test_fraction=float(payload["test_fraction"]),
    )
