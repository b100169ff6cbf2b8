"""Statistical mapping of subtypes: per-component group tests and MDS.

Every component loading at every scale is compared between controls and each
subtype with a pooled-variance two-sample t-test; Benjamini-Hochberg
correction is applied across all components within one subtype-vs-controls
family, and Cohen's d quantifies effect sizes (controls minus subtype, so
reduced loadings in a subtype give positive d).
"""

import numpy as np
import pandas as pd
from scipy import stats as sps

from ._validation import check_feature_matrix

_P_FLOOR = 1e-300

STATS_CSV_COLUMNS = ["scale_k", "component_index", "subtype", "n_subtype", "n_cn",
                     "t", "p", "bh_reject", "cohens_d"]


def two_sample_ttest(a, b, equal_var=True):
    """Two-sample t-test; pooled-variance Student's t by default.

    Returns (t, two-sided p). When both samples are constant: equal values
    give (0.0, 1.0); different values give (+/-inf, 1e-300 floor).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("both samples need at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    if equal_var:
        df = a.size + b.size - 2
        sp2 = ((a.size - 1) * va + (b.size - 1) * vb) / df
        se = np.sqrt(sp2 * (1.0 / a.size + 1.0 / b.size))
    else:
        se = np.sqrt(va / a.size + vb / b.size)
        num = (va / a.size + vb / b.size) ** 2
        den = (va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1)
        df = num / den if den > 0 else a.size + b.size - 2
    if se == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return float(np.sign(diff) * np.inf), _P_FLOOR
    t = diff / se
    p = 2.0 * sps.t.sf(abs(t), df)
    return float(t), float(max(p, _P_FLOOR))


def bh_adjust(p_values, alpha=0.05):
    """Benjamini-Hochberg step-up: boolean reject flags in input order."""
    p = np.asarray(p_values, dtype=np.float64).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if ((p < 0) | (p > 1)).any() or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    m = p.size
    order = np.argsort(p, kind="stable")
    thresholds = (np.arange(1, m + 1) / m) * alpha
    passing = np.flatnonzero(p[order] <= thresholds)
    flags = np.zeros(m, dtype=bool)
    if passing.size:
        flags[order[: passing[-1] + 1]] = True
    return flags


def cohens_d(a, b):
    """Pooled-sd standardized mean difference mean(a) - mean(b)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("both samples need at least 2 observations")
    sp2 = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if sp2 <= 0.0:
        raise ValueError("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / np.sqrt(sp2))


def _group_ttests(A, B):
    """Vectorized pooled t-tests row-wise: A (k, n_a) vs B (k, n_b)."""
    na, nb = A.shape[1], B.shape[1]
    df = na + nb - 2
    ma, mb = A.mean(axis=1), B.mean(axis=1)
    va, vb = A.var(axis=1, ddof=1), B.var(axis=1, ddof=1)
    sp2 = ((na - 1) * va + (nb - 1) * vb) / df
    se = np.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    diff = ma - mb
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(diff == 0, 0.0, np.sign(diff) * np.inf))
        p = np.where(np.isinf(t), _P_FLOOR,
                     np.where(se > 0, 2.0 * sps.t.sf(np.abs(np.where(np.isfinite(t), t, 0.0)), df), 1.0))
    d = np.where(sp2 > 0, diff / np.sqrt(np.where(sp2 > 0, sp2, 1.0)), 0.0)
    return ma, mb, np.sqrt(va), np.sqrt(vb), t, np.maximum(p, _P_FLOOR), d


def subtype_mapping(basis, ds, subtype_labels, alpha=0.05):
    """Controls-vs-subtype t-tests for every component at every scale.

    subtype_labels assigns each patient (ds row order) a subtype id. Returns
    a DataFrame with one row per (scale, component, subtype), BH-corrected
    within each subtype across all components and sorted by effect size
    descending within subtype.
    """
    controls = ds.control_indices
    patients = ds.patient_indices
    subtype_labels = np.asarray(subtype_labels, dtype=np.int64)
    if subtype_labels.shape != (patients.size,):
        raise ValueError(f"subtype_labels must cover all {patients.size} patients")
    if controls.size < 2:
        raise ValueError("need at least 2 controls")
    if basis.n_subjects != ds.n_subjects:
        raise ValueError("basis and dataset subject counts differ")

    frames = []
    for s in np.unique(subtype_labels):
        members = patients[subtype_labels == s]
        if members.size < 2:
            raise ValueError(f"subtype {s} has fewer than 2 members")
        rows = []
        for k in basis.scales:
            L = basis.loadings(k)
            ma, mb, sda, sdb, t, p, d = _group_ttests(L[:, controls], L[:, members])
            for ci in range(k):
                rows.append((k, ci, int(s), members.size, controls.size,
                             ma[ci], sda[ci], mb[ci], sdb[ci], t[ci], p[ci], d[ci]))
        df = pd.DataFrame(rows, columns=["scale_k", "component_index", "subtype",
                                         "n_subtype", "n_cn", "mean_cn", "sd_cn",
                                         "mean_subtype", "sd_subtype", "t", "p",
                                         "cohens_d"])
        df["bh_reject"] = bh_adjust(df["p"].to_numpy(), alpha)
        df = df.sort_values("cohens_d", ascending=False, kind="stable").reset_index(drop=True)
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


def survivor_counts(table):
    """Number of BH survivors per subtype."""
    return table.groupby("subtype")["bh_reject"].sum().astype(int).to_dict()


def save_stats_table(table, path):
    """Write the pinned CSV columns (bh_reject as 0/1)."""
    out = table.copy()
    out["bh_reject"] = out["bh_reject"].astype(int)
    out[STATS_CSV_COLUMNS].to_csv(path, index=False, float_format="%.17g")


def mds_embed(features, n_dims=2):
    """Classical (Torgerson) multidimensional scaling.

    Double-centers the squared Euclidean distance matrix and embeds with the
    top eigenpairs; coordinates are ordered by descending eigenvalue and
    missing positive eigendirections are zero-filled.
    """
    X = check_feature_matrix(features, "features")
    n = X.shape[0]
    n_dims = int(n_dims)
    if n_dims < 1:
        raise ValueError("n_dims must be >= 1")
    if n < n_dims + 1:
        raise ValueError(f"need at least {n_dims + 1} points for {n_dims} dimensions")
    sq = np.sum(X * X, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D2, 0.0)
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ D2 @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:n_dims]
    lam = np.clip(evals[order], 0.0, None)
    return evecs[:, order] * np.sqrt(lam)


def save_mds_coordinates(coords, subject_ids, groups, path):
    """MDS CSV: participant_id, group, dim1..dimN."""
    coords = np.asarray(coords, dtype=np.float64)
    df = pd.DataFrame({"participant_id": list(subject_ids), "group": list(groups)})
    for d in range(coords.shape[1]):
        df[f"dim{d + 1}"] = coords[:, d]
    df.to_csv(path, index=False, float_format="%.17g")
