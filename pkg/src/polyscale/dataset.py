"""Cohort data model: CSV I/O, covariate residualization and stratified splitting.

The on-disk format is a UTF-8 CSV with a header row. Column 1 is
``participant_id`` (string), column 2 is ``diagnosis`` (-1 for controls, +1
for patients), columns prefixed ``cov_`` are covariates, and every remaining
column is a feature. Missing values are not permitted and features must be
non-negative (the factorization downstream requires it).
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import derived_rng


@dataclass(frozen=True)
class Dataset:
    """In-memory cohort: one row per subject, features non-negative.

    Attributes
    ----------
    subject_ids : list of str
        Unique subject identifiers, in row order.
    features : ndarray of shape (n_subjects, n_features)
    labels : ndarray of shape (n_subjects,)
        -1 for controls, +1 for patients; both classes present.
    feature_names : list of str
    covariates : ndarray of shape (n_subjects, n_covariates) or None
    covariate_names : list of str
    """

    subject_ids: list
    features: np.ndarray
    labels: np.ndarray
    feature_names: list
    covariates: np.ndarray = None
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.subject_ids)) != len(self.subject_ids):
            dup = _first_duplicate(self.subject_ids)
            raise ValueError(f"duplicate subject id {dup!r}")
        if len(set(self.feature_names)) != len(self.feature_names):
            dup = _first_duplicate(self.feature_names)
            raise ValueError(f"duplicate feature name {dup!r}")
        if self.features.shape != (len(self.subject_ids), len(self.feature_names)):
            raise ValueError("features shape does not match subject/feature name lists")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if (self.features < 0).any():
            i, j = np.argwhere(self.features < 0)[0]
            raise ValueError(
                f"negative feature value {self.features[i, j]!r} in column "
                f"{self.feature_names[j]!r} for participant {self.subject_ids[i]!r}"
            )
        labs = set(np.unique(self.labels).tolist())
        if not labs <= {-1, 1}:
            raise ValueError(f"invalid label {sorted(labs - {-1, 1})[0]!r}: labels must be -1 or +1")
        if labs != {-1, 1}:
            raise ValueError("dataset must contain at least one control (-1) and one patient (+1)")
        if self.covariates is not None and self.covariates.shape != (
            len(self.subject_ids),
            len(self.covariate_names),
        ):
            raise ValueError("covariates shape does not match covariate_names")

    @property
    def n_subjects(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def control_indices(self):
        return np.flatnonzero(self.labels == -1)

    @property
    def patient_indices(self):
        return np.flatnonzero(self.labels == 1)

    def patient_ids(self):
        return [self.subject_ids[i] for i in self.patient_indices]


@dataclass(frozen=True)
class CovariateModel:
    """Per-feature linear covariate effects estimated on controls only.

    ``corrected = original - (covariates - covariate_means_cn) @ slopes.T``
    followed by clamping at zero.
    """

    covariate_means_cn: np.ndarray  # (n_covariates,)
    slopes: np.ndarray  # (n_features, n_covariates)
    intercepts: np.ndarray  # (n_features,) control means at mean covariates
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        for arr, name in ((self.covariate_means_cn, "covariate_means_cn"),
                          (self.slopes, "slopes"), (self.intercepts, "intercepts")):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")


def _first_duplicate(items):
    seen = set()
    for x in items:
        if x in seen:
            return x
        seen.add(x)
    return None


def load_dataset(path, id_column="participant_id", label_column="diagnosis",
                 covariate_prefix="cov_", allow_unlabeled=False):
    """Parse a cohort CSV into a Dataset.

    Parameters
    ----------
    path : str or Path
    id_column, label_column, covariate_prefix : str
        Column-role mapping; defaults match the standard file layout.
    allow_unlabeled : bool
        When True, a diagnosis of 0 marks an unknown label (prediction
        inputs); such rows keep label 0 and the both-classes check is skipped.

    Raises ValueError with the offending row/column on any malformed cell.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise ValueError(f"{path}: empty file")
    if len(set(header)) != len(header):
        raise ValueError(f"{path}: duplicate column name {_first_duplicate(header)!r}")
    if header[0] != id_column or len(header) < 2 or header[1] != label_column:
        raise ValueError(
            f"{path}: first two columns must be {id_column!r},{label_column!r}, got {header[:2]}"
        )

    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    ids = df[id_column].tolist()
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate subject id {_first_duplicate(ids)!r}")

    cov_names = [c for c in header[2:] if c.startswith(covariate_prefix)]
    feat_names = [c for c in header[2:] if not c.startswith(covariate_prefix)]
    if not feat_names:
        raise ValueError(f"{path}: no feature columns found")

    def numeric(column):
        raw = df[column]
        vals = pd.to_numeric(raw, errors="coerce")
        bad = vals.index[vals.isna()]
        if len(bad):
            r = bad[0]
            cell = raw.iloc[r]
            what = "missing value" if cell.strip() == "" else f"non-numeric value {cell!r}"
            raise ValueError(
                f"{path}: {what} in column {column!r} at data row {r + 1} "
                f"(participant {ids[r]!r})"
            )
        return vals.to_numpy(dtype=np.float64)

    labels_f = numeric(label_column)
    allowed = {-1.0, 1.0, 0.0} if allow_unlabeled else {-1.0, 1.0}
    for r, v in enumerate(labels_f):
        if v not in allowed:
            raise ValueError(
                f"{path}: invalid label {df[label_column].iloc[r]!r} at data row {r + 1} "
                f"(participant {ids[r]!r}); must be -1 or +1"
            )
    labels = labels_f.astype(np.int64)

    features = np.column_stack([numeric(c) for c in feat_names])
    neg = np.argwhere(features < 0)
    if len(neg):
        i, j = neg[0]
        raise ValueError(
            f"{path}: negative feature value {features[i, j]!r} in column "
            f"{feat_names[j]!r} at data row {i + 1} (participant {ids[i]!r})"
        )
    covariates = np.column_stack([numeric(c) for c in cov_names]) if cov_names else None

    if allow_unlabeled:
        return _dataset_maybe_unlabeled(ids, features, labels, feat_names, covariates, cov_names)
    return Dataset(ids, features, labels, feat_names, covariates, cov_names)


def _dataset_maybe_unlabeled(ids, features, labels, feat_names, covariates, cov_names):
    """Construct a Dataset, tolerating unknown (0) labels for prediction inputs."""
    if ((labels == -1) | (labels == 1)).all() and (labels == -1).any() and (labels == 1).any():
        return Dataset(ids, features, labels, feat_names, covariates, cov_names)
    ds = object.__new__(Dataset)
    object.__setattr__(ds, "subject_ids", ids)
    object.__setattr__(ds, "features", features)
    object.__setattr__(ds, "labels", labels)
    object.__setattr__(ds, "feature_names", feat_names)
    object.__setattr__(ds, "covariates", covariates)
    object.__setattr__(ds, "covariate_names", cov_names)
    return ds


def save_dataset(ds, path):
    """Write a Dataset back to CSV; floats use 17 significant digits so a
    load/save/load cycle is bit-identical."""
    cols = {"participant_id": ds.subject_ids, "diagnosis": ds.labels}
    for q, name in enumerate(ds.covariate_names):
        cols[name] = ds.covariates[:, q]
    for j, name in enumerate(ds.feature_names):
        cols[name] = ds.features[:, j]
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


def residualize_covariates(ds):
    """Remove covariate effects estimated on controls from every subject.

    Per feature, ordinary least squares of feature on covariates is fit over
    controls only; all subjects are corrected by the fitted slopes around the
    control covariate means, and negative corrected values are clamped to 0
    (non-negativity is required downstream). Returns the corrected Dataset
    and the fitted CovariateModel.
    """
    cn = ds.control_indices
    if ds.covariates is None or ds.covariates.shape[1] == 0:
        model = CovariateModel(
            covariate_means_cn=np.zeros(0),
            slopes=np.zeros((ds.n_features, 0)),
            intercepts=ds.features[cn].mean(axis=0),
            covariate_names=[],
        )
        return ds, model

    if cn.size < 2:
        raise ValueError("residualization needs at least 2 control subjects")
    means = ds.covariates[cn].mean(axis=0)
    Z = ds.covariates[cn] - means  # centered control design
    design = np.column_stack([np.ones(cn.size), Z])
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        collinear = []
        for q in range(Z.shape[1]):
            reduced = np.delete(design, q + 1, axis=1)
            if np.linalg.matrix_rank(reduced) == rank:
                collinear.append(ds.covariate_names[q])
        raise ValueError(
            "covariate design is rank-deficient on controls; collinear columns: "
            + ", ".join(collinear)
        )

    beta, *_ = np.linalg.lstsq(design, ds.features[cn], rcond=None)
    intercepts = beta[0]  # control means (covariates are centered)
    slopes = beta[1:].T  # (n_features, n_covariates)
    model = CovariateModel(means, slopes, intercepts, list(ds.covariate_names))
    corrected = apply_covariate_correction(model, ds.features, ds.covariates)
    out = Dataset(ds.subject_ids, corrected, ds.labels, ds.feature_names,
                  ds.covariates, ds.covariate_names)
    return out, model


def apply_covariate_correction(model, features, covariates):
    """Apply a fitted CovariateModel to (new) subjects; clamps at zero."""
    features = np.asarray(features, dtype=np.float64)
    if model.slopes.shape[1] == 0:
        return features.copy()
    if covariates is None:
        raise ValueError("covariate model was fit with covariates but none were provided")
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.shape[1] != model.slopes.shape[1]:
        raise ValueError(
            f"expected {model.slopes.shape[1]} covariates, got {covariates.shape[1]}"
        )
    corrected = features - (covariates - model.covariate_means_cn) @ model.slopes.T
    return np.maximum(corrected, 0.0)


def stratified_split_indices(labels, test_fraction, seed):
    """Core stratified holdout split on a -1/+1 label vector.

    Per class, round(n_class * test_fraction) subjects go to the test side
    (so test proportions match overall proportions within one subject per
    class). Deterministic in (labels, test_fraction, seed). Returns sorted
    (train_indices, test_indices).
    """
    labels = np.asarray(labels)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = derived_rng(seed)
    train, test = [], []
    for cls in (-1, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise ValueError(f"class {cls} has fewer than 2 members")
        n_test = int(round(idx.size * test_fraction))
        if n_test < 1 or n_test >= idx.size:
            raise ValueError(
                f"test_fraction {test_fraction} leaves an empty side for class {cls}"
            )
        perm = rng.permutation(idx.size)
        test.append(idx[perm[:n_test]])
        train.append(idx[perm[n_test:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_holdout_split(ds, test_fraction, seed):
    """Stratified holdout split of a Dataset; see stratified_split_indices."""
    return stratified_split_indices(ds.labels, test_fraction, seed)
