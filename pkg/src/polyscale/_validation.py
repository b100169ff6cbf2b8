"""Shared input-validation and seeding helpers."""

import numpy as np


def check_feature_matrix(X, name="X"):
    """Coerce to a finite 2-D float64 array or raise ValueError."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_diagnosis_labels(y, n_expected=None, require_both=True, name="y"):
    """Coerce to an int array of -1/+1 values."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    y = y.astype(np.int64, copy=False) if y.dtype.kind in "iu" else np.asarray(y, dtype=np.float64).astype(np.int64)
    if not np.isin(y, (-1, 1)).all():
        bad = y[~np.isin(y, (-1, 1))][0]
        raise ValueError(f"invalid label {bad!r} in {name}: labels must be -1 or +1")
    if n_expected is not None and y.shape[0] != n_expected:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {n_expected}")
    if require_both and (not (y == 1).any() or not (y == -1).any()):
        raise ValueError(f"{name} must contain both classes (-1 and +1)")
    return y


def derived_seed(seed, *path):
    """Stable 32-bit integer seed derived from a root seed and an integer path."""
    ss = np.random.SeedSequence([int(seed)] + [int(p) for p in path])
    return int(ss.generate_state(1)[0])


def derived_rng(seed, *path):
    """Generator seeded deterministically from a root seed and an integer path."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(p) for p in path]))
