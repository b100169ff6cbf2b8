"""Synthetic heterogeneous cohort with planted regional atrophy.

Subjects live on a feature grid carrying a smooth positive base pattern.
Patients are split evenly across named region masks and their values inside
the assigned mask are multiplicatively reduced (default 10%). Between-subject
scale variation, an additive linear age effect (exercising covariate
residualization downstream) and i.i.d. Gaussian noise are layered on top,
with a final clamp at zero. Everything is a pure function of the config.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import derived_rng
from .dataset import Dataset

DEFAULT_BUMPS = (
    (1.0, 0.5, 0.5, 0.075),   # center bump: coherent region under the focal mask
    (0.6, 0.12, 0.12, 0.10),  # four border bumps inside the global ring
    (0.6, 0.12, 0.88, 0.10),
    (0.6, 0.88, 0.12, 0.10),
    (0.6, 0.88, 0.88, 0.10),
)


@dataclass(frozen=True)
class SimConfig:
    """Cohort generator settings.

    bumps parameterizes the smooth base pattern as (amplitude, row_frac,
    col_frac, sigma_frac) Gaussian bumps added to a constant 1.0 field;
    an empty tuple gives a flat base. Per subject, every bump amplitude is
    jittered by a relative factor (1 + bump_sd * z), which plants smooth
    between-subject regional covariance for the factorization to pick up.
    masks maps region names to boolean grids; None selects
    default_masks(grid).
    """

    n_cn: int = 100
    n_pt: int = 100
    grid: tuple = (20, 20)
    bumps: tuple = DEFAULT_BUMPS
    noise_sd: float = 0.30
    subject_sd: float = 0.0
    bump_sd: float = 0.30
    atrophy_fraction: float = 0.10
    age_effect: float = -0.004
    age_range: tuple = (55.0, 85.0)
    masks: dict = None
    seed: int = 0

    def __post_init__(self):
        if self.n_cn < 1 or self.n_pt < 2:
            raise ValueError("need at least 1 control and 2 patients")
        if not 0.0 <= self.atrophy_fraction < 1.0:
            raise ValueError("atrophy_fraction must be in [0, 1)")
        if self.noise_sd < 0 or self.subject_sd < 0 or self.bump_sd < 0:
            raise ValueError("noise_sd, subject_sd and bump_sd must be non-negative")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError("grid must be (rows, cols) with positive sizes")


@dataclass(frozen=True)
class GroundTruth:
    """Planted subtype of each patient and the masks used."""

    subtype_of_patient: dict  # participant_id -> mask name
    masks: dict = field(default_factory=dict)  # name -> boolean grid


def default_masks(grid):
    """Two stand-in atrophy regions on the grid, returned as an ordered dict.

    "global": the contiguous border-to-center ring at Euclidean distance
    >= 0.42*min(grid) from the center (40-50% of cells on a 20x20 grid);
    "focal": a small centered block (<= 5% of cells). The focal block is
    removed from the global ring so the masks are disjoint.
    """
    rows, cols = int(grid[0]), int(grid[1])
    if rows < 8 or cols < 8:
        raise ValueError("grid must be at least 8x8 for the default masks")
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    center = ((rows - 1) / 2.0, (cols - 1) / 2.0)
    dist = np.sqrt((r - center[0]) ** 2 + (c - center[1]) ** 2)
    global_mask = dist >= 0.42 * min(rows, cols)

    side = max(1, int(np.floor(np.sqrt(0.05 * rows * cols))))  # focal <= 5% of cells
    r0 = (rows - side) // 2
    c0 = (cols - side) // 2
    focal = np.zeros((rows, cols), dtype=bool)
    focal[r0:r0 + side, c0:c0 + side] = True

    global_mask = global_mask & ~focal
    return {"global": global_mask, "focal": focal}


def _bump_fields(grid, bumps):
    """One unit-amplitude Gaussian field per bump, shape (n_bumps, cells)."""
    rows, cols = grid
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    fields = []
    for _, rf, cf, sf in bumps:
        sigma = sf * min(rows, cols)
        g = np.exp(-(((r - rf * rows) ** 2) + ((c - cf * cols) ** 2)) / (2.0 * sigma**2))
        fields.append(g.ravel())
    return np.asarray(fields).reshape(len(bumps), rows * cols)


def generate_cohort(cfg):
    """Generate (Dataset, GroundTruth) from a SimConfig; deterministic per seed."""
    masks = cfg.masks if cfg.masks is not None else default_masks(cfg.grid)
    names = list(masks)
    for name, m in masks.items():
        if m.shape != tuple(cfg.grid):
            raise ValueError(f"mask {name!r} does not match the grid shape")
    if cfg.n_pt < 2 * len(names):
        raise ValueError("need at least 2 patients per mask")

    rng = derived_rng(cfg.seed)
    d = int(cfg.grid[0] * cfg.grid[1])
    n = cfg.n_cn + cfg.n_pt
    amps = np.asarray([b[0] for b in cfg.bumps], dtype=float)
    fields = _bump_fields(cfg.grid, cfg.bumps)

    ids = [f"cn_{i + 1:04d}" for i in range(cfg.n_cn)] + \
          [f"pt_{i + 1:04d}" for i in range(cfg.n_pt)]
    labels = np.concatenate([np.full(cfg.n_cn, -1), np.full(cfg.n_pt, 1)])

    # even deterministic split of patients over masks, in id order
    bounds = np.linspace(0, cfg.n_pt, len(names) + 1).round().astype(int)
    patient_mask_idx = np.zeros(cfg.n_pt, dtype=int)
    for mi in range(len(names)):
        patient_mask_idx[bounds[mi]:bounds[mi + 1]] = mi

    ages = rng.uniform(cfg.age_range[0], cfg.age_range[1], size=n)
    scales = np.maximum(1.0 + cfg.subject_sd * rng.standard_normal(n), 0.01)
    age_mid = 0.5 * (cfg.age_range[0] + cfg.age_range[1])

    features = np.ones((n, d))
    if len(cfg.bumps):
        subj_amps = amps[None, :] * np.maximum(
            1.0 + cfg.bump_sd * rng.standard_normal((n, len(cfg.bumps))), 0.0)
        features += subj_amps @ fields
    features *= scales[:, None]
    for pi in range(cfg.n_pt):
        m = masks[names[patient_mask_idx[pi]]].ravel()
        features[cfg.n_cn + pi, m] *= 1.0 - cfg.atrophy_fraction
    features += cfg.age_effect * (ages - age_mid)[:, None]
    if cfg.noise_sd > 0:
        features += cfg.noise_sd * rng.standard_normal((n, d))
    features = np.maximum(features, 0.0)

    ds = Dataset(
        subject_ids=ids,
        features=features,
        labels=labels,
        feature_names=[f"g{i // cfg.grid[1]:02d}_{i % cfg.grid[1]:02d}" for i in range(d)],
        covariates=ages[:, None],
        covariate_names=["cov_age"],
    )
    truth = GroundTruth(
        subtype_of_patient={ids[cfg.n_cn + pi]: names[patient_mask_idx[pi]]
                            for pi in range(cfg.n_pt)},
        masks={k: v.copy() for k, v in masks.items()},
    )
    return ds, truth


def save_ground_truth(truth, truth_path, masks_path):
    """truth CSV: participant_id, subtype_name; masks CSV: row, col, mask_name."""
    pd.DataFrame(
        {"participant_id": list(truth.subtype_of_patient),
         "subtype_name": list(truth.subtype_of_patient.values())}
    ).to_csv(truth_path, index=False)
    rows = []
    for name, m in truth.masks.items():
        for r, c in np.argwhere(m):
            rows.append((int(r), int(c), name))
    pd.DataFrame(rows, columns=["row", "col", "mask_name"]).to_csv(masks_path, index=False)


def load_ground_truth(truth_path, masks_path=None, grid=None):
    """Inverse of save_ground_truth (masks need the grid shape)."""
    tdf = pd.read_csv(truth_path, dtype=str)
    subtype_of_patient = dict(zip(tdf["participant_id"], tdf["subtype_name"]))
    masks = {}
    if masks_path is not None:
        if grid is None:
            raise ValueError("grid shape is required to rebuild masks")
        mdf = pd.read_csv(masks_path)
        for name in mdf["mask_name"].unique():
            m = np.zeros(tuple(grid), dtype=bool)
            sub = mdf[mdf["mask_name"] == name]
            m[sub["row"].to_numpy(), sub["col"].to_numpy()] = True
            masks[name] = m
    return GroundTruth(subtype_of_patient=subtype_of_patient, masks=masks)
