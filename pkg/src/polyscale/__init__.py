"""polyscale: multi-scale semi-supervised clustering of patient cohorts.

Pipeline: extract loading features at many decomposition scales (OPNMF),
cluster patients against controls with a max-margin convex polytope, cycle
the clustering across scales to a consensus subtype labeling, select the
number of clusters by holdout stability, and map subtypes statistically.
"""

from .dataset import (
    CovariateModel,
    Dataset,
    apply_covariate_correction,
    load_dataset,
    residualize_covariates,
    save_dataset,
    stratified_holdout_split,
    stratified_split_indices,
)
from .multiscale import MultiScaleClustering, cross_scale_consistency, save_clustering
from .opnmf import OPNMF, MultiScaleBasis, fit_multiscale, load_basis, save_basis
from .polytope import (
    PolytopeClustering,
    balanced_accuracy,
    consensus_from_runs,
    fit_random_split_polytope,
    init_membership,
    load_polytope,
    save_polytope,
)
from .selection import (
    StabilityReport,
    adjusted_rand_index,
    load_stability_report,
    save_stability_report,
    select_num_clusters,
    stability_analysis,
)
from .simulate import GroundTruth, SimConfig, default_masks, generate_cohort
from .stats import (
    bh_adjust,
    cohens_d,
    mds_embed,
    subtype_mapping,
    survivor_counts,
    two_sample_ttest,
)
from .svm import Hyperplane, fit_weighted_linear_svm

__version__ = "0.1.0"

__all__ = [
    "CovariateModel",
    "Dataset",
    "GroundTruth",
    "Hyperplane",
    "MultiScaleBasis",
    "MultiScaleClustering",
    "OPNMF",
    "PolytopeClustering",
    "SimConfig",
    "StabilityReport",
    "adjusted_rand_index",
    "apply_covariate_correction",
    "balanced_accuracy",
    "bh_adjust",
    "cohens_d",
    "consensus_from_runs",
    "cross_scale_consistency",
    "default_masks",
    "fit_multiscale",
    "fit_random_split_polytope",
    "fit_weighted_linear_svm",
    "generate_cohort",
    "init_membership",
    "load_basis",
    "load_dataset",
    "load_polytope",
    "load_stability_report",
    "mds_embed",
    "residualize_covariates",
    "save_basis",
    "save_clustering",
    "save_dataset",
    "save_polytope",
    "save_stability_report",
    "select_num_clusters",
    "stability_analysis",
    "stratified_holdout_split",
    "stratified_split_indices",
    "subtype_mapping",
    "survivor_counts",
    "two_sample_ttest",
]
