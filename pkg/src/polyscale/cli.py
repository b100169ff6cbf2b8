"""Command-line pipeline driver.

Stages are file-based and individually reproducible: ``simulate`` writes a
synthetic cohort, ``decompose`` residualizes covariates and fits the
multi-scale basis once on the full dataset, ``select`` scores clustering
stability from that basis, ``cluster`` runs the multi-scale consensus
clustering, ``stats`` maps subtypes statistically and ``predict`` applies a
fitted model to new data.

All randomness flows from one ``--seed``: simulate passes it to the cohort
generator; decompose derives one seed per scale as (seed, K); select derives
(seed, 1, repetition) for splits and (seed, 2, c, K, repetition) for fits;
cluster derives (seed, K_init) per initialization scale; predict's
``--compare-split`` baseline uses the seed directly. Exit codes: 0 success,
1 data/computation error, 2 usage error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import (
    CovariateModel,
    apply_covariate_correction,
    load_dataset,
    residualize_covariates,
    save_dataset,
)
from .multiscale import MultiScaleClustering, save_clustering
from .opnmf import fit_multiscale, load_basis, save_basis
from .polytope import balanced_accuracy, fit_random_split_polytope, load_polytope
from .selection import save_stability_report, select_num_clusters, stability_analysis
from .simulate import SimConfig, generate_cohort, save_ground_truth
from .stats import mds_embed, save_mds_coordinates, save_stats_table, subtype_mapping, survivor_counts


def _fraction(value):
    f = float(value)
    if not 0.0 < f < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0,1), got {value}")
    return f


def _atrophy(value):
    try:
        f = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"atrophy_fraction must be in (0,1), got {value!r}")
    if not 0.0 < f < 1.0:
        raise argparse.ArgumentTypeError("atrophy_fraction must be in (0,1)")
    return f


def _positive_int(value):
    i = int(value)
    if i < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return i


def _k_set(value):
    """Parse 'a:b:step' or a comma-separated list into a sorted scale list."""
    try:
        if ":" in value:
            parts = [int(p) for p in value.split(":")]
            if len(parts) == 2:
                lo, hi, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                lo, hi, step = parts
            else:
                raise ValueError
            if step < 1 or hi < lo:
                raise ValueError
            ks = list(range(lo, hi + 1, step))
        else:
            ks = [int(p) for p in value.split(",") if p.strip()]
        if not ks or min(ks) < 1:
            raise ValueError
        return sorted(set(ks))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid scale set {value!r}; use 'a:b:step' or a comma list"
        )


def _split_sizes(value):
    try:
        n1, n2 = (int(p) for p in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'n1,n2', got {value!r}")
    if n1 < 1 or n2 < 1:
        raise argparse.ArgumentTypeError("both split sizes must be positive")
    return n1, n2


def _grid(value):
    try:
        r, c = (int(p) for p in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'rows,cols', got {value!r}")
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return r, c


def _load_covariate_model(basis_dir):
    path = Path(basis_dir) / "covariate_model.csv"
    if not path.exists():
        return None
    df = pd.read_csv(path)
    cov_names = [c for c in df.columns if c.startswith("slope_")]
    means = _read_cov_means(basis_dir) if cov_names else np.zeros(0)
    return CovariateModel(
        covariate_means_cn=means,
        slopes=df[cov_names].to_numpy(dtype=np.float64),
        intercepts=df["intercept"].to_numpy(dtype=np.float64),
        covariate_names=[c[len("slope_"):] for c in cov_names],
    )


def _read_cov_means(basis_dir):
    return np.loadtxt(Path(basis_dir) / "covariate_means.csv", delimiter=",", ndmin=1)


def _save_covariate_model(model, basis_dir):
    df = pd.DataFrame({"intercept": model.intercepts})
    for q, name in enumerate(model.covariate_names):
        df[f"slope_{name}"] = model.slopes[:, q]
    df.to_csv(Path(basis_dir) / "covariate_model.csv", index=False, float_format="%.17g")
    np.savetxt(Path(basis_dir) / "covariate_means.csv", model.covariate_means_cn,
               delimiter=",", fmt="%.17g")


def cmd_simulate(args):
    cfg = SimConfig(n_cn=args.n_cn, n_pt=args.n_pt, grid=args.grid,
                    noise_sd=args.noise_sd, subject_sd=args.subject_sd,
                    atrophy_fraction=args.atrophy, seed=args.seed)
    ds, truth = generate_cohort(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.csv")
    save_ground_truth(truth, out / "truth.csv", out / "masks.csv")
    print(f"wrote {out / 'dataset.csv'} ({ds.n_subjects} subjects x {ds.n_features} features)")
    return 0


def cmd_decompose(args):
    ds = load_dataset(args.data)
    ds, cov_model = residualize_covariates(ds)
    if args.k_set is not None:
        ks = args.k_set
    else:
        if args.k_max < args.k_min:
            raise ValueError("--k-max must be >= --k-min")
        ks = list(range(args.k_min, args.k_max + 1))
    basis = fit_multiscale(ds.features, ks, tol=args.tol, max_iter=args.max_iter,
                           seed=args.seed, n_jobs=args.jobs,
                           feature_names=ds.feature_names, subject_ids=ds.subject_ids)
    save_basis(basis, args.out)
    _save_covariate_model(cov_model, args.out)
    print(f"wrote basis with {len(ks)} scales ({basis.total_component_count} components) to {args.out}")
    return 0


def cmd_select(args):
    ds = load_dataset(args.data)
    basis = load_basis(args.basis)
    k_values = args.k_set if args.k_set is not None else basis.scales
    report = stability_analysis(ds, basis, range(args.c_min, args.c_max + 1), k_values,
                                repetitions=args.repetitions, test_fraction=args.test_size,
                                reg_c=args.reg_c, n_restarts=args.restarts,
                                seed=args.seed, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_stability_report(report, out / "stability.json", out / "stability.csv")
    plateau = args.k_plateau if args.k_plateau is not None else k_values
    c_best = select_num_clusters(report, plateau)
    print(f"selected c = {c_best} (mean ARI over scales {plateau})")
    return 0


def cmd_cluster(args):
    ds = load_dataset(args.data)
    basis = load_basis(args.basis)
    model = MultiScaleClustering(
        n_clusters=args.c, scales=args.k_set, reg_c=args.reg_c,
        n_restarts=args.restarts, consistency_threshold=args.consistency_threshold,
        max_cycles=args.max_cycles, random_state=args.seed, n_jobs=args.jobs,
    ).fit(basis, ds.labels)
    save_clustering(model, args.out, ds.patient_ids())
    print(f"predict scale K={model.predict_scale_}, "
          f"consensus over {len(model.scales_)} initializations written to {args.out}")
    return 0


def cmd_stats(args):
    ds = load_dataset(args.data)
    basis = load_basis(args.basis)
    cons = pd.read_csv(Path(args.clustering) / "consensus.csv", dtype={"participant_id": str})
    assign = dict(zip(cons["participant_id"], cons["subtype"]))
    patient_ids = ds.patient_ids()
    missing = [p for p in patient_ids if p not in assign]
    if missing:
        raise ValueError(f"consensus assignments missing for patients: {missing[:5]}")
    subtype_labels = np.array([assign[p] for p in patient_ids], dtype=np.int64)

    table = subtype_mapping(basis, ds, subtype_labels, alpha=args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_stats_table(table, out / "stats.csv")

    conv = json.loads((Path(args.clustering) / "convergence.json").read_text())
    k_pred = int(conv["predict_scale"])
    feats = basis.loadings(k_pred).T
    coords = mds_embed(feats, n_dims=args.mds_dims)
    groups = ["CN" if lab == -1 else f"subtype_{assign[sid]}"
              for sid, lab in zip(ds.subject_ids, ds.labels)]
    save_mds_coordinates(coords, ds.subject_ids, groups, out / "mds.csv")
    counts = survivor_counts(table)
    print(f"wrote stats for {basis.total_component_count} components per subtype; "
          f"survivors: {counts}")
    return 0


def cmd_predict(args):
    basis = load_basis(args.basis)
    cov_model = _load_covariate_model(args.basis)
    model, _, scale_k = load_polytope(Path(args.model) / "polytope")
    if scale_k is None:
        raise ValueError("persisted polytope does not record its scale")
    components = basis.components(scale_k)

    new = load_dataset(args.data, allow_unlabeled=True)
    feats = new.features
    if cov_model is not None and cov_model.slopes.shape[1] > 0:
        feats = apply_covariate_correction(cov_model, feats, new.covariates)
    loadings = feats @ components

    labels_pred = model.predict(loadings)
    subtypes = model.predict_subtype(loadings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"participant_id": new.subject_ids, "predicted_label": labels_pred,
                  "subtype": subtypes}).to_csv(out / "predictions.csv", index=False)

    labeled = np.flatnonzero(new.labels != 0)
    if args.ba:
        if labeled.size == 0 or len(set(new.labels[labeled])) < 2:
            raise UsageError("--ba requires labeled input with both classes")
        ba = balanced_accuracy(new.labels[labeled], labels_pred[labeled])
        print(f"balanced accuracy (polytope): {ba:.4f}")

    if args.compare_split is not None:
        if args.train_data is None:
            raise UsageError("--compare-split requires --train-data")
        train = load_dataset(args.train_data)
        tfeats = train.features
        if cov_model is not None and cov_model.slopes.shape[1] > 0:
            tfeats = apply_covariate_correction(cov_model, tfeats, train.covariates)
        n1, n2 = args.compare_split
        n_pt = train.patient_indices.size
        if n1 + n2 != n_pt:
            raise UsageError(f"--compare-split sizes must sum to the patient count ({n_pt})")
        baseline = fit_random_split_polytope(tfeats @ components, train.labels,
                                             (n1, n2), reg_c=model.reg_c, seed=args.seed)
        if labeled.size and len(set(new.labels[labeled])) == 2:
            ba_split = balanced_accuracy(new.labels[labeled],
                                         baseline.predict(loadings[labeled]))
            print(f"balanced accuracy (random-split baseline): {ba_split:.4f}")
    return 0


class UsageError(Exception):
    """Command-line misuse detected after parsing; exits with code 2."""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polyscale",
        description="Multi-scale semi-supervised clustering pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root random seed (default 0)")
        p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-cn", type=_positive_int, default=100)
    p.add_argument("--n-pt", type=_positive_int, default=100)
    p.add_argument("--grid", type=_grid, default=(20, 20), help="rows,cols (default 20,20)")
    p.add_argument("--noise-sd", type=float, default=0.35)
    p.add_argument("--subject-sd", type=float, default=0.0)
    p.add_argument("--atrophy", type=_atrophy, default=0.10)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="fit the multi-scale basis")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-min", type=_positive_int, default=2)
    p.add_argument("--k-max", type=_positive_int, default=60)
    p.add_argument("--k-set", type=_k_set, default=None, help="'a:b:step' or comma list")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int, default=2000)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("select", help="clustering-stability model selection")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c-min", type=_positive_int, default=2)
    p.add_argument("--c-max", type=_positive_int, default=4)
    p.add_argument("--k-set", type=_k_set, default=None, help="scales to score (default: all)")
    p.add_argument("--k-plateau", type=_k_set, default=None,
                   help="scales averaged when selecting c (default: scored scales)")
    p.add_argument("--repetitions", type=_positive_int, default=100)
    p.add_argument("--test-size", type=_fraction, default=0.2)
    p.add_argument("--reg-c", type=float, default=1.0)
    p.add_argument("--restarts", type=_positive_int, default=10)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="multi-scale consensus clustering")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=_positive_int, default=2)
    p.add_argument("--k-set", type=_k_set, default=None, help="scales to cycle (default: all)")
    p.add_argument("--reg-c", type=float, default=1.0)
    p.add_argument("--restarts", type=_positive_int, default=10)
    p.add_argument("--max-cycles", type=_positive_int, default=10)
    p.add_argument("--consistency-threshold", type=float, default=0.98)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("stats", help="statistical subtype mapping + MDS")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--clustering", required=True, help="output directory of 'cluster'")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=_fraction, default=0.05)
    p.add_argument("--mds-dims", type=_positive_int, default=2)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("predict", help="apply a fitted model to new data")
    common(p)
    p.add_argument("--data", required=True, help="new cohort CSV (diagnosis 0 = unknown)")
    p.add_argument("--basis", required=True)
    p.add_argument("--model", required=True, help="output directory of 'cluster'")
    p.add_argument("--out", required=True)
    p.add_argument("--ba", action="store_true", help="report balanced accuracy (labels required)")
    p.add_argument("--compare-split", type=_split_sizes, default=None,
                   help="'n1,n2': also fit the random-split two-SVM baseline")
    p.add_argument("--train-data", default=None, help="training cohort CSV for --compare-split")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
