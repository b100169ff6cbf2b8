import numpy as np
import pandas as pd
import pytest
from scipy import stats as sps

from polyscale import (
    Dataset,
    bh_adjust,
    cohens_d,
    fit_multiscale,
    mds_embed,
    subtype_mapping,
    survivor_counts,
    two_sample_ttest,
)
from polyscale.stats import STATS_CSV_COLUMNS, save_stats_table


def bh_brute_force(p, alpha):
    """Literal step-up: find the largest k with p_(k) <= k/m*alpha, reject 1..k."""
    p = np.asarray(p, dtype=float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    k_star = 0
    for k in range(1, m + 1):
        if p[order[k - 1]] <= k / m * alpha:
            k_star = k
    flags = np.zeros(m, dtype=bool)
    for i in range(k_star):
        flags[order[i]] = True
    return flags


def test_ttest_identical_samples():
    t, p = two_sample_ttest([1, 2, 3], [1, 2, 3])
    assert t == 0.0 and p == 1.0


def test_ttest_extreme_separation():
    a = np.zeros(4)
    b = np.ones(4) + 1e-9 * np.arange(4)
    t, p = two_sample_ttest(a, b)
    assert p < 1e-10


def test_ttest_constant_groups():
    t, p = two_sample_ttest([1.0, 1.0], [1.0, 1.0])
    assert (t, p) == (0.0, 1.0)
    t, p = two_sample_ttest([2.0, 2.0], [1.0, 1.0])
    assert np.isinf(t) and t > 0 and p == 1e-300


def test_ttest_derived_case_matches_scipy_oracle():
    a = [1.0, 2.0, 3.0, 4.0]
    b = [3.0, 4.0, 5.0, 6.0]
    t, p = two_sample_ttest(a, b)
    # frozen from the pooled-variance oracle (scipy.stats.ttest_ind, equal_var)
    assert abs(t - (-2.1908902300206643)) < 1e-12
    assert abs(p - 0.07098765432098764) < 1e-12
    t_ref, p_ref = sps.ttest_ind(a, b, equal_var=True)
    assert abs(t - t_ref) < 1e-12 and abs(p - p_ref) < 1e-12


def test_ttest_antisymmetric():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=9), rng.normal(1.0, 2.0, size=6)
    t1, p1 = two_sample_ttest(a, b)
    t2, p2 = two_sample_ttest(b, a)
    assert abs(t1 + t2) < 1e-12 and abs(p1 - p2) < 1e-15


def test_ttest_welch_flag():
    rng = np.random.default_rng(1)
    a, b = rng.normal(0, 1, 12), rng.normal(0.5, 3.0, 7)
    t, p = two_sample_ttest(a, b, equal_var=False)
    t_ref, p_ref = sps.ttest_ind(a, b, equal_var=False)
    assert abs(t - t_ref) < 1e-10 and abs(p - p_ref) < 1e-10


def test_ttest_size_errors():
    with pytest.raises(ValueError):
        two_sample_ttest([1.0], [1.0, 2.0])


def test_bh_hand_case():
    flags = bh_adjust([0.01, 0.02, 0.04, 0.30], alpha=0.05)
    assert flags.tolist() == [True, True, False, False]


def test_bh_all_extremes():
    assert not bh_adjust(np.ones(10), 0.05).any()
    assert bh_adjust(np.zeros(10), 0.05).all()


def test_bh_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(500):
        m = int(rng.integers(1, 201))
        p = rng.random(m)
        if rng.random() < 0.3:  # inject ties
            p = np.round(p, 2)
        alpha = float(rng.uniform(0.01, 0.2))
        np.testing.assert_array_equal(bh_adjust(p, alpha), bh_brute_force(p, alpha))


def test_bh_monotone_in_alpha():
    rng = np.random.default_rng(3)
    p = rng.random(80)
    lo = bh_adjust(p, 0.02)
    hi = bh_adjust(p, 0.10)
    assert (hi | ~lo).all()  # rejects(0.02) subset of rejects(0.10)


def test_bh_validation():
    with pytest.raises(ValueError, match="p-values"):
        bh_adjust([0.5, 1.5])
    with pytest.raises(ValueError, match="alpha"):
        bh_adjust([0.5], alpha=1.0)


def test_cohens_d_cases():
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0
    # pooled sd sqrt(2), mean difference 2
    assert abs(cohens_d([2.0, 4.0], [0.0, 2.0]) - np.sqrt(2)) < 1e-12
    assert abs(cohens_d([0.0, 2.0], [2.0, 4.0]) + np.sqrt(2)) < 1e-12
    with pytest.raises(ValueError, match="zero"):
        cohens_d([1.0, 1.0], [1.0, 1.0])


def test_mds_exact_2d():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 2))
    Y = mds_embed(X, 2)
    D0 = np.linalg.norm(X[:, None] - X[None, :], axis=2)
    D1 = np.linalg.norm(Y[:, None] - Y[None, :], axis=2)
    np.testing.assert_allclose(D0, D1, atol=1e-6)


def test_mds_identical_points():
    X = np.ones((5, 3))
    np.testing.assert_allclose(mds_embed(X, 2), np.zeros((5, 2)), atol=1e-9)


def test_mds_collinear_hand_case():
    X = np.array([[0.0], [1.0], [3.0]])
    Y = mds_embed(X, 1).ravel()
    gaps = np.abs(np.diff(Y))
    np.testing.assert_allclose(sorted(gaps), [1.0, 2.0], atol=1e-9)


def test_mds_validation():
    with pytest.raises(ValueError, match="non-finite"):
        mds_embed(np.array([[np.nan, 0.0], [0.0, 1.0], [1.0, 1.0]]), 1)
    with pytest.raises(ValueError, match="at least"):
        mds_embed(np.ones((2, 2)), 2)
    with pytest.raises(ValueError, match="n_dims"):
        mds_embed(np.ones((5, 2)), 0)


def small_cohort():
    rng = np.random.default_rng(9)
    n_cn, n_a, n_b, d = 12, 6, 6, 10
    feats = np.abs(rng.normal(1.0, 0.1, size=(n_cn + n_a + n_b, d)))
    feats[n_cn:n_cn + n_a, :4] *= 0.7  # subtype 0 deficit
    feats[n_cn + n_a:, 7:] *= 0.7  # subtype 1 deficit
    labels = np.array([-1] * n_cn + [1] * (n_a + n_b))
    ds = Dataset([f"s{i}" for i in range(len(labels))], feats, labels,
                 [f"f{j}" for j in range(d)])
    subtypes = np.array([0] * n_a + [1] * n_b)
    return ds, subtypes


def test_subtype_mapping_structure():
    ds, subtypes = small_cohort()
    basis = fit_multiscale(ds.features, [2, 3], seed=0)
    table = subtype_mapping(basis, ds, subtypes, alpha=0.05)
    assert len(table) == basis.total_component_count * 2
    for s in (0, 1):
        sub = table[table.subtype == s]
        assert len(sub) == 5
        assert (sub.cohens_d.to_numpy() == np.sort(sub.cohens_d.to_numpy())[::-1]).all()
        # indexing mirrors the basis structure
        assert sorted(zip(sub.scale_k, sub.component_index)) == [
            (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]
    assert set(survivor_counts(table)) == {0, 1}
    assert ((table.p >= 0) & (table.p <= 1)).all()
    assert (table.n_cn == 12).all()


def test_subtype_mapping_recomputable_against_scalar_ops():
    ds, subtypes = small_cohort()
    basis = fit_multiscale(ds.features, [2], seed=0)
    table = subtype_mapping(basis, ds, subtypes, alpha=0.05)
    L = basis.loadings(2)
    cn = ds.control_indices
    members = ds.patient_indices[subtypes == 0]
    row = table[(table.subtype == 0) & (table.scale_k == 2) & (table.component_index == 0)].iloc[0]
    t_ref, p_ref = two_sample_ttest(L[0, cn], L[0, members])
    assert abs(row.t - t_ref) < 1e-12 and abs(row.p - p_ref) < 1e-12
    assert abs(row.cohens_d - cohens_d(L[0, cn], L[0, members])) < 1e-12


def test_subtype_mapping_errors():
    ds, subtypes = small_cohort()
    basis = fit_multiscale(ds.features, [2], seed=0)
    with pytest.raises(ValueError, match="cover all"):
        subtype_mapping(basis, ds, subtypes[:-1])
    lonely = subtypes.copy()
    lonely[:] = 0
    lonely[0] = 1
    with pytest.raises(ValueError, match="fewer than 2"):
        subtype_mapping(basis, ds, lonely)


def test_stats_csv_schema(tmp_path):
    ds, subtypes = small_cohort()
    basis = fit_multiscale(ds.features, [2], seed=0)
    table = subtype_mapping(basis, ds, subtypes, alpha=0.05)
    save_stats_table(table, tmp_path / "stats.csv")
    df = pd.read_csv(tmp_path / "stats.csv")
    assert list(df.columns) == STATS_CSV_COLUMNS
    assert set(df.bh_reject.unique()) <= {0, 1}
