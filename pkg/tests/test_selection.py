import numpy as np
import pytest

from polyscale import (
    Dataset,
    StabilityReport,
    adjusted_rand_index,
    fit_multiscale,
    load_stability_report,
    save_stability_report,
    select_num_clusters,
    stability_analysis,
)


def ari_pair_counting(u, v):
    """O(n^2) oracle: count agreeing/disagreeing item pairs."""
    u = np.asarray(u)
    v = np.asarray(v)
    n11 = n00 = n10 = n01 = 0
    n = len(u)
    for i in range(n):
        for j in range(i + 1, n):
            su = u[i] == u[j]
            sv = v[i] == v[j]
            if su and sv:
                n11 += 1
            elif su and not sv:
                n10 += 1
            elif sv:
                n01 += 1
            else:
                n00 += 1
    denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if denom == 0:
        return 1.0 if (n10 == 0 and n01 == 0) else 0.0
    return 2.0 * (n11 * n00 - n10 * n01) / denom


def test_hand_case():
    assert abs(adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) - (-0.5)) < 1e-12


def test_identical_partitions():
    assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert adjusted_rand_index([0, 0, 0], [5, 5, 5]) == 1.0  # single cluster both
    assert adjusted_rand_index([0, 1, 2], [7, 3, 9]) == 1.0  # all singletons both


def test_relabeling_and_symmetry():
    rng = np.random.default_rng(0)
    u = rng.integers(0, 3, 30)
    v = rng.integers(0, 4, 30)
    assert adjusted_rand_index(u, v) == adjusted_rand_index(v, u)
    relabeled = np.array([10 - x for x in v])
    assert abs(adjusted_rand_index(u, v) - adjusted_rand_index(u, relabeled)) < 1e-15


def test_errors():
    with pytest.raises(ValueError, match="different item counts"):
        adjusted_rand_index([0, 1], [0, 1, 2])
    with pytest.raises(ValueError, match="empty"):
        adjusted_rand_index([], [])


def test_against_pair_counting_oracle():
    rng = np.random.default_rng(123)
    for _ in range(200):
        n = int(rng.integers(2, 51))
        u = rng.integers(0, int(rng.integers(1, 7)), n)
        v = rng.integers(0, int(rng.integers(1, 7)), n)
        assert abs(adjusted_rand_index(u, v) - ari_pair_counting(u, v)) < 1e-12


def _report(mean):
    mean = np.asarray(mean, dtype=float)
    return StabilityReport(
        c_values=list(range(2, 2 + mean.shape[0])),
        k_values=[10 * (i + 1) for i in range(mean.shape[1])],
        mean_ari=mean,
        std_ari=np.zeros_like(mean),
        repetitions=5,
        test_fraction=0.2,
    )


def test_select_dominant_row():
    report = _report([[0.9, 0.8], [0.5, 0.6], [0.4, 0.3]])
    assert select_num_clusters(report) == 2
    assert select_num_clusters(report, [20]) == 2


def test_select_tie_goes_small():
    report = _report([[0.5, 0.5], [0.5, 0.5]])
    assert select_num_clusters(report) == 2


def test_select_single_column_and_errors():
    report = _report([[0.2], [0.9], [0.3]])
    assert select_num_clusters(report) == 3
    with pytest.raises(ValueError, match="empty"):
        select_num_clusters(report, [])
    with pytest.raises(ValueError, match="not present"):
        select_num_clusters(report, [99])


def point_mass_dataset():
    """Two patient point-masses far from a control mass: clustering is
    deterministic, so stability must be exactly 1."""
    rng = np.random.default_rng(5)
    n_cn, n_a, n_b, d = 20, 10, 10, 6
    feats = np.vstack([
        1.0 + 0.01 * rng.random((n_cn, d)),
        np.tile([9.0, 1, 1, 1, 1, 1], (n_a, 1)) + 0.01 * rng.random((n_a, d)),
        np.tile([1, 1, 1, 1, 1, 9.0], (n_b, 1)) + 0.01 * rng.random((n_b, d)),
    ])
    labels = np.array([-1] * n_cn + [1] * (n_a + n_b))
    return Dataset([f"s{i}" for i in range(len(labels))], feats, labels,
                   [f"f{j}" for j in range(d)])


def test_stability_deterministic_data_gives_one():
    ds = point_mass_dataset()
    basis = fit_multiscale(ds.features, [2, 3], seed=0)
    report = stability_analysis(ds, basis, [2], [2, 3], repetitions=3,
                                test_fraction=0.2, n_restarts=2, seed=1)
    np.testing.assert_array_equal(report.mean_ari, np.ones((1, 2)))


def test_stability_two_repetitions_zero_std():
    ds = point_mass_dataset()
    basis = fit_multiscale(ds.features, [2], seed=0)
    report = stability_analysis(ds, basis, [2], [2], repetitions=2,
                                test_fraction=0.2, n_restarts=2, seed=1)
    assert report.std_ari[0, 0] == 0.0


def test_stability_determinism_and_jobs_invariance():
    ds = point_mass_dataset()
    basis = fit_multiscale(ds.features, [2, 3], seed=0)
    a = stability_analysis(ds, basis, [2, 3], [2, 3], repetitions=2, n_restarts=2, seed=7)
    b = stability_analysis(ds, basis, [2, 3], [2, 3], repetitions=2, n_restarts=2, seed=7,
                           n_jobs=2)
    np.testing.assert_array_equal(a.mean_ari, b.mean_ari)
    np.testing.assert_array_equal(a.std_ari, b.std_ari)


def test_stability_too_few_shared_patients():
    rng = np.random.default_rng(2)
    feats = np.abs(rng.random((14, 4)))
    labels = np.array([-1] * 10 + [1] * 4)
    ds = Dataset([f"s{i}" for i in range(14)], feats, labels, [f"f{j}" for j in range(4)])
    basis = fit_multiscale(ds.features, [2], seed=0)
    with pytest.raises(ValueError, match="test_fraction is too large"):
        stability_analysis(ds, basis, [2], [2], repetitions=4, test_fraction=0.5,
                           n_restarts=1, seed=0)


def test_stability_missing_scale():
    ds = point_mass_dataset()
    basis = fit_multiscale(ds.features, [2], seed=0)
    with pytest.raises(ValueError, match="not present"):
        stability_analysis(ds, basis, [2], [2, 9], repetitions=2, seed=0)


def test_report_round_trip(tmp_path):
    report = _report([[0.9, 0.8], [0.5, 0.6]])
    save_stability_report(report, tmp_path / "r.json", tmp_path / "r.csv")
    loaded = load_stability_report(tmp_path / "r.json")
    np.testing.assert_array_equal(loaded.mean_ari, report.mean_ari)
    assert loaded.c_values == report.c_values
    assert loaded.k_values == report.k_values
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "c,k,mean_ari,std_ari"
    assert len(text) == 5
