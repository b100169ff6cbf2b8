import numpy as np
import pytest

from polyscale import OPNMF, fit_multiscale, load_basis, save_basis


def test_rank_one_exact():
    # subjects (2,1) and (4,2): rank-1 with direction (2,1)/sqrt(5)
    X = np.array([[2.0, 1.0], [4.0, 2.0]])
    m = OPNMF(n_components=1).fit(X)
    np.testing.assert_allclose(m.components_.ravel(), [2 / np.sqrt(5), 1 / np.sqrt(5)], atol=1e-12)
    np.testing.assert_allclose(m.loadings_.ravel(), [np.sqrt(5), 2 * np.sqrt(5)], atol=1e-12)
    assert m.reconstruction_error(X) < 1e-20


def test_monotone_descent_small():
    X = np.array([[3.0, 0.1], [0.1, 3.0]])
    m = OPNMF(n_components=2, init="random", random_state=1).fit(X)
    trace = np.asarray(m.objective_trace_)
    assert trace[-1] <= trace[0]


def test_determinism_bit_identical():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 1, size=(40, 50))  # 50 features, 40 subjects
    a = OPNMF(n_components=5, init="random", random_state=3).fit(X)
    b = OPNMF(n_components=5, init="random", random_state=3).fit(X)
    assert np.array_equal(a.components_, b.components_)
    c = OPNMF(n_components=5, init="random", random_state=4).fit(X)
    assert not np.array_equal(a.components_, c.components_)


@pytest.mark.parametrize("k", [2, 5, 10])
@pytest.mark.parametrize("seed", [0, 1])
def test_invariants_random_matrices(k, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(80, 100))  # 100 features, 80 subjects
    m = OPNMF(n_components=k, random_state=seed).fit(X)
    C = m.components_
    assert (C >= 0).all()
    np.testing.assert_allclose(np.linalg.norm(C, axis=0), 1.0, atol=1e-12)
    # loadings are exactly the projection of the training data
    np.testing.assert_array_equal(m.loadings_, C.T @ X.T)
    trace = np.asarray(m.objective_trace_)
    assert (np.diff(trace) <= 1e-9 * trace[0]).all()
    assert m.orthonormality_gap_ <= m.orthonormality_gap_init_


def test_project_matches_loadings_and_zero():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, size=(30, 20))
    m = OPNMF(n_components=4, random_state=0).fit(X)
    np.testing.assert_allclose(m.transform(X), m.loadings_.T, atol=1e-12)
    np.testing.assert_array_equal(m.transform(np.zeros((3, 20))), np.zeros((3, 4)))
    # non-negative by construction
    assert (m.transform(rng.uniform(0, 1, size=(5, 20))) >= 0).all()


def test_project_hand_inner_product():
    X = np.array([[2.0, 1.0], [4.0, 2.0]])
    m = OPNMF(n_components=1).fit(X)
    out = m.transform(np.array([[4.0, 2.0]]))
    np.testing.assert_allclose(out, [[2 * np.sqrt(5)]], atol=1e-12)


def test_reconstruction_error_against_elementwise_oracle():
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, size=(25, 30))
    m = OPNMF(n_components=3, random_state=1).fit(X)
    R = X.T - m.components_ @ m.loadings_
    acc = 0.0
    for i in range(R.shape[0]):
        for j in range(R.shape[1]):
            acc += R[i, j] ** 2
    assert abs(m.reconstruction_error(X) - acc) < 1e-12 * max(1.0, acc)
    # explicit loadings argument: zero loadings give the squared norm of X
    assert abs(m.reconstruction_error(X, loadings=np.zeros_like(m.loadings_)) - (X ** 2).sum()) < 1e-9


def test_input_validation():
    X = np.array([[1.0, -0.5], [2.0, 1.0]])
    with pytest.raises(ValueError, match="negative entry"):
        OPNMF(n_components=1).fit(X)
    good = np.abs(X)
    with pytest.raises(ValueError, match="n_components"):
        OPNMF(n_components=3).fit(good)
    with pytest.raises(ValueError, match="n_components"):
        OPNMF(n_components=0).fit(good)
    m = OPNMF(n_components=1).fit(good)
    with pytest.raises(ValueError, match="features"):
        m.transform(np.ones((2, 3)))


def test_multiscale_counts_and_determinism():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 1, size=(8, 10))  # 10 features, 8 subjects
    basis = fit_multiscale(X, [3], seed=1)
    assert basis.scales == [3]
    assert basis.total_component_count == 3
    basis2 = fit_multiscale(X, range(2, 6), seed=1)
    assert basis2.scales == [2, 3, 4, 5]
    assert basis2.total_component_count == 14
    # per-scale seeds derive from (seed, K): same K gives identical result
    np.testing.assert_array_equal(basis.components(3), basis2.components(3))
    # parallel execution does not change results
    basis3 = fit_multiscale(X, range(2, 6), seed=1, n_jobs=2)
    for k in basis2.scales:
        np.testing.assert_array_equal(basis2.components(k), basis3.components(k))
    with pytest.raises(ValueError, match="non-empty"):
        fit_multiscale(X, [], seed=1)


def test_basis_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    X = rng.uniform(0, 1, size=(12, 9))
    basis = fit_multiscale(X, [2, 4], seed=5, feature_names=[f"f{j}" for j in range(9)],
                           subject_ids=[f"s{i}" for i in range(12)])
    save_basis(basis, tmp_path / "basis")
    loaded = load_basis(tmp_path / "basis")
    assert loaded.scales == [2, 4]
    assert loaded.feature_names == basis.feature_names
    assert loaded.subject_ids == basis.subject_ids
    for k in (2, 4):
        np.testing.assert_array_equal(loaded.components(k), basis.components(k))
        np.testing.assert_array_equal(loaded.loadings(k), basis.loadings(k))
