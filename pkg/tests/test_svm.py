import numpy as np
import pytest

from polyscale import fit_weighted_linear_svm
from polyscale.svm import solve_svm_dual, svm_objective


def cvxopt_reference(X, y, box):
    """Independent QP oracle for the dual problem."""
    from cvxopt import matrix, solvers

    solvers.options["show_progress"] = False
    n = len(y)
    G = X @ X.T
    Q = np.outer(y, y) * G
    sol = solvers.qp(
        matrix(Q + 1e-12 * np.eye(n)),
        matrix(-np.ones(n)),
        matrix(np.vstack([-np.eye(n), np.eye(n)])),
        matrix(np.concatenate([np.zeros(n), box])),
        matrix(y.reshape(1, -1).astype(float)),
        matrix(np.zeros(1)),
    )
    alpha = np.array(sol["x"]).ravel()
    return alpha.sum() - 0.5 * alpha @ Q @ alpha


def test_separable_1d_margin():
    X = np.array([[-2.0], [-2.1], [2.0], [2.1]])
    y = np.array([-1, -1, 1, 1])
    hp = fit_weighted_linear_svm(X, y, reg_c=100.0, tol=1e-8)
    scores = hp.scores(X)
    assert (np.sign(scores) == y).all()
    assert (np.abs(scores) >= 1 - 1e-3).all()


def test_zero_weight_point_is_omitted():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    y = np.where(rng.random(30) < 0.5, 1, -1)
    y[:3] = -1
    y[-3:] = 1
    X[y == 1] += 1.0
    w = np.ones(30)
    w[11] = 0.0
    full = fit_weighted_linear_svm(X, y, w, reg_c=0.7, tol=1e-9)
    keep = np.arange(30) != 11
    dropped = fit_weighted_linear_svm(X[keep], y[keep], w[keep], reg_c=0.7, tol=1e-9)
    np.testing.assert_allclose(full.weights, dropped.weights, atol=1e-8)
    assert abs(full.bias - dropped.bias) < 1e-8


def test_xor_is_not_linearly_separable():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1, 1, -1, -1])
    # oracle: no sign pattern realizable by a linear rule classifies > 3/4
    best = 0
    for w1 in np.linspace(-2, 2, 21):
        for w2 in np.linspace(-2, 2, 21):
            for b in np.linspace(-3, 3, 31):
                pred = np.where(X @ np.array([w1, w2]) + b > 0, 1, -1)
                best = max(best, (pred == y).mean())
    assert best <= 0.75
    hp = fit_weighted_linear_svm(X, y, reg_c=10.0)
    pred = np.where(hp.scores(X) > 0, 1, -1)
    assert (pred == y).mean() <= 0.75


@pytest.mark.parametrize("seed", range(5))
def test_matches_qp_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k = 60, 7
    X = rng.normal(size=(n, k))
    y = np.where(rng.random(n) < 0.5, 1, -1)
    y[0] = -1
    y[1] = 1
    X[y == 1] += 0.5
    sw = rng.random(n)
    sw[rng.random(n) < 0.2] = 0.0
    sw[0] = sw[1] = 1.0
    box = 0.8 * sw
    tol = 1e-8
    alpha, bias, _, gap = solve_svm_dual(X @ X.T, y.astype(float), box, tol, 500000)
    assert gap < tol
    Q = np.outer(y, y) * (X @ X.T)
    dual = alpha.sum() - 0.5 * alpha @ Q @ alpha
    w = X.T @ (alpha * y)
    primal = 0.5 * w @ w + (box * np.maximum(0, 1 - y * (X @ w + bias))).sum()
    assert primal - dual >= -1e-9
    assert primal - dual < 1e-6 * (1 + abs(primal))
    ref = cvxopt_reference(X, y, box)
    assert abs(dual - ref) < 1e-6 * (1 + abs(ref))


def test_warm_start_reaches_same_solution():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 4))
    y = np.where(rng.random(50) < 0.5, 1, -1)
    y[:2] = [-1, 1]
    X[y == 1] += 1.0
    box = 0.5 * np.ones(50)
    G = X @ X.T
    a_cold, b_cold, _, _ = solve_svm_dual(G, y.astype(float), box, 1e-10, 500000)
    start = np.clip(a_cold + 0.1 * rng.random(50), 0, box)
    a_warm, b_warm, _, gap = solve_svm_dual(G, y.astype(float), box, 1e-10, 500000, alpha0=start)
    assert gap < 1e-10
    Q = np.outer(y, y) * G
    d_cold = a_cold.sum() - 0.5 * a_cold @ Q @ a_cold
    d_warm = a_warm.sum() - 0.5 * a_warm @ Q @ a_warm
    assert abs(d_cold - d_warm) < 1e-9 * (1 + abs(d_cold))


def test_validation_errors():
    X = np.array([[0.0], [1.0]])
    y = np.array([-1, 1])
    with pytest.raises(ValueError, match="zero total weight"):
        fit_weighted_linear_svm(X, y, np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="positive"):
        fit_weighted_linear_svm(X, y, reg_c=0.0)
    with pytest.raises(ValueError, match="non-finite"):
        fit_weighted_linear_svm(np.array([[np.nan], [1.0]]), y)
    with pytest.raises(ValueError, match="invalid label"):
        fit_weighted_linear_svm(X, np.array([0, 1]))
    with pytest.raises(ValueError, match="finite"):
        fit_weighted_linear_svm(X, y, np.array([np.inf, 1.0]))


def test_objective_helper_matches_definition():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 3))
    y = np.where(rng.random(20) < 0.5, 1, -1)
    y[:2] = [-1, 1]
    sw = rng.random(20)
    sw[:2] = 1.0
    hp = fit_weighted_linear_svm(X, y, sw, reg_c=0.4)
    manual = 0.5 * hp.weights @ hp.weights
    for i in range(20):
        manual += 0.4 * sw[i] * max(0.0, 1.0 - y[i] * (X[i] @ hp.weights + hp.bias))
    assert abs(svm_objective(hp, X, y, sw, 0.4) - manual) < 1e-12
