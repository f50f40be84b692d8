import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_differences, frozen_plan_objective, linprog_ot, naive_cost, vertex_enumeration_ot
from sgot.transport import (
    NumericError,
    SinkhornConfig,
    TransportPlan,
    cost_matrix,
    exact_ot,
    gwd,
    gwd_gradient,
    marginal_violation,
    round_to_marginals,
    sinkhorn,
)


def rand_pair(rng, n=None, m=None, d=None):
    n = n or int(rng.integers(2, 7))
    m = m or int(rng.integers(2, 7))
    d = d or int(rng.integers(1, 5))
    return rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (m, d))


def test_cost_matrix_small_cases():
    np.testing.assert_array_equal(cost_matrix([[0.0, 0.0]], [[0.0, 0.0]]), [[0.0]])
    np.testing.assert_array_equal(cost_matrix([[0.0], [1.0]], [[0.0], [2.0]]), [[0.0, 4.0], [1.0, 1.0]])


def test_cost_matrix_matches_double_loop():
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(cost_matrix(X, Y), naive_cost(X, Y), rtol=0, atol=1e-12)


def test_cost_matrix_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        cost_matrix(np.zeros((2, 3)), np.zeros((2, 2)))


@pytest.mark.parametrize("lam", [0.01, 1.0, 1e4])
def test_sinkhorn_single_cell(lam):
    plan = sinkhorn(np.array([[3.7]]), SinkhornConfig(lam=lam))
    np.testing.assert_array_equal(plan.matrix, [[1.0]])
    assert plan.violation == 0.0


def test_sinkhorn_diagonal_plan():
    plan = sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]), SinkhornConfig(lam=50))
    assert plan.converged
    assert plan.matrix[0, 1] < 1e-10 and plan.matrix[1, 0] < 1e-10
    np.testing.assert_allclose(np.diag(plan.matrix), [0.5, 0.5], atol=1e-10)
    cost, exact = exact_ot(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(plan.matrix, exact.matrix, atol=1e-10)


@pytest.mark.parametrize("shape", [(2, 2), (3, 5), (4, 1), (6, 4)])
def test_sinkhorn_zero_cost_is_product(shape):
    plan = sinkhorn(np.zeros(shape))
    n, m = shape
    np.testing.assert_allclose(plan.matrix, np.full(shape, 1.0 / (n * m)), rtol=0, atol=1e-16)


def test_sinkhorn_rejects_non_finite():
    with pytest.raises(NumericError):
        sinkhorn(np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(NumericError):
        sinkhorn(np.array([[0.0, np.nan], [1.0, 0.0]]))


def test_sinkhorn_reports_non_convergence():
    rng = np.random.default_rng(4)
    M = cost_matrix(*rand_pair(rng, 5, 6, 3))
    plan = sinkhorn(M, SinkhornConfig(lam=2000, max_iter=3))
    assert not plan.converged
    assert plan.iterations == 3
    assert plan.violation > 1e-9


def test_sinkhorn_log_domain_avoids_underflow():
    M = np.array([[0.0, 900.0], [900.0, 0.0], [450.0, 450.0]])
    plan = sinkhorn(M, SinkhornConfig(lam=1000))
    assert plan.log_domain and plan.converged
    assert np.all(np.isfinite(plan.matrix))


@pytest.mark.parametrize("seed", range(10))
def test_log_and_direct_domain_agree(seed):
    rng = np.random.default_rng(seed)
    M = cost_matrix(*rand_pair(rng))
    cfg = dict(lam=5.0, tol=1e-12, max_iter=5000)
    direct = sinkhorn(M, SinkhornConfig(domain="direct", **cfg))
    log = sinkhorn(M, SinkhornConfig(domain="log", **cfg))
    assert not direct.log_domain and log.log_domain
    np.testing.assert_allclose(direct.matrix, log.matrix, rtol=0, atol=1e-8)


def test_entropic_plan_has_scaling_form():
    rng = np.random.default_rng(11)
    M = cost_matrix(*rand_pair(rng, 4, 5, 2))
    lam = 3.0
    T = sinkhorn(M, SinkhornConfig(lam=lam, tol=1e-13)).matrix
    # T = diag(u) K diag(v) means log T + lam M has rank one in the additive sense
    L = np.log(T) + lam * M
    resid = L - L[:, :1] - L[:1, :] + L[0, 0]
    assert np.abs(resid).max() < 1e-8


def test_gwd_identical_sets():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (5, 3))
    d, plan = gwd(X, X[::-1], SinkhornConfig(lam=1000))
    assert d < 1e-6


def test_gwd_single_pair():
    for lam in (0.1, 10.0, 1000.0):
        d, plan = gwd([[0.0]], [[3.0]], SinkhornConfig(lam=lam))
        assert d == 9.0


def test_gwd_close_to_exact_4_vs_5():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X, Y = rand_pair(rng, 4, 5, 3)
        d, _ = gwd(X, Y, SinkhornConfig(lam=200))
        exact = linprog_ot(cost_matrix(X, Y))
        assert abs(d - exact) <= 0.01 * exact


def test_exact_ot_small_cases():
    cost, plan = exact_ot(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert cost == 0.0
    np.testing.assert_array_equal(plan.matrix, np.diag([0.5, 0.5]))
    assert exact_ot(np.array([[2.0]]))[0] == 2.0


def test_exact_ot_two_by_three():
    M = np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]])
    # frozen from vertex enumeration of the 2x3 transportation polytope
    assert vertex_enumeration_ot(M) == pytest.approx(1 / 3, abs=1e-14)
    cost, plan = exact_ot(M)
    assert cost == pytest.approx(1 / 3, abs=1e-14)
    assert marginal_violation(plan.matrix) < 1e-15


@pytest.mark.parametrize("seed", range(15))
def test_exact_ot_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    n, m = rng.integers(1, 4, 2)
    M = rng.uniform(0, 4, (n, m))
    assert exact_ot(M)[0] == pytest.approx(vertex_enumeration_ot(M), abs=1e-12)


@pytest.mark.parametrize("seed", range(15))
def test_exact_ot_matches_linprog(seed):
    rng = np.random.default_rng(200 + seed)
    n, m = rng.integers(2, 9, 2)
    M = rng.uniform(0, 4, (n, m))
    cost, plan = exact_ot(M)
    assert cost == pytest.approx(linprog_ot(M), abs=1e-10)
    assert float(np.sum(plan.matrix * M)) == pytest.approx(cost, abs=1e-12)


def test_exact_ot_size_guard():
    with pytest.raises(ValueError, match="400"):
        exact_ot(np.zeros((20, 21)))
    exact_ot(np.zeros((20, 20)))


def test_exact_ot_scale_equivariance():
    rng = np.random.default_rng(5)
    M = rng.uniform(0, 4, (4, 6))
    base = exact_ot(M)[0]
    for c in (0.5, 3.0, 17.0):
        assert exact_ot(c * M)[0] == pytest.approx(c * base, rel=1e-12)


def test_sinkhorn_gap_shrinks_with_lam():
    rng = np.random.default_rng(6)
    for _ in range(5):
        M = rng.uniform(0, 4, (4, 5))
        exact = exact_ot(M)[0]
        gaps = []
        for lam in (1, 10, 100, 1000):
            plan = sinkhorn(M, SinkhornConfig(lam=lam))
            cost = float(np.sum(plan.matrix * M))
            assert cost >= exact - 1e-9
            gaps.append(cost - exact)
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.005 * exact


def test_gradient_small_cases():
    gv, gw = gwd_gradient([[1.0, 2.0]], [[1.0, 2.0]], np.array([[1.0]]))
    np.testing.assert_array_equal(gv, [[0.0, 0.0]])
    np.testing.assert_array_equal(gw, [[0.0, 0.0]])
    gv, gw = gwd_gradient([[0.0]], [[3.0]], TransportPlan(np.array([[1.0]]), 0, 0.0))
    np.testing.assert_array_equal(gv, [[-6.0]])
    np.testing.assert_array_equal(gw, [[6.0]])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    X, Y = rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, (4, 2))
    _, plan = gwd(X, Y)
    T = plan.matrix
    gv, gw = gwd_gradient(X, Y, plan)
    fv = central_differences(lambda Z: frozen_plan_objective(Z, Y, T), X)
    fw = central_differences(lambda Z: frozen_plan_objective(X, Z, T), Y)
    assert np.abs(gv - fv).max() / np.abs(fv).max() < 1e-6
    assert np.abs(gw - fw).max() / np.abs(fw).max() < 1e-6


def test_gradient_shape_mismatch():
    with pytest.raises(ValueError, match="plan shape"):
        gwd_gradient(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((3, 2)))


def test_round_to_marginals_is_feasible_and_close():
    rng = np.random.default_rng(9)
    T = np.full((3, 4), 1 / 12) + rng.uniform(-1e-6, 1e-6, (3, 4))
    R = round_to_marginals(T)
    assert marginal_violation(R) < 1e-15
    assert R.min() >= 0
    assert np.abs(R - T).sum() <= 2 * (np.abs(T.sum(1) - 1 / 3).sum() + np.abs(T.sum(0) - 1 / 4).sum()) + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**20), st.sampled_from([1.0, 30.0, 1000.0]))
def test_plans_are_feasible(n, m, d, seed, lam):
    rng = np.random.default_rng(seed)
    X, Y = rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (m, d))
    dist, plan = gwd(X, Y, SinkhornConfig(lam=lam))
    assert plan.converged and plan.violation <= 1e-9
    assert plan.matrix.min() >= 0 and plan.matrix.max() <= 1
    assert dist >= exact_ot(cost_matrix(X, Y))[0] - 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**20))
def test_symmetry_and_permutation_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (m, 3))
    d, _ = gwd(X, Y)
    assert abs(d - gwd(Y, X)[0]) < 1e-9
    assert abs(d - gwd(X[rng.permutation(n)], Y[rng.permutation(m)])[0]) < 1e-9


@pytest.mark.parametrize("n,m", [(40, 40), (60, 80)])
def test_large_graphs_converge_at_high_lam(n, m):
    rng = np.random.default_rng(n + m)
    X, Y = rng.uniform(-1, 1, (n, 4)), rng.uniform(-1, 1, (m, 4))
    d, plan = gwd(X, Y, SinkhornConfig(lam=1000))
    assert plan.converged and plan.violation <= 1e-9
    exact = linprog_ot(cost_matrix(X, Y))
    assert exact - 1e-9 <= d <= 1.01 * exact


def test_concurrent_solves_are_deterministic():
    from concurrent.futures import ThreadPoolExecutor

    rng = np.random.default_rng(12)
    pairs = [rand_pair(rng) for _ in range(40)]
    serial = [gwd(X, Y, SinkhornConfig(lam=500))[0] for X, Y in pairs]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(lambda p: gwd(*p, SinkhornConfig(lam=500))[0], pairs))
    assert threaded == serial
