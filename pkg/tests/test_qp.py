import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lls.qp import (
    InfeasibleStartError,
    MaxIterError,
    QPError,
    QuadraticProgram,
    find_feasible_point,
    kkt_check,
    record_qp,
    solve_qp,
)


def simplex_grid_argmin(fun, n, step):
    """Brute-force minimiser of ``fun`` over the unit simplex lattice with spacing ``step``."""
    m = int(round(1 / step))
    if n == 2:
        a = np.arange(m + 1) / m
        pts = np.column_stack([a, 1 - a])
    else:
        i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
        keep = i + j <= m
        a, b = i[keep] / m, j[keep] / m
        pts = np.column_stack([a, b, 1 - a - b])
    vals = fun(pts)
    return pts[np.argmin(vals)]


def refine_argmin(fun, n):
    """Coarse lattice search, then a fine lattice around the coarse winner."""
    coarse = simplex_grid_argmin(fun, n, 1e-2)
    if n == 2:
        a = np.arange(max(0, coarse[0] - 0.02), min(1, coarse[0] + 0.02) + 1e-12, 1e-4)
        pts = np.column_stack([a, 1 - a])
    else:
        r = np.arange(-0.02, 0.02 + 1e-12, 1e-4)
        da, db = np.meshgrid(r, r, indexing="ij")
        a = coarse[0] + da.ravel()
        b = coarse[1] + db.ravel()
        pts = np.column_stack([a, b, 1 - a - b])
        pts = pts[(pts >= -1e-12).all(axis=1)]
    return pts[np.argmin(fun(pts))]


def test_unconstrained_vertex():
    sol = solve_qp(QuadraticProgram([[2.0]], [-2.0]), [0.0])
    assert sol.x[0] == pytest.approx(1.0)


def test_bound_with_multiplier():
    prob = QuadraticProgram([[2.0]], [0.0], G=[[1.0]], h=[1.0])
    sol = solve_qp(prob, [3.0])
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.ineq_multipliers[0] == pytest.approx(2.0)
    assert sol.active_set == (0,)


def test_simplex_edge_against_grid():
    target = np.array([0.9, -0.3])
    prob = QuadraticProgram.least_squares(np.eye(2), target, A=[[1, 1]], b=[1], G=np.eye(2), h=[0, 0])
    sol = solve_qp(prob, [0.5, 0.5])
    oracle = simplex_grid_argmin(lambda p: ((p - target) ** 2).sum(axis=1), 2, 1e-4)
    assert np.abs(sol.x - oracle).max() <= 1e-3
    assert kkt_check(prob, sol.x, sol.eq_multipliers, sol.ineq_multipliers).ok


def test_kkt_check_rejects():
    prob = QuadraticProgram([[2.0]], [0.0], G=[[1.0]], h=[1.0])
    bad = kkt_check(prob, [0.5], None, [1.0])
    assert not bad.ok and bad.primal_ineq == pytest.approx(0.5)
    tol = 1e-8
    sol = solve_qp(prob, [2.0])
    moved = kkt_check(prob, sol.x + 10 * tol, None, sol.ineq_multipliers, tol)
    assert not moved.ok and moved.stationarity > tol


def test_infeasible_start():
    prob = QuadraticProgram([[2.0]], [0.0], G=[[1.0]], h=[1.0])
    with pytest.raises(InfeasibleStartError):
        solve_qp(prob, [0.0])


def test_empty_feasible_set():
    prob = QuadraticProgram(np.eye(2), [0, 0], A=[[1, 1]], b=[1], G=-np.eye(2), h=[0.1, 0.1])
    with pytest.raises(InfeasibleStartError):
        solve_qp(prob)


def test_max_iter_carries_iterate():
    prob = QuadraticProgram.least_squares(np.eye(3), [2.0, -1.0, -1.0], A=[[1, 1, 1]], b=[1],
                                          G=np.eye(3), h=np.zeros(3))
    with pytest.raises(MaxIterError) as info:
        solve_qp(prob, np.full(3, 1 / 3), max_iter=1)
    assert info.value.x.shape == (3,)
    assert np.isfinite(info.value.residual)


def test_unbounded():
    with pytest.raises(QPError):
        solve_qp(QuadraticProgram([[0.0]], [1.0]), [0.0])


def test_singular_objective_on_simplex():
    # linear objective over the simplex: optimum at the cheapest vertex
    prob = QuadraticProgram(np.zeros((3, 3)), [3.0, 1.0, 2.0], A=[[1, 1, 1]], b=[1],
                            G=np.eye(3), h=np.zeros(3))
    sol = solve_qp(prob, np.full(3, 1 / 3))
    assert np.allclose(sol.x, [0, 1, 0], atol=1e-12)


def test_phase_one_start():
    prob = QuadraticProgram(np.eye(2), [0, 0], A=[[1, 1]], b=[1], G=np.eye(2), h=[0.2, 0.3])
    x = find_feasible_point(prob)
    assert x.sum() == pytest.approx(1) and x[0] >= 0.2 - 1e-12 and x[1] >= 0.3 - 1e-12
    sol = solve_qp(prob)
    assert np.allclose(sol.x, [0.5, 0.5])


def test_duplicate_constraints_terminate():
    G = np.vstack([np.eye(2)] * 50)
    prob = QuadraticProgram.least_squares(np.eye(2), [1.5, -0.5], A=[[1, 1]], b=[1], G=G, h=np.zeros(100))
    sol = solve_qp(prob, [0.5, 0.5])
    assert np.allclose(sol.x, [1, 0])
    assert sol.kkt_residual <= 1e-8


def test_record_qp_collects_solutions():
    with record_qp() as log:
        solve_qp(QuadraticProgram([[2.0]], [-2.0]), [0.0])
        solve_qp(QuadraticProgram([[2.0]], [-4.0]), [0.0])
    assert [round(s.x[0], 12) for s in log] == [1.0, 2.0]
    solve_qp(QuadraticProgram([[2.0]], [-2.0]), [0.0])
    assert len(log) == 2


def _random_simplex_qp(rng, n):
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    Q = V @ np.diag(rng.uniform(1, 3, n)) @ V.T
    c = rng.normal(size=n) * 2
    return QuadraticProgram(Q, c, A=np.ones((1, n)), b=[1.0], G=np.eye(n), h=np.zeros(n))


@pytest.mark.parametrize("seed", range(20))
def test_grid_oracle_random(seed):
    rng = np.random.default_rng(100 + seed)
    n = 2 + seed % 2
    prob = _random_simplex_qp(rng, n)
    sol = solve_qp(prob, np.full(n, 1 / n))
    fun = lambda P: 0.5 * np.einsum("ij,jk,ik->i", P, prob.Q, P) + P @ prob.c  # noqa: E731
    oracle = refine_argmin(fun, n)
    assert np.abs(sol.x - oracle).max() <= 1e-3
    assert sol.kkt_residual <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 8))
def test_random_problems_certified(seed, n, m):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(n + 2, n))
    r = rng.normal(size=n + 2)
    x_feas = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    h = G @ x_feas - rng.uniform(0, 1, m)
    prob = QuadraticProgram.least_squares(R, r, G=G, h=h)
    sol = solve_qp(prob, x_feas)
    assert sol.kkt_residual <= 1e-8
    assert (G @ sol.x - h >= -1e-9).all()
    hist = np.array(sol.history)
    assert (np.diff(hist) <= 1e-9 * (1 + np.abs(hist[:-1]))).all()
