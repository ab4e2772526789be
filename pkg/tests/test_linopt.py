import numpy as np
import pytest

from smtube import linopt
from smtube.linopt import LinearProgram, QuadraticProgram


def test_lp_single_active_constraint():
    # min x s.t. x >= 2, x <= 5
    rep = linopt.solve_lp(LinearProgram(
        cost=[1.0], ineq_lhs=[[-1.0], [1.0]], ineq_rhs=[-2.0, 5.0]))
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(2.0, abs=1e-9)
    assert rep.argmin[0] == pytest.approx(2.0, abs=1e-9)


def test_lp_facet_optimum_matches_vertex_enumeration():
    # min -x - y s.t. x + y <= 1, x >= 0, y >= 0
    lp = LinearProgram(cost=[-1.0, -1.0], ineq_lhs=[[1.0, 1.0]], ineq_rhs=[1.0],
                       lb=[0.0, 0.0], ub=[np.inf, np.inf])
    rep = linopt.solve_lp(lp)
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    oracle = min(vertices @ lp.cost)
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(oracle, abs=1e-9)
    assert rep.argmin.sum() == pytest.approx(1.0, abs=1e-9)


def test_lp_infeasible_reported():
    rep = linopt.solve_lp(LinearProgram(
        cost=[0.0], ineq_lhs=[[1.0], [-1.0]], ineq_rhs=[-1.0, 0.0]))
    assert rep.status == "infeasible"
    assert rep.argmin is None


def test_lp_unbounded_reported():
    rep = linopt.solve_lp(LinearProgram(
        cost=[-1.0], ineq_lhs=[[-1.0]], ineq_rhs=[0.0]))
    assert rep.status == "unbounded"


def test_lp_determinism():
    rng = np.random.default_rng(5)
    g = rng.normal(size=(40, 6))
    h = np.abs(rng.normal(size=40)) + 1.0
    lp = LinearProgram(cost=rng.normal(size=6), ineq_lhs=g, ineq_rhs=h)
    r1 = linopt.solve_lp(lp)
    r2 = linopt.solve_lp(lp)
    assert r1.objective == r2.objective
    assert np.array_equal(r1.argmin, r2.argmin)


def test_lp_weak_duality_certificate():
    rng = np.random.default_rng(7)
    for trial in range(5):
        g = rng.normal(size=(30, 5))
        h = np.abs(rng.normal(size=30)) + 0.5
        c = rng.normal(size=5)
        rep = linopt.solve_lp(LinearProgram(cost=c, ineq_lhs=g, ineq_rhs=h))
        assert rep.status == "optimal"
        y = rep.dual_ineq
        assert np.all(y >= -1e-9)
        # stationarity c + g' y = 0 certifies the dual bound -h'y
        assert np.abs(c + g.T @ y).max() < 1e-7
        assert -h @ y <= rep.objective + 1e-6


def test_qp_box_examples():
    rep = linopt.solve_qp(QuadraticProgram(
        hessian=[[2.0]], linear=[0.0], ineq_lhs=[[-1.0]], ineq_rhs=[-1.0]))
    assert rep.status == "optimal"
    assert rep.argmin[0] == pytest.approx(1.0, abs=1e-7)
    assert rep.objective == pytest.approx(1.0, abs=1e-7)


def test_qp_unconstrained_stationary_point():
    # min (x-3)^2 + (y+1)^2
    rep = linopt.solve_qp(QuadraticProgram(
        hessian=2.0 * np.eye(2), linear=[-6.0, 2.0],
        ineq_lhs=np.zeros((0, 2)), ineq_rhs=np.zeros(0)))
    assert rep.status == "optimal"
    assert rep.argmin == pytest.approx([3.0, -1.0], abs=1e-7)


def test_qp_projection_onto_halfplane():
    # min x^2 + y^2 s.t. x + y >= 2 -> (1, 1) by symmetry of the projection
    rep = linopt.solve_qp(QuadraticProgram(
        hessian=2.0 * np.eye(2), linear=[0.0, 0.0],
        ineq_lhs=[[-1.0, -1.0]], ineq_rhs=[-2.0]))
    assert rep.argmin == pytest.approx([1.0, 1.0], abs=1e-7)
    assert 0.5 * rep.argmin @ (2.0 * np.eye(2)) @ rep.argmin == pytest.approx(2.0, abs=1e-6)


def test_qp_infeasible_distinct_from_failure():
    rep = linopt.solve_qp(QuadraticProgram(
        hessian=[[2.0]], linear=[0.0],
        ineq_lhs=[[1.0], [-1.0]], ineq_rhs=[0.0, -1.0]))
    assert rep.status == "infeasible"


def test_qp_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError):
        QuadraticProgram(hessian=[[1.0, 0.5], [0.0, 1.0]], linear=[0.0, 0.0],
                         ineq_lhs=np.zeros((0, 2)), ineq_rhs=np.zeros(0))
    with pytest.raises(ValueError):
        QuadraticProgram(hessian=[[-1.0]], linear=[0.0],
                         ineq_lhs=np.zeros((0, 1)), ineq_rhs=np.zeros(0))


def test_dlyap_deadbeat_and_scalar():
    q = np.array([[3.0, 1.0], [1.0, 2.0]])
    assert np.allclose(linopt.solve_dlyap(np.zeros((2, 2)), q), q, atol=1e-12)
    p = linopt.solve_dlyap([[0.5]], [[1.0]])
    assert p[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_dlyap_matches_truncated_series():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5))
    a *= 0.9 / np.abs(np.linalg.eigvals(a)).max()
    m = rng.normal(size=(5, 5))
    q = m @ m.T
    p = linopt.solve_dlyap(a, q)
    # oracle: sum_k (A')^k Q A^k truncated once the powers are negligible
    series = np.zeros((5, 5))
    a_pow = np.eye(5)
    while np.abs(a_pow).max() > 1e-14:
        series += a_pow.T @ q @ a_pow
        a_pow = a_pow @ a
    assert np.allclose(p, series, atol=1e-9 * (1 + np.abs(series).max()))
    # P >= Q for Schur a_cl and PSD rhs
    assert linopt.min_eigenvalue(p - q) >= -1e-8


def test_dlyap_rejects_non_schur():
    with pytest.raises(ValueError):
        linopt.solve_dlyap([[1.01]], [[1.0]])


def test_min_eigenvalue_examples():
    assert linopt.min_eigenvalue(np.eye(3)) == pytest.approx(1.0, abs=1e-12)
    assert linopt.min_eigenvalue(np.diag([2.0, -5.0, 0.1])) == pytest.approx(-5.0, abs=1e-12)
    with pytest.raises(ValueError):
        linopt.min_eigenvalue([[0.0, 1.0], [0.0, 0.0]])


def _charpoly_coeffs(m: np.ndarray) -> np.ndarray:
    """Faddeev-LeVerrier recursion (no eigensolver involved)."""
    n = m.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    mk = np.zeros_like(m)
    for k in range(1, n + 1):
        mk = m @ mk + coeffs[k - 1] * np.eye(n)
        coeffs[k] = -np.trace(m @ mk) / k
    return coeffs


def test_min_eigenvalue_matches_charpoly_roots():
    rng = np.random.default_rng(11)
    m = rng.normal(size=(6, 6))
    s = 0.5 * (m + m.T)
    roots = np.roots(_charpoly_coeffs(s))
    oracle = float(np.min(roots.real))
    val = linopt.min_eigenvalue(s)
    assert val == pytest.approx(oracle, abs=1e-9 * (1 + np.abs(s).max()))


def test_qp_determinism():
    rng = np.random.default_rng(9)
    m = rng.normal(size=(8, 8))
    qp = QuadraticProgram(hessian=m @ m.T + 0.1 * np.eye(8),
                          linear=rng.normal(size=8),
                          ineq_lhs=rng.normal(size=(12, 8)),
                          ineq_rhs=np.abs(rng.normal(size=12)) + 0.2)
    r1 = linopt.solve_qp(qp)
    r2 = linopt.solve_qp(qp)
    assert r1.status == r2.status == "optimal"
    assert r1.objective == r2.objective
    assert np.array_equal(r1.argmin, r2.argmin)


def test_lp_tied_optima_stable_under_perturbation():
    # the whole facet x = -1 is optimal; any vertex is acceptable and the
    # objective must be insensitive to tie-breaking perturbations
    lp = LinearProgram(cost=[1.0, 0.0], ineq_lhs=np.vstack([np.eye(2), -np.eye(2)]),
                       ineq_rhs=[1.0, 1.0, 1.0, 1.0])
    base = linopt.solve_lp(lp)
    for eps in (1e-9, -1e-9):
        pert = LinearProgram(cost=[1.0, eps], ineq_lhs=lp.ineq_lhs,
                             ineq_rhs=lp.ineq_rhs)
        rep = linopt.solve_lp(pert)
        assert rep.argmin[0] == pytest.approx(-1.0, abs=1e-9)
        assert abs(rep.objective - base.objective) <= 2e-9
