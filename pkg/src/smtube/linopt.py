"""Deterministic dense LP / convex-QP / eigenvalue / discrete-Lyapunov layer.

Every other module funnels its optimization through this interface so that
solver choice, tolerances and status handling live in one place.  LPs are
solved with HiGHS (through scipy), QPs with the Clarabel interior-point
solver.  Both are deterministic given identical input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from smtube.errors import SolverError

# Bounds with magnitude at or above this are handed to the backends as
# infinite: HiGHS loses accuracy when box bounds like +-1e15 enter the
# scaling, while the box is only a formal compactness device.
HUGE_BOUND = 1e13

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NUMERICAL = "numerical-failure"


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    return a


def _as_vector(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    return a


@dataclass(frozen=True)
class LinearProgram:
    """min cost @ x  s.t.  ineq_lhs @ x <= ineq_rhs,  eq_lhs @ x == eq_rhs,
    lb <= x <= ub (componentwise, +-inf allowed)."""

    cost: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray
    eq_lhs: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "cost", _as_vector(self.cost, "cost"))
        object.__setattr__(self, "ineq_lhs", _as_matrix(self.ineq_lhs, "ineq_lhs"))
        object.__setattr__(self, "ineq_rhs", _as_vector(self.ineq_rhs, "ineq_rhs"))
        n = self.cost.size
        m, nc = self.ineq_lhs.shape if self.ineq_lhs.size else (0, n)
        if self.ineq_lhs.size and nc != n:
            raise ValueError("ineq_lhs column count does not match cost length")
        if self.ineq_lhs.size and m != self.ineq_rhs.size:
            raise ValueError("ineq_lhs row count does not match ineq_rhs length")
        if not (np.all(np.isfinite(self.cost)) and np.all(np.isfinite(self.ineq_lhs))
                and np.all(np.isfinite(self.ineq_rhs))):
            raise ValueError("non-finite entries in LP data")
        if (self.eq_lhs is None) != (self.eq_rhs is None):
            raise ValueError("eq_lhs and eq_rhs must be given together")
        if self.eq_lhs is not None:
            object.__setattr__(self, "eq_lhs", _as_matrix(self.eq_lhs, "eq_lhs"))
            object.__setattr__(self, "eq_rhs", _as_vector(self.eq_rhs, "eq_rhs"))
            if self.eq_lhs.shape[1] != n or self.eq_lhs.shape[0] != self.eq_rhs.size:
                raise ValueError("equality block dimensions inconsistent")
            if not (np.all(np.isfinite(self.eq_lhs)) and np.all(np.isfinite(self.eq_rhs))):
                raise ValueError("non-finite entries in LP equality data")
        for name in ("lb", "ub"):
            b = getattr(self, name)
            if b is not None:
                b = _as_vector(b, name)
                if b.size != n:
                    raise ValueError(f"{name} length does not match cost length")
                object.__setattr__(self, name, b)

    @property
    def n_vars(self) -> int:
        return self.cost.size


@dataclass(frozen=True)
class QuadraticProgram:
    """min 0.5 x' hessian x + linear @ x with the same constraint blocks as
    :class:`LinearProgram`.  The hessian must be symmetric and PSD."""

    hessian: np.ndarray
    linear: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray
    eq_lhs: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        h = _as_matrix(self.hessian, "hessian")
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear", _as_vector(self.linear, "linear"))
        n = self.linear.size
        if h.shape != (n, n):
            raise ValueError("hessian shape does not match linear length")
        scale = max(1.0, float(np.abs(h).max()) if h.size else 1.0)
        if float(np.abs(h - h.T).max()) > 1e-10 * scale:
            raise ValueError("hessian not symmetric within 1e-10")
        if n and float(np.linalg.eigvalsh(0.5 * (h + h.T)).min()) < -1e-8 * scale:
            raise ValueError("hessian not positive semidefinite")
        object.__setattr__(self, "ineq_lhs", _as_matrix(self.ineq_lhs, "ineq_lhs"))
        object.__setattr__(self, "ineq_rhs", _as_vector(self.ineq_rhs, "ineq_rhs"))
        if self.ineq_lhs.size and self.ineq_lhs.shape[0] != self.ineq_rhs.size:
            raise ValueError("ineq_lhs row count does not match ineq_rhs length")
        if (self.eq_lhs is None) != (self.eq_rhs is None):
            raise ValueError("eq_lhs and eq_rhs must be given together")
        if self.eq_lhs is not None:
            object.__setattr__(self, "eq_lhs", _as_matrix(self.eq_lhs, "eq_lhs"))
            object.__setattr__(self, "eq_rhs", _as_vector(self.eq_rhs, "eq_rhs"))
        for name in ("lb", "ub"):
            b = getattr(self, name)
            if b is not None:
                object.__setattr__(self, name, _as_vector(b, name))

    @property
    def n_vars(self) -> int:
        return self.linear.size


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one LP/QP solve. ``argmin`` is present iff status is optimal."""

    status: str
    argmin: np.ndarray | None
    objective: float | None
    iterations: int
    dual_ineq: np.ndarray | None = field(default=None, repr=False)
    dual_eq: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.status == STATUS_OPTIMAL) != (self.argmin is not None):
            raise ValueError("argmin must be present exactly when status is optimal")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL


def _backend_bounds(lp) -> list[tuple[float | None, float | None]]:
    n = lp.n_vars
    lb = lp.lb if lp.lb is not None else np.full(n, -np.inf)
    ub = lp.ub if lp.ub is not None else np.full(n, np.inf)
    out = []
    for lo, hi in zip(lb, ub):
        lo = None if (not np.isfinite(lo) or lo <= -HUGE_BOUND) else float(lo)
        hi = None if (not np.isfinite(hi) or hi >= HUGE_BOUND) else float(hi)
        out.append((lo, hi))
    return out


def _run_highs(lp: LinearProgram, cost) -> object:
    return linprog(
        cost,
        A_ub=lp.ineq_lhs if lp.ineq_lhs.size else None,
        b_ub=lp.ineq_rhs if lp.ineq_lhs.size else None,
        A_eq=lp.eq_lhs,
        b_eq=lp.eq_rhs,
        bounds=_backend_bounds(lp),
        method="highs",
    )


def solve_lp(lp: LinearProgram) -> SolveReport:
    """Solve a dense LP with HiGHS.

    Infeasible and unbounded problems are reported as such, never clamped.
    HiGHS presolve cannot always tell primal infeasibility from dual
    infeasibility, so a reported infeasibility is confirmed with a zero-cost
    feasibility solve before it is passed on.
    """
    res = _run_highs(lp, lp.cost)
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        dual_ineq = dual_eq = None
        if lp.ineq_lhs.size and res.ineqlin is not None:
            dual_ineq = -np.asarray(res.ineqlin.marginals, dtype=float)
        if lp.eq_lhs is not None and res.eqlin is not None:
            dual_eq = -np.asarray(res.eqlin.marginals, dtype=float)
        return SolveReport(STATUS_OPTIMAL, np.asarray(res.x, dtype=float),
                           float(res.fun), iters, dual_ineq, dual_eq)
    if res.status == 3:
        return SolveReport(STATUS_UNBOUNDED, None, None, iters)
    if res.status in (2, 4):
        feas = _run_highs(lp, np.zeros(lp.n_vars))
        if feas.status == 0:
            # constraints admit a point, so the objective must be unbounded
            return SolveReport(STATUS_UNBOUNDED, None, None, iters)
        if feas.status == 2:
            return SolveReport(STATUS_INFEASIBLE, None, None, iters)
    return SolveReport(STATUS_NUMERICAL, None, None, iters)


def _qp_kkt_residual(qp: QuadraticProgram, x, z, g_all, h_all, y=None) -> float:
    """Normalized max of stationarity / primal / complementarity residuals."""
    grad = qp.hessian @ x + qp.linear
    if g_all.size:
        grad = grad + g_all.T @ z
    if qp.eq_lhs is not None and y is not None:
        grad = grad + qp.eq_lhs.T @ y
    scale = 1.0 + float(np.abs(qp.linear).max(initial=0.0)) + float(
        np.abs(qp.hessian).max(initial=0.0)) * (1.0 + float(np.abs(x).max(initial=0.0)))
    r_stat = float(np.abs(grad).max(initial=0.0)) / scale
    r_prim = 0.0
    r_comp = 0.0
    if g_all.size:
        slack = h_all - g_all @ x
        r_prim = max(0.0, float((-slack).max(initial=0.0))) / (1.0 + float(np.abs(h_all).max(initial=0.0)))
        r_comp = float(np.abs(z * slack).max(initial=0.0)) / scale
    if qp.eq_lhs is not None:
        r_eq = float(np.abs(qp.eq_lhs @ x - qp.eq_rhs).max(initial=0.0))
        r_prim = max(r_prim, r_eq / (1.0 + float(np.abs(qp.eq_rhs).max(initial=0.0))))
    return max(r_stat, r_prim, r_comp)


def solve_qp(qp: QuadraticProgram, kkt_tol: float = 1e-6) -> SolveReport:
    """Solve a convex QP with Clarabel and certify the KKT residual.

    A solution whose KKT residual exceeds ``kkt_tol`` is demoted to
    numerical-failure rather than silently returned.
    """
    import clarabel

    n = qp.n_vars
    rows = [qp.ineq_lhs] if qp.ineq_lhs.size else []
    rhs = [qp.ineq_rhs] if qp.ineq_lhs.size else []
    eye = np.eye(n)
    if qp.ub is not None:
        keep = np.isfinite(qp.ub) & (qp.ub < HUGE_BOUND)
        if keep.any():
            rows.append(eye[keep])
            rhs.append(qp.ub[keep])
    if qp.lb is not None:
        keep = np.isfinite(qp.lb) & (qp.lb > -HUGE_BOUND)
        if keep.any():
            rows.append(-eye[keep])
            rhs.append(-qp.lb[keep])
    g_all = np.vstack(rows) if rows else np.zeros((0, n))
    h_all = np.concatenate(rhs) if rhs else np.zeros(0)

    m_eq = 0 if qp.eq_lhs is None else qp.eq_lhs.shape[0]
    blocks = []
    if m_eq:
        blocks.append(qp.eq_lhs)
    if g_all.size:
        blocks.append(g_all)
    a_mat = sp.csc_matrix(np.vstack(blocks)) if blocks else sp.csc_matrix((0, n))
    b_vec = np.concatenate(
        ([qp.eq_rhs] if m_eq else []) + ([h_all] if g_all.size else [])
    ) if blocks else np.zeros(0)

    cones = []
    if m_eq:
        cones.append(clarabel.ZeroConeT(m_eq))
    if g_all.size:
        cones.append(clarabel.NonnegativeConeT(g_all.shape[0]))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = 1e-9
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(
        sp.triu(sp.csc_matrix(qp.hessian), format="csc"), qp.linear,
        a_mat, b_vec, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    iters = int(sol.iterations)
    if status in ("Solved", "AlmostSolved", "SolverStatus.Solved", "SolverStatus.AlmostSolved"):
        x = np.asarray(sol.x, dtype=float)
        dual = np.asarray(sol.z, dtype=float)
        y = dual[:m_eq] if m_eq else None
        z = dual[m_eq:] if g_all.size else np.zeros(0)
        if _qp_kkt_residual(qp, x, z, g_all, h_all, y) > kkt_tol:
            return SolveReport(STATUS_NUMERICAL, None, None, iters)
        obj = float(0.5 * x @ qp.hessian @ x + qp.linear @ x)
        return SolveReport(STATUS_OPTIMAL, x, obj, iters,
                           dual_ineq=z if g_all.size else None, dual_eq=y)
    if "PrimalInfeasible" in status:
        return SolveReport(STATUS_INFEASIBLE, None, None, iters)
    if "DualInfeasible" in status:
        return SolveReport(STATUS_UNBOUNDED, None, None, iters)
    return SolveReport(STATUS_NUMERICAL, None, None, iters)


def spectral_radius(a: np.ndarray) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(a)).max())


def solve_dlyap(a_cl: np.ndarray, q_rhs: np.ndarray) -> np.ndarray:
    """Solve a_cl' P a_cl - P = -q_rhs for the unique PSD P (a_cl Schur).

    Dense Kronecker solve; problem sizes here are tiny (state order ~10).
    """
    a = _as_matrix(a_cl, "a_cl")
    q = _as_matrix(q_rhs, "q_rhs")
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise ValueError("a_cl and q_rhs must be square of equal size")
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise ValueError(f"a_cl must be Schur stable (spectral radius {rho:.6g})")
    qs = 0.5 * (q + q.T)
    if float(np.abs(q - q.T).max(initial=0.0)) > 1e-8 * max(1.0, float(np.abs(q).max(initial=1.0))):
        raise ValueError("q_rhs not symmetric")
    lhs = np.eye(n * n) - np.kron(a.T, a.T)
    p = np.linalg.solve(lhs, qs.reshape(-1)).reshape(n, n)
    p = 0.5 * (p + p.T)
    resid = float(np.abs(a.T @ p @ a - p + qs).max())
    if resid > 1e-9 * (1.0 + float(np.abs(p).max())):
        raise SolverError(f"Lyapunov residual {resid:.3e} too large")
    return p


def min_eigenvalue(s: np.ndarray, asym_tol: float = 1e-8) -> float:
    """Smallest eigenvalue of a symmetric matrix (rejects asymmetric input)."""
    m = _as_matrix(s, "s")
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if float(np.abs(m - m.T).max(initial=0.0)) > asym_tol * scale:
        raise ValueError("matrix asymmetry exceeds tolerance")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
