"""Warm-started dense simplex for support functions of interval polytopes.

Set-membership identification needs the support of one fixed polytope
``{x : lo <= Phi x <= hi}`` in thousands of directions, where consecutive
directions are sliding regressor windows and therefore nearly parallel.  A
primal simplex that keeps the optimal basis between calls resolves each new
direction in a handful of pivots; a general-purpose solver restarts from
scratch and is two orders of magnitude slower at this size.

Every result is verified (primal feasibility at the recomputed vertex plus a
nonnegative dual certificate); any failure falls back to HiGHS for that
direction, so the fast path never weakens correctness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve, qr
from scipy.optimize import linprog

from smtube.errors import SolverError

_DUAL_TOL = 1e-9
_RATIO_TOL = 1e-11
_FEAS_TOL = 1e-7


@dataclass(frozen=True)
class SupportValue:
    status: str  # "optimal" | "unbounded"
    value: float | None
    argmax: np.ndarray | None
    iterations: int


class IntervalPolytope:
    """H-representation with paired rows: lo <= phi @ x <= hi."""

    def __init__(self, phi, lo, hi):
        self.phi = np.atleast_2d(np.asarray(phi, dtype=float))
        self.lo = np.asarray(lo, dtype=float).reshape(-1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1)
        m, n = self.phi.shape
        if self.lo.size != m or self.hi.size != m:
            raise ValueError("lo/hi length must match row count")
        if np.any(self.lo > self.hi):
            raise ValueError("lo must be <= hi rowwise")
        self.m, self.n = m, n
        # row scales for relative feasibility tests
        self._scale = 1.0 + np.maximum(np.abs(self.lo), np.minimum(np.abs(self.hi), 1e300))
        self._scale = np.where(np.isfinite(self._scale), self._scale, 1.0)

    def margin(self, x: np.ndarray) -> float:
        """Most negative relative slack (>= 0 means feasible)."""
        v = self.phi @ x
        up = (self.hi - v) / self._scale
        dn = (v - self.lo) / self._scale
        return float(min(up.min(initial=np.inf), dn.min(initial=np.inf)))


class SupportEngine:
    """Maximizes c @ x over one IntervalPolytope, warm-starting across calls."""

    def __init__(self, poly: IntervalPolytope, max_iter: int | None = None):
        self.poly = poly
        self.max_iter = max_iter if max_iter is not None else 200 * (poly.n + 10)
        self._x = None
        self._bidx = None
        self._bside = None
        self.fallbacks = 0

    # -- cold start ---------------------------------------------------------

    def _cold(self, c: np.ndarray) -> SupportValue:
        p = self.poly
        res = linprog(
            -c,
            A_ub=np.vstack([p.phi, -p.phi]),
            b_ub=np.concatenate([p.hi, -p.lo]),
            bounds=(None, None),
            method="highs-ds",
        )
        if res.status == 3:
            return SupportValue("unbounded", None, None, int(res.nit or 0))
        if res.status != 0:
            raise SolverError(f"support LP failed with backend status {res.status}")
        x = np.asarray(res.x, dtype=float)
        self._adopt_basis(x)
        return SupportValue("optimal", float(c @ x), x, int(res.nit or 0))

    def _adopt_basis(self, x: np.ndarray) -> None:
        p = self.poly
        v = p.phi @ x
        up = np.where((p.hi - v) / p._scale <= _FEAS_TOL)[0]
        dn = np.where((v - p.lo) / p._scale <= _FEAS_TOL)[0]
        cand_idx = np.concatenate([up, dn])
        cand_side = np.concatenate([np.ones(up.size), -np.ones(dn.size)])
        self._x, self._bidx, self._bside = x, None, None
        if cand_idx.size < p.n:
            return
        rows = p.phi[cand_idx] * cand_side[:, None]
        _, r, piv = qr(rows.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(r))
        ref = diag[0] if diag.size else 0.0
        keep = [piv[k] for k in range(min(p.n, diag.size)) if diag[k] > 1e-10 * max(ref, 1.0)]
        if len(keep) < p.n:
            return
        self._bidx = cand_idx[keep].astype(int)
        self._bside = cand_side[keep]

    # -- warm simplex -------------------------------------------------------

    def support(self, c) -> SupportValue:
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.size != self.poly.n:
            raise ValueError("direction dimension mismatch")
        if self._bidx is None:
            self.fallbacks += 1
            return self._cold(c)
        out = self._pivot(c)
        if out is not None:
            return out
        # verification or iteration budget failed: certified restart
        self._bidx = None
        self.fallbacks += 1
        return self._cold(c)

    def _pivot(self, c: np.ndarray) -> SupportValue | None:
        p = self.poly
        x, bidx, bside = self._x, self._bidx.copy(), self._bside.copy()
        dual_tol = _DUAL_TOL * (1.0 + float(np.abs(c).sum()))
        degenerate = 0
        bland = False
        vals = p.phi @ x
        for it in range(1, self.max_iter + 1):
            b_mat = p.phi[bidx] * bside[:, None]
            try:
                lu = lu_factor(b_mat)
                lam = lu_solve(lu, c, trans=1)
            except np.linalg.LinAlgError:
                return None
            if bland:
                neg = np.where(lam < -dual_tol)[0]
                if neg.size == 0:
                    return self._finish(c, bidx, bside, it)
                r = int(neg[np.argmin(bidx[neg])])
            else:
                r = int(np.argmin(lam))
                if lam[r] >= -dual_tol:
                    return self._finish(c, bidx, bside, it)
            e = np.zeros(p.n)
            e[r] = -1.0
            try:
                d = lu_solve(lu, e)
            except np.linalg.LinAlgError:
                return None
            g = p.phi @ d
            act_up = np.zeros(p.m, dtype=bool)
            act_lo = np.zeros(p.m, dtype=bool)
            act_up[bidx[bside > 0]] = True
            act_lo[bidx[bside < 0]] = True
            t = np.full(p.m, np.inf)
            up = (g > _RATIO_TOL) & ~act_up & np.isfinite(p.hi)
            dn = (g < -_RATIO_TOL) & ~act_lo & np.isfinite(p.lo)
            t[up] = (p.hi[up] - vals[up]) / g[up]
            t[dn] = (p.lo[dn] - vals[dn]) / g[dn]
            j = int(np.argmin(t))
            tj = t[j]
            if not np.isfinite(tj):
                return SupportValue("unbounded", None, None, it)
            tj = max(tj, 0.0)
            if tj <= 1e-13:
                degenerate += 1
                if degenerate > 50 and not bland:
                    bland = True  # anti-cycling: Bland's rule from here on
            x = x + tj * d
            vals = vals + tj * g
            bidx[r] = j
            bside[r] = 1.0 if g[j] > 0 else -1.0
        return None

    def _finish(self, c, bidx, bside, iterations) -> SupportValue | None:
        p = self.poly
        # recompute the vertex exactly from the basis to shed accumulated drift
        b_mat = p.phi[bidx] * bside[:, None]
        rhs = np.where(bside > 0, p.hi[bidx], p.lo[bidx])
        try:
            x = np.linalg.solve(b_mat, bside * rhs)
        except np.linalg.LinAlgError:
            return None
        if p.margin(x) < -_FEAS_TOL:
            return None
        self._x, self._bidx, self._bside = x, bidx, bside
        return SupportValue("optimal", float(c @ x), x, iterations)


def support_pairs(poly: IntervalPolytope, directions: np.ndarray,
                  engine: SupportEngine | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(max, min) of d @ x over the polytope for every row d of ``directions``.

    Maxima are computed in row order, then minima, so each pass warm-starts
    from its neighbour.  Raises SolverError on an unbounded direction.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    eng = engine if engine is not None else SupportEngine(poly)
    upper = np.empty(directions.shape[0])
    lower = np.empty(directions.shape[0])
    for i, d in enumerate(directions):
        out = eng.support(d)
        if out.status != "optimal":
            raise SolverError(f"support unbounded in data direction {i}")
        upper[i] = out.value
    for i, d in enumerate(directions):
        out = eng.support(-d)
        if out.status != "optimal":
            raise SolverError(f"support unbounded in data direction -{i}")
        lower[i] = -out.value
    return upper, lower
