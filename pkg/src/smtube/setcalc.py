"""Set calculus for the controller: zonotopes, outer mRPI approximation,
Minkowski operations, and the maximal output admissible set.

Zonotopes carry the error tubes because they are closed under the two
operations the tube construction needs (linear map, Minkowski sum) and their
support function is a closed form, which doubles as the test oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from smtube import linopt
from smtube.errors import SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Zonotope:
    """{center + generators @ lam : ||lam||_inf <= 1}."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        g = np.asarray(self.generators, dtype=float)
        if g.size == 0:
            g = np.zeros((c.size, 0))
        g = np.atleast_2d(g)
        if g.shape[0] != c.size:
            raise ValueError("generator rows must match center dimension")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @classmethod
    def point(cls, center) -> "Zonotope":
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(center, np.zeros((center.size, 0)))

    @classmethod
    def interval(cls, lo, hi) -> "Zonotope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if np.any(lo > hi):
            raise ValueError("interval requires lo <= hi")
        return cls(0.5 * (lo + hi), np.diag(0.5 * (hi - lo)))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    def support(self, direction) -> float:
        """h(c) = c @ center + sum_j |c @ g_j| (the defining identity)."""
        d = np.asarray(direction, dtype=float).reshape(-1)
        return float(d @ self.center + np.abs(d @ self.generators).sum())

    def radius_bound(self) -> float:
        """Upper bound on max ||x||_2 over the set (triangle inequality)."""
        return float(np.linalg.norm(self.center)
                     + np.linalg.norm(self.generators, axis=0).sum())

    def interval_hull(self) -> "Zonotope":
        rad = np.abs(self.generators).sum(axis=1)
        return Zonotope(self.center, np.diag(rad))

    def membership_margin(self, x, tol: float = 1e-9) -> float:
        """min ||lam||_inf with x = center + G lam; inf when x is off the range.

        x is a member iff the margin is <= 1 (+tol slack at the boundary).
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        m = self.n_generators
        if m == 0:
            return 0.0 if np.allclose(x, self.center, atol=tol) else np.inf
        # variables (lam, t): min t s.t. G lam = x - c, -t <= lam_j <= t
        eye = np.eye(m)
        col = np.ones((m, 1))
        rep = linopt.solve_lp(linopt.LinearProgram(
            cost=np.concatenate([np.zeros(m), [1.0]]),
            ineq_lhs=np.block([[eye, -col], [-eye, -col]]),
            ineq_rhs=np.zeros(2 * m),
            eq_lhs=np.hstack([self.generators, np.zeros((self.dim, 1))]),
            eq_rhs=x - self.center))
        if rep.status == linopt.STATUS_INFEASIBLE:
            return np.inf
        if not rep.ok:
            raise SolverError(f"membership LP failed: {rep.status}")
        return float(rep.objective)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.membership_margin(x, tol) <= 1.0 + tol

    def compact(self, tol: float = 1e-12) -> "Zonotope":
        """Drop zero generators and merge parallel ones (exact)."""
        g = self.generators
        norms = np.linalg.norm(g, axis=0)
        keep = norms > tol
        g = g[:, keep]
        norms = norms[keep]
        if g.shape[1] == 0:
            return Zonotope(self.center, g)
        units = g / norms
        merged: list[np.ndarray] = []
        used = np.zeros(g.shape[1], dtype=bool)
        for j in range(g.shape[1]):
            if used[j]:
                continue
            dots = units[:, j] @ units[:, j:]
            par = np.where(np.abs(np.abs(dots) - 1.0) <= tol)[0] + j
            par = par[~used[par]]
            used[par] = True
            merged.append(units[:, j] * norms[par].sum())
        return Zonotope(self.center, np.column_stack(merged))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "generators": self.generators.tolist()}


@dataclass(frozen=True)
class Polytope:
    """{x : g @ x <= h}."""

    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.g, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if g.shape[0] != h.size:
            raise ValueError("row count mismatch")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise ValueError("polytope rows must be finite")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def n_rows(self) -> int:
        return self.h.size

    @property
    def dim(self) -> int:
        return self.g.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(self.g @ x - self.h <= tol * (1.0 + np.abs(self.h))))

    def is_empty(self) -> bool:
        rep = linopt.solve_lp(linopt.LinearProgram(
            cost=np.zeros(self.dim), ineq_lhs=self.g, ineq_rhs=self.h))
        return rep.status == linopt.STATUS_INFEASIBLE

    def to_dict(self) -> dict:
        return {"G": self.g.tolist(), "h": self.h.tolist()}


@dataclass(frozen=True)
class MoasResult:
    """Finitely determined output admissible set with row provenance."""

    polytope: Polytope
    t_star: int
    provenance: list = field(repr=False, default_factory=list)  # (k, output, sign); k=-1 limit


def zono_affine(z: Zonotope, t: np.ndarray) -> Zonotope:
    """Image T Z = {T x : x in Z}."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    if t.shape[1] != z.dim:
        raise ValueError("map width must match zonotope dimension")
    return Zonotope(t @ z.center, t @ z.generators)


def zono_minkowski(a: Zonotope, b: Zonotope) -> Zonotope:
    """Minkowski sum by generator concatenation."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    return Zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))


def _norm_tail_schedule(a: np.ndarray, cap: int) -> tuple[list[float], int]:
    """Spectral norms ||a^i||_2 until an index q with norm < 1 (cap guarded)."""
    norms = [1.0]
    power = np.eye(a.shape[0])
    for _ in range(cap):
        power = power @ a
        norms.append(float(np.linalg.norm(power, 2)))
        if norms[-1] < 1.0:
            return norms, len(norms) - 1
    raise SolverError(
        f"||a^i|| did not drop below 1 within {cap} powers; spectral radius too close to 1")


def mrpi_outer(a_cl: np.ndarray, w_set: Zonotope, tail_tol: float,
               max_exact_terms: int | None = None, cap: int = 20000) -> Zonotope:
    """Outer approximation of the minimal RPI set of x+ = a_cl x + w, w in w_set.

    Truncated sum of the first s disturbance images plus a rigorous tail box:
    s is the smallest index whose norm-series tail bound
    r_s = (sum_{i>=s} ||a_cl^i||_2) * radius(w_set) drops to tail_tol, and the
    tail box has radius r_s per coordinate.  With ``max_exact_terms`` the far
    summands are grouped into their interval hull (still an outer bound) to
    keep the generator count usable inside the per-step program.
    """
    a = np.atleast_2d(np.asarray(a_cl, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or w_set.dim != n:
        raise ValueError("dimension mismatch")
    rho = linopt.spectral_radius(a)
    if rho >= 1.0:
        raise ValueError(f"a_cl must be Schur stable (spectral radius {rho:.6g})")
    if not tail_tol > 0:
        raise ValueError("tail_tol must be positive")
    rad = w_set.radius_bound()
    if rad == 0.0:
        return Zonotope.point(np.zeros(n))
    norms, q_idx = _norm_tail_schedule(a, cap)
    q = norms[q_idx]
    power = np.linalg.matrix_power(a, len(norms) - 1)

    def extend_norms(upto: int) -> None:
        nonlocal power
        while len(norms) < upto:
            power = power @ a
            norms.append(float(np.linalg.norm(power, 2)))

    # sum_{i>=s} ||a^i|| <= (sum_{j<q_idx} ||a^{s+j}||) / (1 - ||a^{q_idx}||)
    s = 0
    while True:
        extend_norms(s + q_idx)
        r_s = sum(norms[s + j] for j in range(q_idx)) / (1.0 - q) * rad
        if r_s <= tail_tol:
            break
        s += 1
        if s > cap:
            raise SolverError(f"mRPI truncation index exceeded cap {cap}")

    center = np.zeros(n)
    gens: list[np.ndarray] = []
    a_pow = np.eye(n)
    exact = s if max_exact_terms is None else min(s, max_exact_terms)
    group_rad = np.zeros(n)
    group_center = np.zeros(n)
    for i in range(s):
        term_c = a_pow @ w_set.center
        term_g = a_pow @ w_set.generators
        if i < exact:
            center += term_c
            if term_g.size:
                gens.append(term_g)
        else:
            group_center += term_c
            group_rad += np.abs(term_g).sum(axis=1)
        a_pow = a_pow @ a
    center += group_center
    if np.any(group_rad > 0):
        gens.append(np.diag(group_rad))
    gens.append(np.diag(np.full(n, r_s)))
    out = Zonotope(center, np.hstack(gens)).compact()
    log.debug("mRPI outer: s=%d, tail radius %.3e, %d generators",
              s, r_s, out.n_generators)
    return out


def _limit_projector(f: np.ndarray) -> np.ndarray:
    """lim f^k for f either Schur or [[f11, f12], [0, 1]] with f11 Schur."""
    n = f.shape[0]
    if linopt.spectral_radius(f) < 1.0:
        return np.zeros((n, n))
    last = np.zeros(n)
    last[-1] = 1.0
    f11 = f[:-1, :-1]
    f12 = f[:-1, -1]
    if np.allclose(f[-1], last, atol=1e-12) and linopt.spectral_radius(f11) < 1.0:
        out = np.zeros((n, n))
        out[:-1, -1] = np.linalg.solve(np.eye(n - 1) - f11, f12)
        out[-1, -1] = 1.0
        return out
    raise ValueError("state-transition outputs do not converge: "
                     "matrix is neither Schur nor Schur-plus-integrator")


def moas(f: np.ndarray, c_out: np.ndarray, box: np.ndarray, eps,
         row_tol: float = 1e-9, t_cap: int = 1000) -> MoasResult:
    """Finitely determined inner approximation of the maximal output admissible set.

    O_eps = {x : c_out f^k x in box for k = 0..t*} intersected with the limit
    constraint c_out f^inf x in the box shrunk by eps.  t* is the first step
    whose constraints are all redundant (one LP per output row, slack row_tol),
    which also certifies positive invariance under f.
    """
    f = np.atleast_2d(np.asarray(f, dtype=float))
    c_out = np.atleast_2d(np.asarray(c_out, dtype=float))
    box = np.atleast_2d(np.asarray(box, dtype=float))
    n = f.shape[0]
    n_out = c_out.shape[0]
    if box.shape != (n_out, 2):
        raise ValueError("box must be (n_out, 2) rows of [lo, hi]")
    lo, hi = box[:, 0], box[:, 1]
    eps_v = np.full(n_out, float(eps)) if np.isscalar(eps) else np.asarray(eps, dtype=float)
    if np.any(lo + eps_v >= hi - eps_v):
        raise ValueError("eps-shrunk constraint box has empty interior")
    f_inf = _limit_projector(f)

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    prov: list[tuple[int, int, int]] = []

    def add(vec: np.ndarray, bound: float, tag: tuple[int, int, int]) -> None:
        rows.append(vec)
        rhs.append(bound)
        prov.append(tag)

    lim = c_out @ f_inf
    for j in range(n_out):
        if np.abs(lim[j]).max() <= 1e-14:
            # limit output identically zero: feasibility requires 0 in the shrunk box
            if not (lo[j] + eps_v[j] <= 0.0 <= hi[j] - eps_v[j]):
                raise ValueError("limit output violates the shrunk box; set is empty")
            continue
        add(lim[j], hi[j] - eps_v[j], (-1, j, +1))
        add(-lim[j], -(lo[j] + eps_v[j]), (-1, j, -1))

    cf = c_out.copy()
    for j in range(n_out):
        add(cf[j], hi[j], (0, j, +1))
        add(-cf[j], -lo[j], (0, j, -1))

    t = 0
    while True:
        cf = cf @ f
        g = np.vstack(rows)
        h = np.asarray(rhs)
        all_redundant = True
        new_rows = []
        for j in range(n_out):
            for sign, bound in ((+1, hi[j]), (-1, -lo[j])):
                vec = sign * cf[j]
                rep = linopt.solve_lp(linopt.LinearProgram(
                    cost=-vec, ineq_lhs=g, ineq_rhs=h))
                if rep.ok and -rep.objective <= bound + row_tol * (1.0 + abs(bound)):
                    continue
                if rep.status not in (linopt.STATUS_OPTIMAL, linopt.STATUS_UNBOUNDED):
                    raise SolverError(f"redundancy LP failed: {rep.status}")
                all_redundant = False
                new_rows.append((vec, bound, (t + 1, j, sign)))
        if all_redundant:
            break
        for vec, bound, tag in new_rows:
            add(vec, bound, tag)
        t += 1
        if t > t_cap:
            raise SolverError(f"output admissible set not determined within {t_cap} steps")

    g = np.vstack(rows)
    h = np.asarray(rhs)
    keep = _prune_redundant(g, h, row_tol)
    poly = Polytope(g[keep], h[keep])
    result = MoasResult(polytope=poly, t_star=t,
                        provenance=[prov[i] for i in keep])
    log.debug("MOAS: t*=%d, %d rows after pruning (from %d)", t, poly.n_rows, g.shape[0])
    return result


def _prune_redundant(g: np.ndarray, h: np.ndarray, row_tol: float) -> list[int]:
    """Indices of a minimal subset of rows describing the same polytope."""
    m = g.shape[0]
    alive = np.ones(m, dtype=bool)
    for i in range(m):
        alive[i] = False
        others = np.where(alive)[0]
        rep = linopt.solve_lp(linopt.LinearProgram(
            cost=-g[i], ineq_lhs=g[others], ineq_rhs=h[others]))
        redundant = rep.ok and -rep.objective <= h[i] + row_tol * (1.0 + abs(h[i]))
        if not redundant:
            alive[i] = True
    return list(np.where(alive)[0])


@dataclass(frozen=True)
class MembershipRows:
    """Exact encoding of x in Z inside a linear program:
    x - generators @ lam = center with ||lam||_inf <= 1 (no relaxation)."""

    center: np.ndarray
    generators: np.ndarray

    @property
    def n_aux(self) -> int:
        return self.generators.shape[1]


def zono_membership_rows(z: Zonotope) -> MembershipRows:
    """Constraint block certifying membership via the generator representation."""
    return MembershipRows(center=z.center.copy(), generators=z.generators.copy())
