"""Set-membership identification of multi-step predictors.

Pipeline per prediction step p: estimate the smallest error bound consistent
with the data (one LP), inflate it, build the feasible parameter set (FPS),
bound the worst-case prediction error of any candidate model over the FPS,
and pick the model minimizing that bound (2*N + 1 LPs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smtube import linopt
from smtube._support import IntervalPolytope, SupportEngine, support_pairs
from smtube.dataio import RegressorDataset, subsample_fraction
from smtube.errors import EmptyFPS, SolverError, UnboundedFPS

DEFAULT_OMEGA_MAGNITUDE = 1e15
DEFAULT_EPS_FLOOR = 1e-9


@dataclass(frozen=True)
class ParameterBox:
    """Componentwise prior bounds on the parameter vector."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.size != hi.size:
            raise ValueError("lower/upper length mismatch")
        if np.any(lo > hi):
            raise ValueError("lower must be <= upper componentwise")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("parameter box must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def default(cls, dim: int, magnitude: float = DEFAULT_OMEGA_MAGNITUDE) -> "ParameterBox":
        return cls(np.full(dim, -magnitude), np.full(dim, magnitude))

    @property
    def dim(self) -> int:
        return self.lower.size


@dataclass
class SupportBounds:
    """Per-sample extremes of theta @ phi_i over the FPS (shared by all models)."""

    upper: np.ndarray
    lower: np.ndarray


class FeasibleParameterSet:
    """Polytope of parameters consistent with the data at the inflated bound.

    H-representation: |target_i - theta @ phi_i| <= eps_hat + d_bar for every
    sample, intersected with the prior box.  Construction certifies
    non-emptiness (one LP) and data-boundedness (2*dim support LPs on the data
    rows alone, so the certificate does not lean on the prior box).
    """

    def __init__(self, phi: np.ndarray, targets: np.ndarray, eps_hat: float,
                 d_bar: float, omega: ParameterBox):
        self.phi = np.atleast_2d(np.asarray(phi, dtype=float))
        self.targets = np.asarray(targets, dtype=float).reshape(-1)
        self.eps_hat = float(eps_hat)
        self.d_bar = float(d_bar)
        self.omega = omega
        self.dim = self.phi.shape[1]
        if omega.dim != self.dim:
            raise ValueError("parameter box dimension mismatch")
        c = self.eps_hat + self.d_bar
        self.row_lo = self.targets - c
        self.row_hi = self.targets + c
        self._certify()
        rows = np.vstack([self.phi, np.eye(self.dim)])
        lo = np.concatenate([self.row_lo, omega.lower])
        hi = np.concatenate([self.row_hi, omega.upper])
        self._engine = SupportEngine(IntervalPolytope(rows, lo, hi))
        self._box_hull: tuple[np.ndarray, np.ndarray] | None = None

    def _certify(self) -> None:
        n = self.dim
        feas = linopt.solve_lp(linopt.LinearProgram(
            cost=np.zeros(n),
            ineq_lhs=np.vstack([self.phi, -self.phi]),
            ineq_rhs=np.concatenate([self.row_hi, -self.row_lo]),
            lb=self.omega.lower, ub=self.omega.upper))
        if feas.status == linopt.STATUS_INFEASIBLE:
            raise EmptyFPS(
                "feasible parameter set empty: the inflated error bound lies below "
                "the smallest bound consistent with the data")
        if not feas.ok:
            raise SolverError(f"FPS feasibility check failed: {feas.status}")
        # Boundedness must come from the data rows plus whatever prior-box
        # bounds are genuinely informative; the default huge box is only a
        # formal compactness device and must not mask uninformative data.
        informative = ((np.abs(self.omega.lower) < linopt.HUGE_BOUND)
                       | (np.abs(self.omega.upper) < linopt.HUGE_BOUND))
        eye = np.eye(n)
        rows = np.vstack([self.phi, eye[informative]])
        lo = np.concatenate([self.row_lo, self.omega.lower[informative]])
        hi = np.concatenate([self.row_hi, self.omega.upper[informative]])
        data_eng = SupportEngine(IntervalPolytope(rows, lo, hi))
        for j in range(n):
            for sign in (1.0, -1.0):
                out = data_eng.support(sign * eye[j])
                if out.status != "optimal":
                    raise UnboundedFPS(j, int(sign))

    @property
    def n_samples(self) -> int:
        return self.targets.size

    def support(self, direction: np.ndarray) -> float:
        out = self._engine.support(direction)
        if out.status != "optimal":
            raise SolverError("FPS support unexpectedly unbounded")
        return float(out.value)

    def support_point(self, direction: np.ndarray) -> np.ndarray:
        """A maximizer of direction @ theta over the set (a vertex)."""
        out = self._engine.support(direction)
        if out.status != "optimal":
            raise SolverError("FPS support unexpectedly unbounded")
        return out.argmax.copy()

    def box_hull(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise [min, max] of the FPS (cached)."""
        if self._box_hull is None:
            eye = np.eye(self.dim)
            hi = np.array([self.support(eye[j]) for j in range(self.dim)])
            lo = np.array([-self.support(-eye[j]) for j in range(self.dim)])
            self._box_hull = (lo, hi)
        return self._box_hull

    def contains(self, theta: np.ndarray, tol: float = 1e-7) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        resid = np.abs(self.targets - self.phi @ theta)
        c = self.eps_hat + self.d_bar
        scale = 1.0 + np.abs(self.targets)
        in_rows = bool(np.all(resid - c <= tol * scale))
        in_box = bool(np.all(theta >= self.omega.lower - tol)
                      and np.all(theta <= self.omega.upper + tol))
        return in_rows and in_box

    def to_hrep(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows g @ theta <= h: two per data point plus the box rows."""
        eye = np.eye(self.dim)
        g = np.vstack([self.phi, -self.phi, eye, -eye])
        h = np.concatenate([self.row_hi, -self.row_lo, self.omega.upper, -self.omega.lower])
        return g, h

    def support_bounds(self, ds: RegressorDataset) -> SupportBounds:
        """Extremes of theta @ phi_i over the FPS for every sample of ``ds``."""
        if ds.dim != self.dim:
            raise ValueError("dataset dimension mismatch")
        upper, lower = support_pairs(self._engine.poly, ds.phi, engine=self._engine)
        return SupportBounds(upper=upper, lower=lower)


@dataclass(frozen=True)
class MultiStepModel:
    """Nominal p-steps-ahead model with its inflated guaranteed error bound."""

    p: int
    o: int
    theta: np.ndarray
    tau_hat: float
    epsilon_hat: float
    gamma: float
    alpha: float | None = None
    tau_lower: float | None = None
    n_samples: int | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != 2 * self.o - 1 + self.p:
            raise ValueError("theta length must be 2o-1+p")
        object.__setattr__(self, "theta", theta)
        if not self.epsilon_hat > 0:
            raise ValueError("epsilon_hat must be strictly positive")
        if self.tau_hat < self.epsilon_hat:
            raise ValueError("tau_hat must be >= epsilon_hat")

    @property
    def theta_ar(self) -> np.ndarray:
        """Coefficients of y(k) ... y(k-o+1)."""
        return self.theta[: self.o]

    @property
    def theta_u(self) -> np.ndarray:
        """Coefficients of u(k-1) ... u(k-o+1)."""
        return self.theta[self.o: 2 * self.o - 1]

    @property
    def theta_ubar(self) -> np.ndarray:
        """Coefficients of u(k) ... u(k+p-1)."""
        return self.theta[2 * self.o - 1:]

    def predict(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi, dtype=float) @ self.theta

    def to_dict(self) -> dict:
        return {
            "p": self.p, "o": self.o, "theta": self.theta.tolist(),
            "epsilon_hat": self.epsilon_hat,
            "tau_lower": self.tau_lower, "tau_hat": self.tau_hat,
            "alpha": self.alpha, "gamma": self.gamma,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultiStepModel":
        return cls(p=int(d["p"]), o=int(d["o"]), theta=np.array(d["theta"], dtype=float),
                   tau_hat=float(d["tau_hat"]), epsilon_hat=float(d["epsilon_hat"]),
                   gamma=float(d["gamma"]),
                   alpha=None if d.get("alpha") is None else float(d["alpha"]),
                   tau_lower=None if d.get("tau_lower") is None else float(d["tau_lower"]),
                   n_samples=None if d.get("n_samples") is None else int(d["n_samples"]))


def estimate_lambda(ds: RegressorDataset, omega: ParameterBox,
                    d_bar: float) -> tuple[float, np.ndarray]:
    """Smallest lambda with |target_i - theta @ phi_i| <= lambda + d_bar
    attainable over the prior box, and a witness theta attaining it."""
    if d_bar < 0:
        raise ValueError("d_bar must be >= 0")
    n = ds.dim
    if omega.dim != n:
        raise ValueError("parameter box dimension mismatch")
    m = ds.n_samples
    # variables (theta, lambda)
    lhs = np.zeros((2 * m, n + 1))
    lhs[:m, :n] = ds.phi
    lhs[m:, :n] = -ds.phi
    lhs[:, n] = -1.0
    rhs = np.concatenate([ds.targets + d_bar, -ds.targets + d_bar])
    lb = np.concatenate([omega.lower, [0.0]])
    ub = np.concatenate([omega.upper, [np.inf]])
    rep = linopt.solve_lp(linopt.LinearProgram(
        cost=np.concatenate([np.zeros(n), [1.0]]),
        ineq_lhs=lhs, ineq_rhs=rhs, lb=lb, ub=ub))
    if not rep.ok:
        raise SolverError(f"error-bound LP failed: {rep.status}")
    lam = max(0.0, float(rep.objective))
    theta = rep.argmin[:n]
    return lam, theta


def inflate_epsilon(lam: float, alpha: float, floor: float = DEFAULT_EPS_FLOOR) -> float:
    """alpha * lam, with a strictly positive floor for the noise-free case."""
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not floor > 0:
        raise ValueError("floor must be strictly positive")
    return alpha * lam if lam > 0 else floor


def build_fps(ds: RegressorDataset, eps_hat: float, d_bar: float,
              omega: ParameterBox | None = None) -> FeasibleParameterSet:
    """Tightest parameter set consistent with the data at bound eps_hat + d_bar."""
    if omega is None:
        omega = ParameterBox.default(ds.dim)
    return FeasibleParameterSet(ds.phi, ds.targets, eps_hat, d_bar, omega)


def _spread_against(theta: np.ndarray, phi: np.ndarray,
                    bounds: SupportBounds) -> np.ndarray:
    """max_{theta' in FPS} |(theta' - theta) @ phi_i| from precomputed extremes."""
    pred = phi @ theta
    return np.maximum(bounds.upper - pred, pred - bounds.lower)


def tau_hat_from_bounds(theta: np.ndarray, eps_hat: float, ds: RegressorDataset,
                        gamma: float, bounds: SupportBounds) -> float:
    """Inflated guaranteed bound when the per-sample FPS extremes are known."""
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    spread = float(_spread_against(theta, ds.phi, bounds).max())
    return gamma * (spread + eps_hat)


def tau_hat_for(theta: np.ndarray, fps: FeasibleParameterSet, ds: RegressorDataset,
                gamma: float, bounds: SupportBounds | None = None) -> float:
    """Inflated guaranteed error bound gamma * (max_i max_{theta' in FPS}
    |(theta' - theta) @ phi_i| + eps_hat) for the given model.

    With ``bounds`` precomputed the evaluation is a vectorized maximum.
    Otherwise the exact maximum is found with best-first support solves: the
    componentwise hull of the FPS yields sound per-sample upper bounds, and
    samples are only solved exactly while their bound exceeds the best exact
    value found so far.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != fps.dim:
        raise ValueError("theta dimension mismatch")
    if bounds is not None:
        return tau_hat_from_bounds(theta, fps.eps_hat, ds, gamma, bounds)
    lo, hi = fps.box_hull()
    pred = ds.phi @ theta
    pos = np.where(ds.phi > 0, ds.phi, 0.0)
    neg = ds.phi - pos
    box_max = pos @ hi + neg @ lo       # upper bound on max theta' @ phi_i
    box_min = pos @ lo + neg @ hi       # lower bound on min theta' @ phi_i
    cand_ub = np.concatenate([box_max - pred, pred - box_min])
    order = np.argsort(-cand_ub)
    best = 0.0
    m = ds.n_samples
    for idx in order:
        if cand_ub[idx] <= best:
            break
        i, sign = (idx, 1.0) if idx < m else (idx - m, -1.0)
        val = fps.support(sign * ds.phi[i])
        exact = val - sign * pred[i]
        if exact > best:
            best = exact
    return gamma * (best + fps.eps_hat)


def select_nominal(fps: FeasibleParameterSet, ds: RegressorDataset, gamma: float,
                   bounds: SupportBounds | None = None,
                   alpha: float | None = None) -> MultiStepModel:
    """Model in the FPS minimizing the guaranteed error bound.

    Two support LPs per sample give M_i = max theta @ phi_i and
    m_i = min theta @ phi_i over the FPS; one final LP then solves
    min_{theta in FPS, t} t  s.t.  M_i - theta @ phi_i <= t and
    theta @ phi_i - m_i <= t for every sample.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    if bounds is None:
        bounds = fps.support_bounds(ds)
    n, m = fps.dim, ds.n_samples
    # variables (theta, t)
    lhs = np.zeros((4 * m, n + 1))
    rhs = np.empty(4 * m)
    lhs[:m, :n] = -ds.phi
    lhs[:m, n] = -1.0
    rhs[:m] = -bounds.upper                       # M_i - theta phi_i <= t
    lhs[m:2 * m, :n] = ds.phi
    lhs[m:2 * m, n] = -1.0
    rhs[m:2 * m] = bounds.lower                   # theta phi_i - m_i <= t
    c = fps.eps_hat + fps.d_bar
    lhs[2 * m:3 * m, :n] = ds.phi
    rhs[2 * m:3 * m] = fps.targets + c            # theta in FPS (data rows)
    lhs[3 * m:, :n] = -ds.phi
    rhs[3 * m:] = -fps.targets + c
    rep = linopt.solve_lp(linopt.LinearProgram(
        cost=np.concatenate([np.zeros(n), [1.0]]),
        ineq_lhs=lhs, ineq_rhs=rhs,
        lb=np.concatenate([fps.omega.lower, [0.0]]),
        ub=np.concatenate([fps.omega.upper, [np.inf]])))
    if not rep.ok:
        raise SolverError(f"nominal-model LP failed: {rep.status}")
    theta = rep.argmin[:n]
    t_star = float(rep.objective)
    if not fps.contains(theta):
        raise SolverError("selected nominal model violates the FPS rows")
    tau_lower = t_star + fps.eps_hat
    return MultiStepModel(
        p=ds.p, o=ds.o, theta=theta, tau_hat=gamma * tau_lower,
        epsilon_hat=fps.eps_hat, gamma=gamma, alpha=alpha,
        tau_lower=tau_lower, n_samples=m)


def lambda_convergence(ds: RegressorDataset, omega: ParameterBox, d_bar: float,
                       fractions: np.ndarray) -> np.ndarray:
    """lambda estimate on chronological prefixes, one value per fraction."""
    out = np.empty(len(fractions))
    for i, f in enumerate(fractions):
        lam, _ = estimate_lambda(subsample_fraction(ds, float(f)), omega, d_bar)
        out[i] = lam
    return out


@dataclass
class IdentifiedStep:
    """Everything the downstream synthesis needs for one prediction step."""

    model: MultiStepModel
    fps: FeasibleParameterSet
    bounds: SupportBounds
    lam: float


def identify_step(ds: RegressorDataset, omega: ParameterBox, d_bar: float,
                  alpha: float, gamma: float,
                  eps_floor: float = DEFAULT_EPS_FLOOR) -> IdentifiedStep:
    """Full per-p pipeline: lambda LP, inflation, FPS, support bounds, nominal model."""
    lam, _ = estimate_lambda(ds, omega, d_bar)
    eps_hat = inflate_epsilon(lam, alpha, floor=eps_floor)
    fps = build_fps(ds, eps_hat, d_bar, omega)
    bounds = fps.support_bounds(ds)
    model = select_nominal(fps, ds, gamma, bounds=bounds, alpha=alpha)
    return IdentifiedStep(model=model, fps=fps, bounds=bounds, lam=lam)
