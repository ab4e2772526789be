"""State-space realization of the 1-step model and disturbance-bound estimation.

The nominal 1-step predictor is rewritten as a perturbed state-space model
whose state stacks past outputs and inputs.  Iterating that model gives
p-steps-ahead parameter vectors in the common regressor layout, whose
guaranteed bounds then pin down the smallest process-disturbance amplitude
consistent with all of them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from smtube import linopt
from smtube.errors import SingularGain, SolverError, UnstableRealization
from smtube.smid import MultiStepModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbedSSModel:
    """x(k+1) = A x(k) + B1 u(k) + M1 w(k), z(k) = C x(k), y = z + d.

    The state is [z(k) .. z(k-o+1), u(k-1) .. u(k-o+1)], dimension 2o-1.
    """

    a: np.ndarray
    b1: np.ndarray
    m1: np.ndarray
    c: np.ndarray
    o: int
    d_bar: float
    w_bar: float | None = None

    def __post_init__(self):
        n = 2 * self.o - 1
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if a.shape != (n, n):
            raise ValueError("A must be (2o-1) x (2o-1)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float).reshape(n))
        object.__setattr__(self, "m1", np.asarray(self.m1, dtype=float).reshape(n))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(1, n))
        if abs(float(self.c.reshape(-1) @ self.m1) - 1.0) > 1e-12:
            raise ValueError("C @ M1 must equal 1 in this realization")

    @property
    def n_states(self) -> int:
        return 2 * self.o - 1

    @property
    def c_row(self) -> np.ndarray:
        return self.c.reshape(-1)

    @property
    def e_selector(self) -> np.ndarray:
        """Selector of the o output components of the state (noise enters there)."""
        e = np.zeros((self.n_states, self.o))
        e[: self.o, :] = np.eye(self.o)
        return e

    def spectral_radius(self) -> float:
        return linopt.spectral_radius(self.a)

    def with_w_bar(self, w_bar: float) -> "PerturbedSSModel":
        return PerturbedSSModel(a=self.a, b1=self.b1, m1=self.m1, c=self.c,
                                o=self.o, d_bar=self.d_bar, w_bar=w_bar)

    def state_from_history(self, z_hist: np.ndarray, u_hist: np.ndarray) -> np.ndarray:
        """State at time k from z_hist = [z(k) .. z(k-o+1)], u_hist = [u(k-1) .. u(k-o+1)]."""
        z_hist = np.asarray(z_hist, dtype=float).reshape(-1)
        u_hist = np.asarray(u_hist, dtype=float).reshape(-1)
        if z_hist.size != self.o or u_hist.size != self.o - 1:
            raise ValueError("history lengths must be o and o-1")
        return np.concatenate([z_hist, u_hist])

    def to_dict(self) -> dict:
        return {"o": self.o, "A": self.a.tolist(), "B1": self.b1.tolist(),
                "M1": self.m1.tolist(), "C": self.c.reshape(-1).tolist(),
                "w_bar": self.w_bar, "d_bar": self.d_bar}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbedSSModel":
        return cls(a=np.array(d["A"], dtype=float), b1=np.array(d["B1"], dtype=float),
                   m1=np.array(d["M1"], dtype=float), c=np.array(d["C"], dtype=float),
                   o=int(d["o"]), d_bar=float(d["d_bar"]),
                   w_bar=None if d.get("w_bar") is None else float(d["w_bar"]))


@dataclass(frozen=True)
class IteratedPredictor:
    """p-steps-ahead parameter vector obtained by iterating the 1-step model."""

    p: int
    theta1: np.ndarray
    tau_hat: float | None = None

    def with_tau(self, tau_hat: float) -> "IteratedPredictor":
        return IteratedPredictor(p=self.p, theta1=self.theta1, tau_hat=tau_hat)


def realize(model: MultiStepModel, d_bar: float) -> PerturbedSSModel:
    """Companion-form realization of the nominal 1-step model.

    Raises UnstableRealization when the identified dynamics are not Schur;
    every downstream guarantee needs a stable A, so the model must then be
    re-identified rather than silently projected.
    """
    if model.p != 1:
        raise ValueError("realization requires the 1-step model")
    o = model.o
    n = 2 * o - 1
    a = np.zeros((n, n))
    a[0, :o] = model.theta_ar
    a[0, o:] = model.theta_u
    for i in range(o - 1):           # shift z(k-i) -> z(k-i-1)
        a[i + 1, i] = 1.0
    for j in range(2, o):            # shift u(k-j+1) -> u(k-j)
        a[o + j - 1, o + j - 2] = 1.0
    b1 = np.zeros(n)
    b1[0] = model.theta_ubar[0]
    if o > 1:
        b1[o] = 1.0
    m1 = np.zeros(n)
    m1[0] = 1.0
    c = np.zeros((1, n))
    c[0, 0] = 1.0
    ss = PerturbedSSModel(a=a, b1=b1, m1=m1, c=c, o=o, d_bar=d_bar)
    rho = ss.spectral_radius()
    if rho >= 1.0:
        raise UnstableRealization(
            f"identified 1-step model is not asymptotically stable "
            f"(spectral radius {rho:.6g}); re-identify with more data")
    ctrb = np.hstack([np.linalg.matrix_power(a, i) @ b1.reshape(-1, 1) for i in range(n)])
    obsv = np.vstack([c @ np.linalg.matrix_power(a, i) for i in range(n)])
    log.debug("realization ranks: controllability %d/%d, observability %d/%d",
              np.linalg.matrix_rank(ctrb), n, np.linalg.matrix_rank(obsv), n)
    return ss


def iterate_predictor(ss: PerturbedSSModel, p: int) -> IteratedPredictor:
    """Parameter vector of the disturbance-free p-step rollout from a noisy state.

    The prediction C A^p X_y(k) + sum_i C A^i B1 u(k+p-1-i) is linear in the
    regressor [y(k)..y(k-o+1), u(k-1)..u(k-o+1), u(k)..u(k+p-1)].
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    n = ss.n_states
    theta = np.empty(n + p)
    a_pow = np.linalg.matrix_power(ss.a, p)
    theta[:n] = ss.c_row @ a_pow
    for j in range(p):               # coefficient of u(k+j) is C A^(p-1-j) B1
        theta[n + j] = float(ss.c_row @ np.linalg.matrix_power(ss.a, p - 1 - j) @ ss.b1)
    return IteratedPredictor(p=p, theta1=theta)


def _impulse_weights(ss: PerturbedSSModel, p: int) -> tuple[float, float]:
    """(sum_{i<p} |C A^i M1|, ||C A^p E||_inf) for the p-step error bound."""
    gain = 0.0
    a_pow = np.eye(ss.n_states)
    for _ in range(p):
        gain += abs(float(ss.c_row @ a_pow @ ss.m1))
        a_pow = ss.a @ a_pow
    noise = float(np.abs(ss.c_row @ a_pow @ ss.e_selector).sum())
    return gain, noise


def iterated_error_bound(ss: PerturbedSSModel, w_bar: float, d_bar: float, p: int) -> float:
    """Worst-case p-step prediction error sum_{i<p}|C A^i M1| w_bar + ||C A^p E||_inf d_bar."""
    if p < 1:
        raise ValueError("p must be >= 1")
    gain, noise = _impulse_weights(ss, p)
    return gain * w_bar + noise * d_bar


def estimate_wbar(ss: PerturbedSSModel, tau_iterated: np.ndarray, d_bar: float) -> float:
    """Smallest w_bar whose propagated bounds dominate every multi-step bound.

    Closed form: the constraint at step p is sum_{i<p}|C A^i M1| w +
    ||C A^p E||_inf d_bar >= tau_p, a one-variable inequality with positive
    coefficient (the p=1 coefficient is |C M1| = 1), so the minimizer is the
    max over p of the per-step ratios clamped at zero.
    """
    tau_iterated = np.asarray(tau_iterated, dtype=float).reshape(-1)
    if np.any(~np.isfinite(tau_iterated)) or np.any(tau_iterated <= 0):
        raise ValueError("all tau bounds must be finite and positive")
    w = 0.0
    for p, tau in enumerate(tau_iterated, start=1):
        gain, noise = _impulse_weights(ss, p)
        w = max(w, (tau - noise * d_bar) / gain)
    return max(w, 0.0)


def estimate_wbar_lp(ss: PerturbedSSModel, tau_iterated: np.ndarray, d_bar: float) -> float:
    """LP form of the disturbance-bound program, kept as a cross-check."""
    tau_iterated = np.asarray(tau_iterated, dtype=float).reshape(-1)
    p_bar = tau_iterated.size
    lhs = np.empty((p_bar, 1))
    rhs = np.empty(p_bar)
    for p in range(1, p_bar + 1):
        gain, noise = _impulse_weights(ss, p)
        lhs[p - 1, 0] = -gain
        rhs[p - 1] = -(tau_iterated[p - 1] - noise * d_bar)
    rep = linopt.solve_lp(linopt.LinearProgram(
        cost=np.array([1.0]), ineq_lhs=lhs, ineq_rhs=rhs,
        lb=np.array([0.0]), ub=np.array([np.inf])))
    if not rep.ok:
        raise SolverError(f"disturbance-bound LP failed: {rep.status}")
    return float(rep.argmin[0])


def gain_estimate(model: MultiStepModel) -> float:
    """Static gain of a multi-step model: (sum theta_ubar + sum theta_u) / (1 - sum theta_ar)."""
    den = 1.0 - float(model.theta_ar.sum())
    if abs(den) < 1e-9:
        raise SingularGain(f"static-gain denominator {den:.3e} is numerically zero")
    return (float(model.theta_ubar.sum()) + float(model.theta_u.sum())) / den
