"""Ground-truth plant, excitation and disturbance generation, open-loop data
collection, and the closed-loop experiment runner.

The reference plant is the zero-order-hold discretization of
160 / ((s+10)(s^2+1.6s+16)) at 0.1 s: third order, dominant complex poles,
unit static gain.  Disturbances are uniform on their bound intervals so the
bounds are actually explored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from smtube.dataio import Trajectory
from smtube.rmpc import RobustController
from smtube.smid import MultiStepModel
from smtube.ssrealize import PerturbedSSModel, realize

DEFAULT_TS = 0.1
DEFAULT_V_BAR = 0.01
DEFAULT_D_BAR = 0.1

# continuous-time companion realization of 160 / (s^3 + 11.6 s^2 + 32 s + 160)
_AC = np.array([[0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [-160.0, -32.0, -11.6]])
_BC = np.array([0.0, 0.0, 160.0])
_CC = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class TruePlant:
    """ARX ground truth z(k+1) = theta @ [z-window, u-past, u(k)] + v(k)."""

    theta: np.ndarray           # layout [theta_ar (n), theta_u (n-1), theta_ubar (1)]
    n: int
    ts: float
    v_bar: float
    d_bar: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != 2 * self.n:
            raise ValueError("theta length must be 2n for the 1-step layout")
        object.__setattr__(self, "theta", theta)

    @property
    def theta_ar(self) -> np.ndarray:
        return self.theta[: self.n]

    @property
    def theta_u(self) -> np.ndarray:
        return self.theta[self.n: 2 * self.n - 1]

    @property
    def theta_ubar(self) -> np.ndarray:
        return self.theta[2 * self.n - 1:]

    def dc_gain(self) -> float:
        return float((self.theta_u.sum() + self.theta_ubar.sum())
                     / (1.0 - self.theta_ar.sum()))

    def true_realization(self) -> PerturbedSSModel:
        """Noise-free state-space form of the true dynamics (test oracle)."""
        model = MultiStepModel(p=1, o=self.n, theta=self.theta, tau_hat=1.0,
                               epsilon_hat=1.0, gamma=2.0)
        return realize(model, d_bar=self.d_bar)

    def step_response(self, n_steps: int) -> np.ndarray:
        u = np.ones(n_steps)
        traj = simulate_openloop(self, u, seed=None)
        return traj.z

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "n": self.n, "ts": self.ts,
                "v_bar": self.v_bar, "d_bar": self.d_bar}


def discretize_plant(ts: float = DEFAULT_TS, v_bar: float = DEFAULT_V_BAR,
                     d_bar: float = DEFAULT_D_BAR) -> TruePlant:
    """Zero-order-hold discretization of the reference transfer function.

    The input is held over each sample period, so the discrete map is
    (e^{Ac ts}, Ac^-1 (e^{Ac ts} - I) Bc); converting to ARX form via the
    characteristic polynomial and the Markov parameters preserves the unit
    static gain exactly (up to rounding).
    """
    if ts <= 0:
        raise ValueError("sample period must be positive")
    ad = expm(_AC * ts)
    bd = np.linalg.solve(_AC, (ad - np.eye(3)) @ _BC)
    alpha = np.poly(ad)                      # z^3 + a2 z^2 + a1 z + a0
    h1 = float(_CC @ bd)
    h2 = float(_CC @ (ad @ bd))
    h3 = float(_CC @ (ad @ ad @ bd))
    beta = np.array([h1, h2 + alpha[1] * h1, h3 + alpha[1] * h2 + alpha[2] * h1])
    theta = np.concatenate([-alpha[1:], beta[1:], beta[:1]])
    return TruePlant(theta=theta, n=3, ts=ts, v_bar=v_bar, d_bar=d_bar)


def excitation_input(n_samples: int, hold_steps: int, levels, seed: int) -> np.ndarray:
    """Piecewise-constant input, each segment drawn uniformly from ``levels``."""
    if n_samples < 1 or hold_steps < 1:
        raise ValueError("n_samples and hold_steps must be >= 1")
    levels = np.asarray(levels, dtype=float)
    rng = np.random.default_rng(seed)
    n_seg = int(np.ceil(n_samples / hold_steps))
    picks = rng.integers(0, levels.size, size=n_seg)
    return np.repeat(levels[picks], hold_steps)[:n_samples]


def simulate_openloop(plant: TruePlant, u: np.ndarray,
                      seed: int | None) -> Trajectory:
    """Run the true ARX recursion from rest; disturbances uniform on their bounds.

    ``seed=None`` disables both disturbances (noise-free run).
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    n_steps = u.size
    n = plant.n
    if seed is None:
        v = np.zeros(n_steps)
        d = np.zeros(n_steps)
    else:
        rng = np.random.default_rng(seed)
        v = rng.uniform(-plant.v_bar, plant.v_bar, n_steps)
        d = rng.uniform(-plant.d_bar, plant.d_bar, n_steps)
    z = np.zeros(n_steps)
    z_hist = np.zeros(n)                     # [z(k), ..., z(k-n+1)]
    u_hist = np.zeros(n - 1)                 # [u(k-1), ..., u(k-n+1)]
    for k in range(n_steps):
        if k > 0:
            z_next = float(plant.theta_ar @ z_hist + plant.theta_u @ u_hist
                           + plant.theta_ubar[0] * u[k - 1]) + v[k - 1]
            z_hist = np.concatenate([[z_next], z_hist[:-1]])
            if n > 1:
                u_hist = np.concatenate([[u[k - 1]], u_hist[:-1]])
        z[k] = z_hist[0]
    y = z + d
    return Trajectory(u=u, y=y, z=z, ts=plant.ts)


@dataclass
class ClosedLoopLog:
    """Per-step closed-loop traces plus the goal schedule."""

    u: np.ndarray
    z: np.ndarray
    y: np.ndarray
    z_ref: np.ndarray
    z_bar0: np.ndarray
    cost: np.ndarray
    qp_status: list
    qp_iters: np.ndarray
    goal: np.ndarray
    tube_margin_hat: np.ndarray = field(default=None, repr=False)
    tube_margin_bar: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.u.size


def expand_goal_schedule(schedule, total_steps: int | None = None) -> np.ndarray:
    """[(goal, steps), ...] -> per-step goal array."""
    parts = [np.full(int(steps), float(goal)) for goal, steps in schedule]
    goals = np.concatenate(parts)
    if total_steps is not None:
        if goals.size < total_steps:
            goals = np.concatenate([goals, np.full(total_steps - goals.size, goals[-1])])
        goals = goals[:total_steps]
    return goals


def run_closedloop(plant: TruePlant, ctrl: RobustController, goal_schedule,
                   seed: int, check_invariants: bool = True,
                   tube_check_stride: int = 1) -> ClosedLoopLog:
    """Closed-loop run from rest, hard-asserting the controller guarantees.

    Per step: solve the tracking program, apply u = ubar + K (xhat - xbar) to
    the true plant, measure, run the observer with the optimizer's disturbance
    estimate.  With ``check_invariants`` the run asserts constraint
    satisfaction, cost decrease within constant-goal segments, and tube
    containment of both errors built from the true state.
    """
    goals = expand_goal_schedule(goal_schedule)
    n_steps = goals.size
    rng = np.random.default_rng(seed)
    v = rng.uniform(-plant.v_bar, plant.v_bar, n_steps)
    d = rng.uniform(-plant.d_bar, plant.d_bar, n_steps)

    o = ctrl.ss.o
    n_plant = plant.n
    z_hist = np.zeros(max(o, n_plant))
    u_hist = np.zeros(max(o, n_plant))       # [u(k-1), u(k-2), ...]
    state = ctrl.initial_state(z_goal=goals[0])

    log_u = np.zeros(n_steps)
    log_z = np.zeros(n_steps)
    log_y = np.zeros(n_steps)
    log_zref = np.zeros(n_steps)
    log_zbar0 = np.zeros(n_steps)
    log_cost = np.zeros(n_steps)
    log_status: list[str] = []
    log_iters = np.zeros(n_steps, dtype=int)
    margin_hat = np.full(n_steps, np.nan)
    margin_bar = np.full(n_steps, np.nan)

    u_box = ctrl.tightened.u_bar[0] - ctrl.tightened.ku_support, \
        ctrl.tightened.u_bar[1] + ctrl.tightened.ku_support
    z_box = ctrl.tightened.z_bar[0] - ctrl.tightened.cz_support, \
        ctrl.tightened.z_bar[1] + ctrl.tightened.cz_support

    prev_cost = None
    prev_decrease = 0.0
    inv_mu = 1.0 / ctrl.refmaps.mu_hat
    q0 = ctrl.weights.q[0]
    r0 = ctrl.weights.r[0]
    for k in range(n_steps):
        state = state.with_goal(goals[k])
        new_segment = k > 0 and goals[k] != goals[k - 1]
        u_k, state = ctrl.mpc_step(state)
        diag = state.diagnostics
        z_k = z_hist[0]
        y_k = z_k + d[k]

        if check_invariants:
            assert u_box[0] - 1e-9 <= u_k <= u_box[1] + 1e-9, \
                f"input constraint violated at k={k}: u={u_k}"
            assert z_box[0] - 1e-9 <= z_k <= z_box[1] + 1e-9, \
                f"output constraint violated at k={k}: z={z_k}"
            if prev_cost is not None and not new_segment:
                # the optimal cost must fall by at least the previous tracking
                # stage cost (certified decrease), up to solver slack
                assert diag.cost - prev_cost <= -prev_decrease + 1e-6, \
                    f"cost decrease violated at k={k}: {prev_cost} -> {diag.cost}"
            if k % tube_check_stride == 0:
                x_true = np.concatenate([z_hist[:o], u_hist[: o - 1]])
                xbar, _, _ = state.solution
                m_bar = ctrl.tightened.e_bar.membership_margin(state.x_hat - xbar)
                m_hat = ctrl.tightened.e_hat.membership_margin(x_true - state.x_hat)
                margin_bar[k] = m_bar
                margin_hat[k] = m_hat
                assert m_bar <= 1.0 + 1e-6, f"displacement left its tube at k={k} ({m_bar})"
                assert m_hat <= 1.0 + 1e-6, f"estimation error left its tube at k={k} ({m_hat})"
        prev_cost = diag.cost
        _, ubar_opt, _ = state.solution
        prev_decrease = (q0 * (diag.z_bar0 - diag.z_ref) ** 2
                         + 0.5 * r0 * (ubar_opt[0] - inv_mu * diag.z_ref) ** 2)

        # advance the true plant with the applied input
        z_next = float(plant.theta_ar @ z_hist[:n_plant]
                       + plant.theta_u @ u_hist[: n_plant - 1]
                       + plant.theta_ubar[0] * u_k) + v[k]
        w_hat = ctrl.refmaps.eta_zw * diag.z_ref
        state = ctrl.observer_update(state, u_k, w_hat, y_k)

        log_u[k] = u_k
        log_z[k] = z_k
        log_y[k] = y_k
        log_zref[k] = diag.z_ref
        log_zbar0[k] = diag.z_bar0
        log_cost[k] = diag.cost
        log_status.append(diag.qp_status)
        log_iters[k] = diag.qp_iterations

        z_hist = np.concatenate([[z_next], z_hist[:-1]])
        u_hist = np.concatenate([[u_k], u_hist[:-1]])

    return ClosedLoopLog(u=log_u, z=log_z, y=log_y, z_ref=log_zref,
                         z_bar0=log_zbar0, cost=log_cost, qp_status=log_status,
                         qp_iters=log_iters, goal=goals,
                         tube_margin_hat=margin_hat, tube_margin_bar=margin_bar)
