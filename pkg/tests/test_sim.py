import numpy as np
import pytest
from scipy.linalg import expm

from conftest import build_toy_controller
from smtube import sim
from smtube.sim import discretize_plant, excitation_input, run_closedloop, simulate_openloop


def test_dc_gain_unitary():
    plant = discretize_plant()
    assert plant.dc_gain() == pytest.approx(1.0, abs=1e-9)


def test_poles_continuity_as_ts_shrinks():
    plant = discretize_plant(ts=1e-6)
    poles = np.roots(np.concatenate([[1.0], -plant.theta_ar]))
    assert np.all(np.abs(np.abs(poles) - 1.0) < 1e-4)


def test_step_invariance_against_matrix_exponential():
    """Discrete ARX step response equals the continuous response at samples."""
    plant = discretize_plant(ts=0.1)
    traj = simulate_openloop(plant, np.ones(80), seed=None)
    ac = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-160.0, -32.0, -11.6]])
    bc = np.array([0.0, 0.0, 160.0])
    cc = np.array([1.0, 0.0, 0.0])
    for k in (1, 5, 20, 79):
        # z(k) responds to the step applied from t=0: value at t = k*ts
        x = np.linalg.solve(ac, (expm(ac * 0.1 * k) - np.eye(3)) @ bc)
        assert traj.z[k] == pytest.approx(float(cc @ x), abs=1e-9)


def test_step_response_shape():
    plant = discretize_plant()
    z = plant.step_response(150)
    assert z.max() > 1.05                 # overshoot from the lightly damped pair
    assert abs(z[-1] - 1.0) < 0.05        # settles toward the unit gain


def test_excitation_segments_and_determinism():
    u = excitation_input(1000, 50, (-1, 0, 1), seed=12)
    assert u.size == 1000
    boundaries = np.flatnonzero(np.diff(u) != 0)
    assert np.all((boundaries + 1) % 50 == 0)
    segments = np.unique((np.arange(1000)) // 50).size
    assert segments == 20
    assert set(np.unique(u)) <= {-1.0, 0.0, 1.0}
    assert np.array_equal(u, excitation_input(1000, 50, (-1, 0, 1), seed=12))
    assert not np.array_equal(u, excitation_input(1000, 50, (-1, 0, 1), seed=13))


def test_excitation_level_frequencies_chi_square():
    u = excitation_input(10_000 * 5, 5, (-1, 0, 1), seed=0)
    levels = u[::5]
    counts = np.array([(levels == v).sum() for v in (-1.0, 0.0, 1.0)])
    expected = levels.size / 3.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 9.21                    # 1% critical value, 2 dof


def test_openloop_trivial_and_noise_band():
    plant = discretize_plant()
    quiet = simulate_openloop(plant, np.zeros(100), seed=None)
    assert np.all(quiet.z == 0.0)
    noisy = simulate_openloop(plant, np.zeros(100), seed=5)
    assert np.abs(noisy.y - noisy.z).max() <= plant.d_bar
    rng_check = simulate_openloop(plant, np.zeros(100), seed=5)
    assert np.array_equal(noisy.y, rng_check.y)


def test_openloop_bounded_energy():
    plant = discretize_plant()
    z = plant.step_response(400)
    peak = np.abs(z).max()
    rng = np.random.default_rng(0)
    u = rng.uniform(-2, 2, 500)
    traj = simulate_openloop(plant, u, seed=None)
    assert np.abs(traj.z).max() <= peak * 2.0 * 3.0   # dc-gain * sup|u| * transient


def _toy_plant(a=0.5, b=0.5, v_bar=0.002, d_bar=0.0):
    return sim.TruePlant(theta=np.array([a, b]), n=1, ts=0.1,
                         v_bar=v_bar, d_bar=d_bar)


def test_closedloop_rest_at_goal_zero():
    ctrl = build_toy_controller(w_bar=0.02)
    plant = _toy_plant()
    log = run_closedloop(plant, ctrl, [(0.0, 40)], seed=1)
    assert np.abs(log.u).max() < 0.05
    assert np.abs(log.z).max() < 0.05
    assert set(log.qp_status) == {"optimal"}


def test_closedloop_tracks_goal():
    ctrl = build_toy_controller(w_bar=0.02)
    plant = _toy_plant()
    log = run_closedloop(plant, ctrl, [(0.0, 10), (0.4, 60)], seed=2)
    assert abs(log.z_bar0[-1] - 0.4) < 1e-3
    assert abs(log.z[-1] - 0.4) < 0.05


def test_closedloop_determinism():
    ctrl = build_toy_controller(w_bar=0.02)
    plant = _toy_plant()
    a = run_closedloop(plant, ctrl, [(0.0, 15), (0.3, 15)], seed=7)
    b = run_closedloop(plant, ctrl, [(0.0, 15), (0.3, 15)], seed=7)
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.z, b.z)
    assert np.array_equal(a.cost, b.cost)
    c = run_closedloop(plant, ctrl, [(0.0, 15), (0.3, 15)], seed=8)
    assert not np.array_equal(a.z, c.z)


def test_goal_schedule_expansion():
    goals = sim.expand_goal_schedule([(0.0, 3), (5.0, 2)])
    assert np.array_equal(goals, [0.0, 0.0, 0.0, 5.0, 5.0])
    padded = sim.expand_goal_schedule([(1.0, 2)], total_steps=4)
    assert np.array_equal(padded, [1.0, 1.0, 1.0, 1.0])
