"""Shared fixtures: the reference experiment is identified and synthesized once
per session, since several modules and most acceptance criteria consume it."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pytest

from smtube import rmpc, sim, smid, ssrealize
from smtube.dataio import build_regressors

JOBS = max(1, min(2, os.cpu_count() or 1))

EXPERIMENT = {
    "seed": 12, "n_samples": 1000, "hold": 50, "levels": (-1.0, 0.0, 1.0),
    "o": 4, "p_id": 20, "p_ctrl": 10, "alpha": 1.1, "gamma": 1.05,
    "u_box": (-10.0, 10.0), "z_box": (-10.0, 10.0),
}


@dataclass
class IdentifiedPlant:
    plant: sim.TruePlant
    traj: object
    steps: dict            # p -> smid.IdentifiedStep
    datasets: dict         # p -> RegressorDataset
    models: dict           # p -> MultiStepModel
    ss: ssrealize.PerturbedSSModel
    tau_iterated: np.ndarray
    w_bar: float


@dataclass
class SynthesizedController:
    ident: IdentifiedPlant
    ctrl: rmpc.RobustController
    certificates: dict
    z_feasible_12: float


def identify_experiment(seed: int, p_values=None) -> IdentifiedPlant:
    """Identification pipeline on the reference experiment data for one seed.

    ``p_values`` restricts the steps that get the full support-bound pass;
    every p in [1, p_id] still receives the iterated-predictor bound needed
    for the disturbance-bound program (best-first pruned evaluation).
    """
    cfg = EXPERIMENT
    plant = sim.discretize_plant()
    u = sim.excitation_input(cfg["n_samples"], cfg["hold"], cfg["levels"], seed)
    traj = sim.simulate_openloop(plant, u, seed=seed)
    full = set(p_values) if p_values is not None else set(range(1, cfg["p_id"] + 1))
    full.add(1)
    steps, datasets = {}, {}
    for p in range(1, cfg["p_id"] + 1):
        ds = build_regressors(traj, cfg["o"], p)
        datasets[p] = ds
        omega = smid.ParameterBox.default(ds.dim)
        if p in full:
            steps[p] = smid.identify_step(ds, omega, plant.d_bar,
                                          cfg["alpha"], cfg["gamma"])
        else:
            lam, _ = smid.estimate_lambda(ds, omega, plant.d_bar)
            eps = smid.inflate_epsilon(lam, cfg["alpha"])
            fps = smid.build_fps(ds, eps, plant.d_bar, omega)
            steps[p] = smid.IdentifiedStep(model=None, fps=fps, bounds=None, lam=lam)
    models = {p: steps[p].model for p in full}
    ss0 = ssrealize.realize(models[1], d_bar=plant.d_bar)
    tau_iter = np.empty(cfg["p_id"])
    for p in range(1, cfg["p_id"] + 1):
        pred = ssrealize.iterate_predictor(ss0, p)
        st = steps[p]
        tau_iter[p - 1] = smid.tau_hat_for(pred.theta1, st.fps, datasets[p],
                                           cfg["gamma"], bounds=st.bounds)
    w_bar = ssrealize.estimate_wbar(ss0, tau_iter, plant.d_bar)
    return IdentifiedPlant(plant=plant, traj=traj, steps=steps, datasets=datasets,
                           models=models, ss=ss0.with_w_bar(w_bar),
                           tau_iterated=tau_iter, w_bar=w_bar)


def synthesize_experiment(ident: IdentifiedPlant) -> SynthesizedController:
    cfg = EXPERIMENT
    ss = ident.ss
    k_gain, l_gain = rmpc.design_gains(ss, rmpc.LqrWeights(obs_r=50.0))
    mu = ssrealize.gain_estimate(ident.models[cfg["p_id"]])
    refmaps = rmpc.build_reference_maps(ss, k_gain, mu)
    cm = {p: ident.models[p] for p in range(1, cfg["p_ctrl"] + 1)}
    pm = rmpc.build_prediction_matrices(cm, ss, cfg["p_ctrl"], k_gain, refmaps)
    q, r = rmpc.search_weight_schedule(pm)
    weights = rmpc.synthesize_weights(pm, k_gain, ss, q, r)
    sigma = rmpc.compute_sigma(weights, pm, refmaps)
    weights = rmpc.CostWeights(q=weights.q, r=weights.r, t_n=weights.t_n,
                               p_mat=weights.p_mat, sigma=sigma).normalized()
    tightened = rmpc.build_tightened_sets(ss, k_gain, l_gain,
                                          np.asarray(cfg["u_box"]),
                                          np.asarray(cfg["z_box"]))
    terminal = rmpc.build_terminal(refmaps, tightened)
    cert = rmpc.certify_weights(weights, pm, k_gain, ss)
    cert["sigma"] = weights.sigma
    cert["lambda_max_p_tilde"] = rmpc.lambda_max_p_tilde(weights, pm)
    ctrl = rmpc.RobustController(ss=ss, models=cm, k_gain=k_gain, l_gain=l_gain,
                                 refmaps=refmaps, pm=pm, weights=weights,
                                 tightened=tightened, terminal=terminal)
    return SynthesizedController(ident=ident, ctrl=ctrl, certificates=cert,
                                 z_feasible_12=ctrl.feasible_goal(12.0))


def build_toy_controller(a: float = 0.5, b: float = 0.5, p_bar: int = 1,
                         u_box=(-1.0, 1.0), z_box=(-1.0, 1.0),
                         w_bar: float = 1e-6, d_bar: float = 0.0,
                         q=None, r=None) -> rmpc.RobustController:
    """First-order toy with consistent (iterated) multi-step models."""
    theta1 = np.array([a, b])
    m1 = smid.MultiStepModel(p=1, o=1, theta=theta1, tau_hat=0.02,
                             epsilon_hat=0.01, gamma=2.0)
    ss = ssrealize.realize(m1, d_bar=d_bar).with_w_bar(w_bar)
    models = {1: m1}
    for p in range(2, p_bar + 1):
        models[p] = smid.MultiStepModel(
            p=p, o=1, theta=ssrealize.iterate_predictor(ss, p).theta1,
            tau_hat=0.02, epsilon_hat=0.01, gamma=2.0)
    k_gain, l_gain = rmpc.design_gains(ss)
    mu = ssrealize.gain_estimate(m1)
    refmaps = rmpc.build_reference_maps(ss, k_gain, mu)
    pm = rmpc.build_prediction_matrices(models, ss, p_bar, k_gain, refmaps)
    if q is None:
        q = np.ones(p_bar + 1)
    if r is None:
        r = 1.0 + 0.2 * np.arange(p_bar + 1)
    weights = rmpc.synthesize_weights(pm, k_gain, ss, np.asarray(q), np.asarray(r))
    sigma = rmpc.compute_sigma(weights, pm, refmaps)
    weights = rmpc.CostWeights(q=weights.q, r=weights.r, t_n=weights.t_n,
                               p_mat=weights.p_mat, sigma=sigma).normalized()
    tight = rmpc.build_tightened_sets(ss, k_gain, l_gain,
                                      np.asarray(u_box), np.asarray(z_box))
    terminal = rmpc.build_terminal(refmaps, tight)
    return rmpc.RobustController(ss=ss, models=models, k_gain=k_gain,
                                 l_gain=l_gain, refmaps=refmaps, pm=pm,
                                 weights=weights, tightened=tight,
                                 terminal=terminal)


@pytest.fixture(scope="session")
def experiment_ident() -> IdentifiedPlant:
    return identify_experiment(EXPERIMENT["seed"])


@pytest.fixture(scope="session")
def experiment_controller(experiment_ident) -> SynthesizedController:
    return synthesize_experiment(experiment_ident)
