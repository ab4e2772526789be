"""Config-driven orchestration of the pipeline stages.

Stages: simulate-data -> identify -> synthesize -> closedloop, each re-runnable
from the persisted artifacts of the previous one.  ``pipeline`` chains all
four through the same file interfaces, so a pipeline run is byte-identical to
running the stages individually.

Exit codes: 0 success, 2 infeasibility-class errors, 3 numerical failure,
4 I/O or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smtube import rmpc, setcalc, sim, smid, ssrealize
from smtube.dataio import (
    FLOAT_FMT,
    Trajectory,
    build_regressors,
    trajectory_from_csv,
    trajectory_to_csv,
)
from smtube.errors import (
    ConfigError,
    EmptyFPS,
    EmptyTightenedSet,
    QPInfeasible,
    SmtubeError,
    SolverError,
    UnboundedFPS,
    UnstableRealization,
    WeightsInfeasible,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_INFEASIBLE_ERRORS = (UnboundedFPS, EmptyFPS, EmptyTightenedSet, QPInfeasible,
                      WeightsInfeasible, UnstableRealization)


# -- configuration -------------------------------------------------------------


def _require(d: dict, key: str, path: str, types, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}", "missing required field")
    v = d[key]
    if not isinstance(v, types):
        raise ConfigError(f"{path}.{key}", f"expected {types}, got {type(v).__name__}")
    return v


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline configuration (one JSON file)."""

    ts: float
    v_bar: float
    d_bar: float
    n_samples: int
    data_seed: int
    hold_steps: int
    levels: tuple
    o: int
    p_bar_id: int
    alpha: float
    gamma: float
    omega_magnitude: float
    eps_floor: float
    curve_p_values: tuple
    curve_fractions: tuple
    p_bar_ctrl: int
    u_box: tuple
    z_box: tuple
    lqr: rmpc.LqrWeights
    q_weights: tuple | str
    r_weights: tuple | str
    eps_factor: float
    tail_tol: float
    sigma_safety: float
    max_exact_terms: int
    gain_source: str
    goals: tuple            # ((value, steps), ...)
    closedloop_seed: int
    out_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        num = (int, float)
        plant = _require(d, "plant", "config", dict)
        ts = float(_require(plant, "ts", "config.plant", num))
        if ts <= 0:
            raise ConfigError("config.plant.ts", "must be positive")
        v_bar = float(_require(plant, "v_bar", "config.plant", num))
        d_bar = float(_require(plant, "d_bar", "config.plant", num))
        if v_bar < 0 or d_bar < 0:
            raise ConfigError("config.plant", "disturbance bounds must be >= 0")
        n_samples = int(_require(plant, "n_samples", "config.plant", num))
        data_seed = int(_require(plant, "seed", "config.plant", num))
        exc = _require(plant, "excitation", "config.plant", dict)
        hold = int(_require(exc, "hold_steps", "config.plant.excitation", num))
        levels = tuple(float(x) for x in _require(exc, "levels", "config.plant.excitation", list))
        if hold < 1 or not levels:
            raise ConfigError("config.plant.excitation", "need hold_steps >= 1 and levels")

        ident = _require(d, "ident", "config", dict)
        o = int(_require(ident, "o", "config.ident", num))
        if o < 1:
            raise ConfigError("config.ident.o", "must be >= 1")
        p_bar_id = int(_require(ident, "p_bar", "config.ident", num))
        alpha = float(_require(ident, "alpha", "config.ident", num))
        gamma = float(_require(ident, "gamma", "config.ident", num))
        if alpha <= 1 or gamma <= 1:
            raise ConfigError("config.ident", "alpha and gamma must exceed 1")
        omega = float(_require(ident, "omega_magnitude", "config.ident", num,
                               default=smid.DEFAULT_OMEGA_MAGNITUDE))
        eps_floor = float(_require(ident, "eps_floor", "config.ident", num,
                                   default=smid.DEFAULT_EPS_FLOOR))
        curve = ident.get("lambda_curve", {})
        curve_p = tuple(int(p) for p in curve.get("p_values", [])) or tuple(
            p for p in (3, 10, p_bar_id) if p <= p_bar_id)
        curve_f = tuple(float(f) for f in curve.get(
            "fractions", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]))

        ctl = _require(d, "control", "config", dict)
        p_bar_ctrl = int(_require(ctl, "p_bar", "config.control", num))
        if not 1 <= p_bar_ctrl <= p_bar_id:
            raise ConfigError("config.control.p_bar", "must satisfy 1 <= p_bar <= ident.p_bar")
        u_box = tuple(float(x) for x in _require(ctl, "u_box", "config.control", list))
        z_box = tuple(float(x) for x in _require(ctl, "z_box", "config.control", list))
        if len(u_box) != 2 or len(z_box) != 2 or u_box[0] >= u_box[1] or z_box[0] >= z_box[1]:
            raise ConfigError("config.control", "u_box/z_box must be [lo, hi] with lo < hi")
        lqr_d = ctl.get("lqr", {})
        lqr = rmpc.LqrWeights(
            q_state=float(lqr_d.get("q_state", 1.0)),
            r_input=float(lqr_d.get("r_input", 1.0)),
            obs_q=float(lqr_d.get("obs_q", 1.0)),
            obs_r=float(lqr_d.get("obs_r", 50.0)))
        h = p_bar_ctrl + 1
        qw = ctl.get("q_weights", "auto")
        if qw == "auto":
            q_weights = "auto"
            r_weights = "auto"
        else:
            q_weights = tuple(float(x) for x in (qw if isinstance(qw, list) else [qw] * h))
            rw = ctl.get("r_weights", {"base": 0.1, "slope": 0.01})
            if isinstance(rw, list):
                r_weights = tuple(float(x) for x in rw)
            else:
                base = float(rw.get("base", 0.1))
                slope = float(rw.get("slope", 0.01))
                r_weights = tuple(base + slope * p for p in range(h))
            if len(q_weights) != h or len(r_weights) != h:
                raise ConfigError("config.control", f"weight schedules must have length {h}")
        eps_factor = float(ctl.get("eps_factor", 1e-6))
        tail_tol = float(ctl.get("tail_tol", 1e-6))
        sigma_safety = float(ctl.get("sigma_safety", 1.5))
        max_exact = int(ctl.get("max_exact_terms", 60))
        gain_source = str(ctl.get("gain_source", "pbar_model"))
        if gain_source not in ("pbar_model", "realization_dc"):
            raise ConfigError("config.control.gain_source",
                              "must be 'pbar_model' or 'realization_dc'")

        goals_raw = _require(d, "goals", "config", list)
        goals = []
        for i, g in enumerate(goals_raw):
            goals.append((float(_require(g, "value", f"config.goals[{i}]", num)),
                          int(_require(g, "steps", f"config.goals[{i}]", num))))
        cl_seed = int(d.get("closedloop_seed", 2024))
        out_dir = str(d.get("out_dir", "out"))
        return cls(ts=ts, v_bar=v_bar, d_bar=d_bar, n_samples=n_samples,
                   data_seed=data_seed, hold_steps=hold, levels=levels, o=o,
                   p_bar_id=p_bar_id, alpha=alpha, gamma=gamma,
                   omega_magnitude=omega, eps_floor=eps_floor,
                   curve_p_values=curve_p, curve_fractions=curve_f,
                   p_bar_ctrl=p_bar_ctrl, u_box=u_box, z_box=z_box, lqr=lqr,
                   q_weights=q_weights, r_weights=r_weights, eps_factor=eps_factor,
                   tail_tol=tail_tol, sigma_safety=sigma_safety,
                   max_exact_terms=max_exact, gain_source=gain_source,
                   goals=tuple(goals), closedloop_seed=cl_seed, out_dir=out_dir, raw=d)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be an object")
        return cls.from_dict(data)


def experiment_config(out_dir: str = "out") -> dict:
    """The reference experiment configuration (shipped as the default example)."""
    return {
        "plant": {"ts": 0.1, "v_bar": 0.01, "d_bar": 0.1, "n_samples": 1000,
                  "seed": 12, "excitation": {"hold_steps": 50, "levels": [-1, 0, 1]}},
        "ident": {"o": 4, "p_bar": 20, "alpha": 1.1, "gamma": 1.05,
                  "lambda_curve": {"p_values": [3, 10, 20],
                                   "fractions": [0.1, 0.2, 0.3, 0.4, 0.5,
                                                 0.6, 0.7, 0.8, 0.9, 1.0]}},
        "control": {"p_bar": 10, "u_box": [-10, 10], "z_box": [-10, 10],
                    "lqr": {"q_state": 1.0, "r_input": 1.0, "obs_q": 1.0, "obs_r": 50.0},
                    "q_weights": "auto",
                    "eps_factor": 1e-6, "tail_tol": 1e-6, "sigma_safety": 1.5},
        "goals": [{"value": 0, "steps": 200}, {"value": 5, "steps": 200},
                  {"value": 12, "steps": 200}],
        "closedloop_seed": 2024,
        "out_dir": out_dir,
    }


# -- artifact helpers ----------------------------------------------------------


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, (str, int)) else FLOAT_FMT % c for c in row])


# -- stages --------------------------------------------------------------------


def cmd_simulate_data(cfg: PipelineConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    plant = sim.discretize_plant(cfg.ts, cfg.v_bar, cfg.d_bar)
    u = sim.excitation_input(cfg.n_samples, cfg.hold_steps, cfg.levels, cfg.data_seed)
    traj = sim.simulate_openloop(plant, u, seed=cfg.data_seed)
    traj_path = out / "trajectory.csv"
    trajectory_to_csv(traj, traj_path)

    # open-loop unit step at t = 10 for the first figure
    step_at = int(round(10.0 / cfg.ts))
    u_step = np.concatenate([np.zeros(step_at), np.ones(step_at)])
    nom = sim.simulate_openloop(plant, u_step, seed=None)
    noisy = sim.simulate_openloop(plant, u_step, seed=cfg.data_seed + 1)
    _write_csv(out / "fig1_openloop_step.csv", ["k", "t", "z_nominal", "z", "y"],
               ((k, k * cfg.ts, nom.z[k], noisy.z[k], noisy.y[k])
                for k in range(len(nom))))

    _dump_json({
        "seed": cfg.data_seed, "ts": cfg.ts, "v_bar": cfg.v_bar, "d_bar": cfg.d_bar,
        "n_samples": cfg.n_samples, "hold_steps": cfg.hold_steps,
        "levels": list(cfg.levels), "discretization": "zero-order hold",
        "plant": plant.to_dict(), "dc_gain": plant.dc_gain(),
        "trajectory_sha256": _sha256(traj_path),
    }, out / "sim_manifest.json")
    log.info("wrote %s (%d samples)", traj_path, len(traj))


def _identify_one(args) -> dict:
    (p, o, u, y, ts, d_bar, alpha, gamma, omega_mag, eps_floor) = args
    traj = Trajectory(u=u, y=y, ts=ts)
    ds = build_regressors(traj, o, p)
    omega = smid.ParameterBox.default(ds.dim, omega_mag)
    step = smid.identify_step(ds, omega, d_bar, alpha, gamma, eps_floor)
    return {"p": p, "model": step.model.to_dict(), "lambda": step.lam,
            "upper": step.bounds.upper.tolist(), "lower": step.bounds.lower.tolist()}


def cmd_identify(cfg: PipelineConfig, out: Path, jobs: int = 1) -> None:
    traj = trajectory_from_csv(out / "trajectory.csv", ts=cfg.ts)
    tasks = [(p, cfg.o, traj.u, traj.y, cfg.ts, cfg.d_bar, cfg.alpha, cfg.gamma,
              cfg.omega_magnitude, cfg.eps_floor) for p in range(1, cfg.p_bar_id + 1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_identify_one, tasks))
    else:
        results = [_identify_one(t) for t in tasks]
    results.sort(key=lambda r: r["p"])

    _dump_json({
        "o": cfg.o, "p_bar": cfg.p_bar_id, "alpha": cfg.alpha, "gamma": cfg.gamma,
        "d_bar": cfg.d_bar, "omega_magnitude": cfg.omega_magnitude,
        "entries": [{"p": r["p"], "model": r["model"], "lambda": r["lambda"]}
                    for r in results],
    }, out / "models.json")

    _write_csv(out / "support_bounds.csv", ["p", "i", "upper", "lower"],
               ((r["p"], i, up, lo) for r in results
                for i, (up, lo) in enumerate(zip(r["upper"], r["lower"]))))

    # convergence diagnostic of the error-bound estimate vs dataset fraction
    rows = []
    omega_cache: dict[int, smid.ParameterBox] = {}
    for p in cfg.curve_p_values:
        ds = build_regressors(traj, cfg.o, p)
        omega = omega_cache.setdefault(ds.dim, smid.ParameterBox.default(
            ds.dim, cfg.omega_magnitude))
        lams = smid.lambda_convergence(ds, omega, cfg.d_bar,
                                       np.asarray(cfg.curve_fractions))
        rows.extend((p, f, lam) for f, lam in zip(cfg.curve_fractions, lams))
    _write_csv(out / "fig2_lambda_curve.csv", ["p", "fraction", "lambda"], rows)
    log.info("identified %d prediction models", len(results))


def _load_identification(cfg: PipelineConfig, out: Path):
    with open(out / "models.json") as fh:
        models_doc = json.load(fh)
    models = {e["p"]: smid.MultiStepModel.from_dict(e["model"])
              for e in models_doc["entries"]}
    lams = {e["p"]: float(e["lambda"]) for e in models_doc["entries"]}
    upper: dict[int, list] = {}
    lower: dict[int, list] = {}
    with open(out / "support_bounds.csv", newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            p = int(row[0])
            upper.setdefault(p, []).append(float(row[2]))
            lower.setdefault(p, []).append(float(row[3]))
    bounds = {p: smid.SupportBounds(upper=np.array(upper[p]), lower=np.array(lower[p]))
              for p in upper}
    return models_doc, models, lams, bounds


def baseline_propagated_bound(ss: ssrealize.PerturbedSSModel, tau1: float,
                              d_bar: float, p: int) -> float:
    """Bound from propagating the crude one-step uncertainty tau_1 + d_bar
    through the same matrices, adding the noise term at the end."""
    return ssrealize.iterated_error_bound(ss, tau1 + d_bar, 0.0, p) + d_bar


def cmd_synthesize(cfg: PipelineConfig, out: Path) -> None:
    traj = trajectory_from_csv(out / "trajectory.csv", ts=cfg.ts)
    models_doc, models, lams, bounds = _load_identification(cfg, out)
    ss0 = ssrealize.realize(models[1], d_bar=cfg.d_bar)

    tau_iter = np.empty(cfg.p_bar_id)
    for p in range(1, cfg.p_bar_id + 1):
        ds = build_regressors(traj, cfg.o, p)
        pred = ssrealize.iterate_predictor(ss0, p)
        tau_iter[p - 1] = smid.tau_hat_from_bounds(
            pred.theta1, models[p].epsilon_hat, ds, cfg.gamma, bounds[p])
    w_bar = ssrealize.estimate_wbar(ss0, tau_iter, cfg.d_bar)
    ss = ss0.with_w_bar(w_bar)

    if cfg.gain_source == "realization_dc":
        mu_hat = float(ss.c_row @ np.linalg.solve(np.eye(ss.n_states) - ss.a, ss.b1))
    else:
        mu_hat = ssrealize.gain_estimate(models[cfg.p_bar_id])
    k_gain, l_gain = rmpc.design_gains(ss, cfg.lqr)
    refmaps = rmpc.build_reference_maps(ss, k_gain, mu_hat)
    pm = rmpc.build_prediction_matrices(
        {p: models[p] for p in range(1, cfg.p_bar_ctrl + 1)}, ss,
        cfg.p_bar_ctrl, k_gain, refmaps)
    if cfg.q_weights == "auto":
        q_base, r_base = rmpc.search_weight_schedule(pm)
    else:
        q_base, r_base = np.asarray(cfg.q_weights), np.asarray(cfg.r_weights)
    weights = rmpc.synthesize_weights(pm, k_gain, ss, q_base, r_base)
    sigma = rmpc.compute_sigma(weights, pm, refmaps, cfg.sigma_safety)
    weights = rmpc.CostWeights(q=weights.q, r=weights.r, t_n=weights.t_n,
                               p_mat=weights.p_mat, sigma=sigma).normalized()
    tightened = rmpc.build_tightened_sets(ss, k_gain, l_gain,
                                          np.asarray(cfg.u_box), np.asarray(cfg.z_box),
                                          cfg.tail_tol, cfg.max_exact_terms)
    terminal = rmpc.build_terminal(refmaps, tightened, cfg.eps_factor)
    cert = rmpc.certify_weights(weights, pm, k_gain, ss)
    cert["sigma"] = sigma
    cert["lambda_max_p_tilde"] = rmpc.lambda_max_p_tilde(weights, pm)
    cert["rho_controller"] = float(np.abs(np.linalg.eigvals(
        ss.a + np.outer(ss.b1, k_gain))).max())
    cert["rho_observer"] = float(np.abs(np.linalg.eigvals(
        ss.a - np.outer(l_gain, ss.c.reshape(-1)))).max())

    _dump_json({**ss.to_dict(), "mu_hat": mu_hat, "gain_source": cfg.gain_source,
                "dc_gain": float(ss.c_row @ np.linalg.solve(
                    np.eye(ss.n_states) - ss.a, ss.b1))},
               out / "realization.json")
    manifest = {
        "p_bar_ctrl": cfg.p_bar_ctrl,
        "realization": ss.to_dict(),
        "mu_hat": mu_hat,
        "k_gain": k_gain.tolist(), "l_gain": l_gain.tolist(),
        "weights": {"q": weights.q.tolist(), "r": weights.r.tolist(),
                    "t_n": weights.t_n.tolist(), "p_mat": weights.p_mat.tolist(),
                    "sigma": weights.sigma},
        "refmaps": {"n_map": refmaps.n_map.tolist(), "eta_zw": refmaps.eta_zw,
                    "m2": refmaps.m2},
        "tightened": {"u_bar": tightened.u_bar.tolist(),
                      "z_bar": tightened.z_bar.tolist(),
                      "w_box": tightened.w_box.tolist(),
                      "ku_support": tightened.ku_support,
                      "cz_support": tightened.cz_support,
                      "e_hat": tightened.e_hat.to_dict(),
                      "e_bar": tightened.e_bar.to_dict()},
        "terminal": {"polytope": terminal.polytope.to_dict(),
                     "t_star": terminal.t_star,
                     "provenance": [list(t) for t in terminal.provenance]},
        "models": {str(p): models[p].to_dict() for p in range(1, cfg.p_bar_ctrl + 1)},
        "u_box": list(cfg.u_box), "z_box": list(cfg.z_box),
        "eps_factor": cfg.eps_factor,
        "certificates": cert,
    }
    _dump_json(manifest, out / "controller_manifest.json")

    tau1 = models[1].tau_hat
    rows = []
    fig3 = []
    fig4 = []
    for p in range(1, cfg.p_bar_id + 1):
        prop_bound = ssrealize.iterated_error_bound(ss, w_bar, cfg.d_bar, p)
        base = baseline_propagated_bound(ss, tau1, cfg.d_bar, p)
        rows.append((p, lams[p], models[p].epsilon_hat, models[p].tau_hat, tau_iter[p - 1]))
        fig3.append((p, models[p].tau_hat, tau_iter[p - 1], prop_bound))
        fig4.append((p, prop_bound, base))
    _write_csv(out / "bounds.csv",
               ["p", "lambda", "eps_hat", "tau_nominal", "tau_iterated"], rows)
    _write_csv(out / "fig3_bounds.csv",
               ["p", "tau_nominal", "tau_iterated", "propagated_bound"], fig3)
    _write_csv(out / "fig4_comparison.csv",
               ["p", "propagated_bound", "baseline_bound"], fig4)
    log.info("synthesis complete: w_bar=%.6g, sigma=%.6g, terminal rows=%d",
             w_bar, sigma, terminal.polytope.n_rows)


def load_controller(out: Path) -> rmpc.RobustController:
    with open(out / "controller_manifest.json") as fh:
        man = json.load(fh)
    ss = ssrealize.PerturbedSSModel.from_dict(man["realization"])
    models = {int(p): smid.MultiStepModel.from_dict(m)
              for p, m in man["models"].items()}
    k_gain = np.array(man["k_gain"], dtype=float)
    l_gain = np.array(man["l_gain"], dtype=float)
    refmaps = rmpc.build_reference_maps(ss, k_gain, float(man["mu_hat"]))
    pm = rmpc.build_prediction_matrices(models, ss, int(man["p_bar_ctrl"]),
                                        k_gain, refmaps)
    w = man["weights"]
    weights = rmpc.CostWeights(q=np.array(w["q"]), r=np.array(w["r"]),
                               t_n=np.array(w["t_n"]), p_mat=np.array(w["p_mat"]),
                               sigma=float(w["sigma"]))
    t = man["tightened"]
    tightened = rmpc.TightenedSets(
        u_bar=np.array(t["u_bar"]), z_bar=np.array(t["z_bar"]),
        w_box=np.array(t["w_box"]),
        e_hat=setcalc.Zonotope(np.array(t["e_hat"]["center"]),
                               np.array(t["e_hat"]["generators"])),
        e_bar=setcalc.Zonotope(np.array(t["e_bar"]["center"]),
                               np.array(t["e_bar"]["generators"])),
        ku_support=float(t["ku_support"]), cz_support=float(t["cz_support"]))
    tp = man["terminal"]
    terminal = setcalc.MoasResult(
        polytope=setcalc.Polytope(np.array(tp["polytope"]["G"]),
                                  np.array(tp["polytope"]["h"])),
        t_star=int(tp["t_star"]),
        provenance=[tuple(x) for x in tp["provenance"]])
    return rmpc.RobustController(ss=ss, models=models, k_gain=k_gain, l_gain=l_gain,
                                 refmaps=refmaps, pm=pm, weights=weights,
                                 tightened=tightened, terminal=terminal,
                                 eps_factor=float(man["eps_factor"]))


def cmd_closedloop(cfg: PipelineConfig, out: Path) -> None:
    ctrl = load_controller(out)
    plant = sim.discretize_plant(cfg.ts, cfg.v_bar, cfg.d_bar)
    schedule = [(v, s) for v, s in cfg.goals]
    logrun = sim.run_closedloop(plant, ctrl, schedule, seed=cfg.closedloop_seed)
    _write_csv(out / "closedloop.csv",
               ["k", "y", "z", "u", "z_ref_opt", "zbar0_opt", "J", "qp_status", "qp_iters"],
               ((k, logrun.y[k], logrun.z[k], logrun.u[k], logrun.z_ref[k],
                 logrun.z_bar0[k], logrun.cost[k], logrun.qp_status[k],
                 int(logrun.qp_iters[k])) for k in range(len(logrun))))
    _write_csv(out / "fig5_closedloop.csv",
               ["k", "t", "z", "zbar0", "goal", "z_lo", "z_hi",
                "z_tight_lo", "z_tight_hi"],
               ((k, k * cfg.ts, logrun.z[k], logrun.z_bar0[k], logrun.goal[k],
                 cfg.z_box[0], cfg.z_box[1], ctrl.tightened.z_bar[0],
                 ctrl.tightened.z_bar[1]) for k in range(len(logrun))))
    log.info("closed loop complete: %d steps, all invariants held", len(logrun))


def cmd_pipeline(cfg: PipelineConfig, out: Path, jobs: int = 1) -> None:
    cmd_simulate_data(cfg, out)
    cmd_identify(cfg, out, jobs=jobs)
    cmd_synthesize(cfg, out)
    cmd_closedloop(cfg, out)


# -- entry point -----------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smtube",
        description="Set-membership identification and robust tube tracking control")
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="override the data seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers for identify")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=["simulate-data", "identify", "synthesize",
                                            "closedloop", "pipeline"])
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["plant"] = dict(raw["plant"])
            raw["plant"]["seed"] = args.seed
            cfg = PipelineConfig.from_dict(raw)
        out = Path(args.out if args.out is not None else cfg.out_dir)
        if args.command == "simulate-data":
            cmd_simulate_data(cfg, out)
        elif args.command == "identify":
            cmd_identify(cfg, out, jobs=args.jobs)
        elif args.command == "synthesize":
            cmd_synthesize(cfg, out)
        elif args.command == "closedloop":
            cmd_closedloop(cfg, out)
        else:
            cmd_pipeline(cfg, out, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _INFEASIBLE_ERRORS as exc:
        print(f"infeasible: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SmtubeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
