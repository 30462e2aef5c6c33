"""Experiment drivers writing trajectories, convergence logs and run summaries."""
from __future__ import annotations

import csv
import json
import os
import time

import numpy as np
import yaml

from .analysis import decompose_pmi_tmi, gamma_scaling_fit, impact_path, inventory_and_costs
from .config import ExperimentConfig
from .foc import SchemeMatrices, check_convergence_conditions, iterate_scheme, solve_linear_direct
from .kernels import AdmissibilityError, TimeGrid
from .lsmc import LSMCExpectation, RegressionConfig
from .paths import PathSet
from .resistance import ResistanceFn
from .signals import alpha_closed_form, build_features, simulate_mu

QUANTITIES = ("alpha", "u", "r", "X", "impact", "cost")
LOG_HEADER = ("iteration", "E1", "E2", "Ebf", "wall_time", "picard_iterations")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_table(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def write_log(path, results):
    """``results`` is a list of ``(label, SolveResult)``; a label column is added when named."""
    labelled = any(label for label, _ in results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow((("setting",) if labelled else ()) + LOG_HEADER)
        for label, res in results:
            for n, vals in enumerate(zip(res.e1_history, res.e2_history, res.ebf_history, res.wall_times,
                                         res.picard_iterations), start=1):
                row = [str(n)] + [_fmt(v) for v in vals[:4]] + [str(vals[4])]
                w.writerow(([label] if labelled else []) + row)


def simulate_alpha(cfg: ExperimentConfig, grid: TimeGrid | None = None) -> PathSet:
    grid = cfg.grid if grid is None else grid
    sig = cfg.signal
    M = 1 if sig.sigma == 0 else cfg.tree["mc"]["M"]
    return alpha_closed_form(sig, simulate_mu(sig, grid, M, cfg.seed))


def solve(cfg: ExperimentConfig, alpha: PathSet | None = None, **overrides):
    """Run the scheme for ``cfg``; returns ``(result, alpha, scheme, matrices)``."""
    alpha = simulate_alpha(cfg) if alpha is None else alpha
    scheme = cfg.scheme(**overrides)
    ce = None
    if scheme.mode == "stochastic":
        feats = build_features(alpha, cfg.signal)
        ce = LSMCExpectation(feats, RegressionConfig(cfg.tree["mc"]["ridge_penalty"]))
    mats = SchemeMatrices.build(scheme, alpha.grid)
    return iterate_scheme(scheme, alpha, ce, mats), alpha, scheme, mats


def trajectory_columns(res, alpha, scheme, mats, samples: int = 5):
    """Header and columns of the per-node trajectory record."""
    imp = impact_path(res.u, res.r, scheme, mats)
    X, cost = inventory_and_costs(res.u, imp, scheme.X0)
    data = {"alpha": alpha.values, "u": res.u.values, "r": res.r.values, "X": X.values,
            "impact": imp.values, "cost": cost.values}
    M = alpha.M
    header, cols = ["t"], [alpha.grid.nodes]
    for q in QUANTITIES:
        v = data[q]
        sd = v.std(axis=0, ddof=1) if M > 1 else np.zeros(v.shape[1])
        header += [f"{q}_mean", f"{q}_ci"]
        cols += [v.mean(axis=0), 1.96 * sd / np.sqrt(M)]
    for q in QUANTITIES:
        for s in range(min(samples, M)):
            header.append(f"{q}_path{s}")
            cols.append(data[q][s])
    return header, cols, data


def _result_summary(res):
    last = lambda h: h[-1] if h else None  # noqa: E731
    return {"converged": res.converged, "outer_iterations": res.outer_iterations,
            "final_E1": last(res.e1_history), "final_E2": last(res.e2_history),
            "final_Ebf": last(res.ebf_history), "message": res.message,
            "max_regression_residual": res.regression_residual}


def _round_trip(cfg, out):
    res, alpha, scheme, mats = solve(cfg)
    header, cols, data = trajectory_columns(res, alpha, scheme, mats, cfg.tree["output"]["samples"])
    write_table(os.path.join(out, "trajectories.csv"), header, cols)
    write_log(os.path.join(out, "convergence.log"), [("", res)])
    s = _result_summary(res)
    s.update(mode=scheme.mode, paths=alpha.M, peak_abs_u=float(np.abs(data["u"].mean(axis=0)).max()),
             terminal_inventory=float(data["X"][:, -1].mean()), peak_abs_inventory=float(np.abs(data["X"]).max()),
             min_running_cost=float(data["cost"].min()),
             terminal_cost_mean=float(data["cost"][:, -1].mean()))
    return res.converged, s, res


def _convergence_report(cfg, out):
    ok, s, res = _round_trip(cfg, out)
    e1 = np.asarray(res.e1_history)
    try:
        rep = check_convergence_conditions(cfg.scheme(), cfg.grid)
        s["conditions"] = {k: (float(v) if not isinstance(v, bool) else v) for k, v in vars(rep).items()}
    except AdmissibilityError as exc:
        s["conditions"] = {"error": str(exc)}
    if e1.size > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = e1[1:] / e1[:-1]
        s["e1_ratios"] = [float(x) for x in ratios]
        tail = e1[3:]
        s["e1_strictly_decreasing_after_3"] = bool(np.all(np.diff(tail) < 0)) if tail.size > 1 else True
        pos = e1[e1 > 0]
        if pos.size > 1:
            s["e1_mean_ratio"] = float(np.exp(np.log(pos[-1] / pos[0]) / (pos.size - 1)))
    return ok, s


def _mi_profile(cfg, out):
    a = cfg.tree["analysis"]
    grid = TimeGrid(a["horizon"], a["profile_N"])
    u = PathSet.from_function(lambda t: a["rate"] * (t < a["duration"] - 1e-12), grid)
    prof = decompose_pmi_tmi(u, cfg.kernel, cfg.resistance, grid)
    base = decompose_pmi_tmi(u, cfg.kernel, ResistanceFn.zero(), grid)
    write_table(os.path.join(out, "trajectories.csv"), ["t", "u", "r", "mi", "tmi", "mi_no_resistance"],
                [grid.nodes, u.values[0], prof.resistance[0], prof.mi[0], prof.tmi, base.mi[0]])
    write_log(os.path.join(out, "convergence.log"), [])
    i = int(np.argmax(prof.mi[0]))
    return True, {"pmi": prof.pmi, "pmi_tail": prof.pmi_tail, "pmi_no_resistance": base.pmi,
                  "peak_mi": float(prof.mi[0, i]), "t_peak": float(grid.nodes[i])}


def _gamma_scaling(cfg, out):
    a = cfg.tree["analysis"]
    grid = TimeGrid(a["duration"], a["scaling_N"])
    u = PathSet.from_function(lambda t: np.full_like(t, 1.0 / a["duration"]), grid)
    gammas = np.logspace(np.log10(a["gamma_min"]), np.log10(a["gamma_max"]), a["gamma_points"])
    fit = gamma_scaling_fit(u, gammas, cfg.kernel, cfg.resistance, grid)
    write_table(os.path.join(out, "trajectories.csv"), ["gamma", "peak_mi", "fitted_mi"],
                [fit.gammas, fit.mi, fit.prefactor * fit.gammas ** fit.exponent])
    write_log(os.path.join(out, "convergence.log"), [])
    s = {"exponent": fit.exponent, "prefactor": fit.prefactor, "fit_residual": fit.residual}
    top = gammas >= a["gamma_max"] / 10 * (1 - 1e-12)
    if top.sum() >= 3:
        ly, lx = np.log(fit.mi[top]), np.log(gammas[top])
        s["top_decade_exponent"] = float(np.polyfit(lx, ly, 1)[0])
    return True, s


def _linear_check(cfg, out):
    a = cfg.tree["analysis"]
    lin = cfg.replace(**{"resistance.variant": "linear", "signal.sigma": 0.0})
    res, alpha, scheme, mats = solve(lin, eps1=a["linear_eps1"], max_outer=a["linear_max_outer"])
    direct = solve_linear_direct(lin.resistance.a, scheme, alpha, mats)
    dev = float(np.linalg.norm(res.u.body - direct.body) / np.linalg.norm(direct.body)) \
        if np.linalg.norm(direct.body) > 0 else float(np.linalg.norm(res.u.body))
    write_table(os.path.join(out, "trajectories.csv"), ["t", "u_iterative", "u_direct", "r_iterative"],
                [alpha.grid.nodes, res.u.values[0], direct.values[0], res.r.values[0]])
    write_log(os.path.join(out, "convergence.log"), [("", res)])
    s = _result_summary(res)
    s["max_relative_deviation"] = dev
    s["a"] = lin.resistance.a
    return res.converged, s


def _sensitivity_sweep(cfg, out):
    a = cfg.tree["analysis"]
    base = cfg.replace(**{"signal.sigma": 0.0})
    runs, logs, ok = {}, [], True
    settings = [("nu", "impact.nu", v) for v in a["sweep_nu"]]
    settings += [("kappa_inf", "impact.kappa_inf", v) for v in a["sweep_kappa_inf"]]
    for name, path, v in settings:
        label = f"{name}_{v:g}"
        res, alpha, scheme, mats = solve(base.replace(**{path: v}))
        header, cols, data = trajectory_columns(res, alpha, scheme, mats, 0)
        write_table(os.path.join(out, f"trajectories_{label}.csv"), header, cols)
        logs.append((label, res))
        s = _result_summary(res)
        s["peak_abs_u"] = float(np.abs(data["u"]).max())
        runs[label] = s
        ok &= res.converged
    write_log(os.path.join(out, "convergence.log"), logs)
    return ok, {"settings": runs}


_DRIVERS = {
    "round_trip": lambda c, o: _round_trip(c, o)[:2],
    "convergence_report": _convergence_report,
    "mi_profile": _mi_profile,
    "gamma_scaling": _gamma_scaling,
    "linear_check": _linear_check,
    "sensitivity_sweep": _sensitivity_sweep,
}


def run_experiment(cfg: ExperimentConfig, out: str | None = None):
    """Run the configured experiment and write its artifacts.

    Returns
    -------
    status : int
        0 on success, 1 if a solver did not converge (artifacts still written).
    summary : dict
    """
    out = cfg.tree["output"]["directory"] if out is None else out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.tree, fh, sort_keys=True)
    t0 = time.perf_counter()
    ok, results = _DRIVERS[cfg.experiment](cfg, out)
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "converged": bool(ok),
               "wall_time": time.perf_counter() - t0, "results": results, "config": cfg.tree}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
    return (0 if ok else 1), summary
