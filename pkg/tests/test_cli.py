import csv
import json
import os

import numpy as np
import pytest
import yaml

from resistrade.cli import cli_entry
from resistrade.config import DEFAULTS, ConfigError, load_config, validate
from resistrade.experiments import run_experiment


def _write(tmp_path, tree, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(tree) if tree is not None else "")
    return str(p)


def _read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


SMALL = {"grid": {"N": 30}, "mc": {"M": 200, "seed": 3}, "scheme": {"max_outer": 300}}


def test_no_arguments_prints_usage(capsys):
    assert cli_entry([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flags(capsys, tmp_path):
    assert cli_entry(["--config", _write(tmp_path, None), "--bogus"]) == 2
    assert cli_entry(["--config", _write(tmp_path, None), "--experiment", "nope"]) == 2
    assert "usage" in capsys.readouterr().err


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, None))
    t = cfg.tree
    assert t["impact"] == {"gamma": 0.2, "lambda": 0.467, "nu": 0.614, "kappa_inf": 1.0}
    assert t["resistance"]["c"] == 2.0 and t["penalties"] == {"phi": 0.0, "varrho": 500.0}
    assert t["signal"] == {"eta": 10.0, "kappa": 1.0, "sigma": 1.0, "mu0": 1.0}
    assert t["grid"]["N"] == 100 and t["mc"]["M"] == 2000 and t["mc"]["ridge_penalty"] == 1e-5
    assert cfg.scheme().mode == "stochastic"


@pytest.mark.parametrize("tree,path", [
    ({"impact": {"nu": 0.3}}, "impact.nu"),
    ({"impact": {"gamma": -1}}, "impact.gamma"),
    ({"impact": {"speed": 1}}, "impact.speed"),
    ({"grid": {"N": 2.5}}, "grid.N"),
    ({"signal": {"kappa": "fast"}}, "signal.kappa"),
    ({"experiment": "fly"}, "experiment"),
    ({"resistance": {"variant": "cubic"}}, "resistance.variant"),
    ({"analysis": {"sweep_nu": [0.6, 1.2]}}, "analysis.sweep_nu[1]"),
])
def test_validation_errors_name_the_key(tmp_path, tree, path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, tree))
    assert str(exc.value).startswith(path)


def test_invalid_config_exit_status(tmp_path, capsys):
    assert cli_entry(["--config", _write(tmp_path, {"impact": {"nu": 0.3}}), "--quiet"]) == 2
    assert "impact.nu" in capsys.readouterr().err


def test_numeric_strings_accepted():
    cfg = validate({"mc": {"ridge_penalty": "1e-5"}, "scheme": {"eps1": "1e-12"}})
    assert cfg.tree["mc"]["ridge_penalty"] == 1e-5 and cfg.tree["scheme"]["eps1"] == 1e-12


def test_defaults_not_mutated():
    validate({"impact": {"gamma": 3.0}})
    assert DEFAULTS["impact"]["gamma"] == 0.2


def test_linear_check(tmp_path, capsys):
    out = tmp_path / "lin"
    status = cli_entry(["--config", _write(tmp_path, None), "--experiment", "linear_check", "--out", str(out)])
    assert status == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["results"]["max_relative_deviation"] <= 1e-8
    for name in ("trajectories.csv", "convergence.log", "summary.json", "config.yaml"):
        assert (out / name).exists()


def test_round_trip_artifacts_and_determinism(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli_entry(["--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert cli_entry(["--config", cfg, "--out", str(b), "--quiet"]) == 0
    ta, tb = (a / "trajectories.csv").read_bytes(), (b / "trajectories.csv").read_bytes()
    assert ta == tb
    header, data = _read(a / "trajectories.csv")
    assert header[:13] == ["t", "alpha_mean", "alpha_ci", "u_mean", "u_ci", "r_mean", "r_ci", "X_mean", "X_ci",
                           "impact_mean", "impact_ci", "cost_mean", "cost_ci"]
    assert "u_path4" in header and "u_path5" not in header
    assert data.shape == (31, len(header))
    u_cols = [header.index(f"u_path{i}") for i in range(5)]
    assert np.all(data[:, header.index("u_ci")] >= 0)
    assert np.all(np.isfinite(data[:, u_cols]))
    log_header, log = _read(a / "convergence.log")
    assert log_header == ["iteration", "E1", "E2", "Ebf", "wall_time", "picard_iterations"]
    summary = json.loads((a / "summary.json").read_text())
    assert summary["converged"] and summary["seed"] == 3
    assert summary["results"]["final_E1"] == pytest.approx(log[-1, 1])
    other = tmp_path / "c"
    assert cli_entry(["--config", cfg, "--seed", "4", "--out", str(other), "--quiet"]) == 0
    assert (other / "trajectories.csv").read_bytes() != ta


def test_summary_round_trips(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    cli_entry(["--config", cfg, "--out", str(a), "--quiet"])
    cli_entry(["--config", str(a / "config.yaml"), "--out", str(b), "--quiet"])
    assert (a / "trajectories.csv").read_bytes() == (b / "trajectories.csv").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert validate(summary["config"]).tree == load_config(str(a / "config.yaml")).tree


def test_ci_half_width_formula(tmp_path):
    cfg = validate({**SMALL, "output": {"directory": str(tmp_path / "o"), "samples": 200}})
    run_experiment(cfg)
    header, data = _read(tmp_path / "o" / "trajectories.csv")
    paths = data[:, [header.index(f"u_path{i}") for i in range(200)]]
    np.testing.assert_allclose(data[:, header.index("u_ci")], 1.96 * paths.std(axis=1, ddof=1) / np.sqrt(200),
                               rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(data[:, header.index("u_mean")], paths.mean(axis=1), rtol=1e-12, atol=1e-13)


def test_nonconvergence_exit_status(tmp_path):
    out = tmp_path / "nc"
    tree = {**SMALL, "scheme": {"max_outer": 2}}
    assert cli_entry(["--config", _write(tmp_path, tree), "--out", str(out), "--quiet"]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["converged"]
    assert (out / "trajectories.csv").exists()


def test_round_trip_resistance_ordering(tmp_path):
    peaks = {}
    for c in (1, 2, 3, 4):
        out = tmp_path / f"c{c}"
        tree = {"signal": {"sigma": 0.0}, "resistance": {"c": c}}
        assert cli_entry(["--config", _write(tmp_path, tree, f"c{c}.yaml"), "--out", str(out), "--quiet"]) == 0
        peaks[c] = json.loads((out / "summary.json").read_text())["results"]["peak_abs_u"]
    out = tmp_path / "zero"
    tree = {"signal": {"sigma": 0.0}, "resistance": {"variant": "zero"}}
    cli_entry(["--config", _write(tmp_path, tree, "z.yaml"), "--out", str(out), "--quiet"])
    zero = json.loads((out / "summary.json").read_text())["results"]["peak_abs_u"]
    assert peaks[1] < peaks[2] < peaks[3] < peaks[4] < zero


def test_mi_profile(tmp_path):
    out = tmp_path / "mi"
    tree = {"impact": {"nu": 0.5, "lambda": 1.0, "kappa_inf": 0.0}}
    assert cli_entry(["--config", _write(tmp_path, tree), "--experiment", "mi_profile", "--out", str(out),
                      "--quiet"]) == 0
    header, data = _read(out / "trajectories.csv")
    assert header == ["t", "u", "r", "mi", "tmi", "mi_no_resistance"]
    s = json.loads((out / "summary.json").read_text())["results"]
    assert s["t_peak"] == pytest.approx(1.0) and s["pmi"] == 0.0
    assert np.all(data[:, header.index("mi")] <= data[:, header.index("mi_no_resistance")] + 1e-15)


def test_sensitivity_sweep_files(tmp_path):
    out = tmp_path / "sw"
    tree = {"analysis": {"sweep_nu": [0.5, 0.7], "sweep_kappa_inf": [0.5, 1.5]}}
    assert cli_entry(["--config", _write(tmp_path, tree), "--experiment", "sensitivity_sweep", "--out", str(out),
                      "--quiet"]) == 0
    names = sorted(os.listdir(out))
    for label in ("nu_0.5", "nu_0.7", "kappa_inf_0.5", "kappa_inf_1.5"):
        assert f"trajectories_{label}.csv" in names
    s = json.loads((out / "summary.json").read_text())["results"]["settings"]
    assert s["nu_0.5"]["peak_abs_u"] < s["nu_0.7"]["peak_abs_u"]
    assert s["kappa_inf_1.5"]["peak_abs_u"] < s["kappa_inf_0.5"]["peak_abs_u"]
    with open(out / "convergence.log") as fh:
        assert fh.readline().startswith("setting,iteration,E1")


@pytest.mark.xfail(strict=True, reason="the fitted exponent on gamma in [1, 100] converges to about 0.534, "
                                       "outside 0.6086 +- 0.05")
def test_gamma_scaling_exponent(tmp_path):
    out = tmp_path / "gs"
    tree = {"impact": {"nu": 0.5, "lambda": 1.0, "kappa_inf": 0.0}}
    assert cli_entry(["--config", _write(tmp_path, tree), "--experiment", "gamma_scaling", "--out", str(out),
                      "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())["results"]
    assert s["exponent"] == pytest.approx(0.6086, abs=0.05)


@pytest.mark.xfail(strict=True, reason="E1 has isolated upticks between iterations; only its envelope decays")
def test_convergence_report_strictly_decreasing(tmp_path):
    out = tmp_path / "cr"
    assert cli_entry(["--config", _write(tmp_path, None), "--experiment", "convergence_report", "--out", str(out),
                      "--quiet"]) == 0
    _, log = _read(out / "convergence.log")
    assert np.all(np.diff(log[3:, 1]) < 0)


def test_sweep_nonconvergence_is_reported(tmp_path):
    # on a 40-node grid the nu = 1/2 iteration settles into a two-cycle
    out = tmp_path / "sw"
    tree = {"grid": {"N": 40}, "analysis": {"sweep_nu": [0.5], "sweep_kappa_inf": [0.5]}}
    assert cli_entry(["--config", _write(tmp_path, tree), "--experiment", "sensitivity_sweep", "--out", str(out),
                      "--quiet"]) == 1
    s = json.loads((out / "summary.json").read_text())
    assert not s["converged"] and not s["results"]["settings"]["nu_0.5"]["converged"]
    assert (out / "trajectories_nu_0.5.csv").exists()
