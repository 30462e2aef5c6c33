"""Experiment configuration: a YAML tree with defaults for every field."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .foc import SchemeConfig
from .kernels import KernelSpec, PenaltyKernelParams, TimeGrid
from .resistance import DEFAULT_DELTA, ResistanceFn
from .signals import OUParams

EXPERIMENTS = ("round_trip", "mi_profile", "gamma_scaling", "linear_check", "convergence_report",
               "sensitivity_sweep")

DEFAULTS = {
    "experiment": "round_trip",
    "grid": {"T": 1.0, "N": 100},
    "impact": {"gamma": 0.2, "lambda": 0.467, "nu": 0.614, "kappa_inf": 1.0},
    "resistance": {"variant": "power", "c": 2.0, "delta": DEFAULT_DELTA, "a": 0.5},
    "penalties": {"phi": 0.0, "varrho": 500.0},
    "signal": {"eta": 10.0, "kappa": 1.0, "sigma": 1.0, "mu0": 1.0},
    "inventory": {"X0": 0.0},
    "mc": {"M": 2000, "seed": 0, "ridge_penalty": 1e-5},
    "scheme": {"eps1": 1e-11, "eps2": 1e-16, "eps_bf": 1e-30, "max_outer": 200},
    "analysis": {
        "rate": 0.3, "duration": 1.0, "horizon": 3.0, "profile_N": 600,
        "gamma_min": 1.0, "gamma_max": 100.0, "gamma_points": 21, "scaling_N": 3200,
        "linear_eps1": 1e-26, "linear_max_outer": 400,
        "sweep_nu": [0.5, 0.614, 0.7, 0.8, 0.9], "sweep_kappa_inf": [0.5, 1.0, 1.5],
    },
    "output": {"directory": "runs/out", "samples": 5},
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _merge(base, over, path):
    out = copy.deepcopy(base)
    for key, val in over.items():
        kp = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"{kp}: unknown key")
        if isinstance(base[key], dict):
            if val is None:
                continue
            if not isinstance(val, dict):
                raise ConfigError(f"{kp}: expected a mapping")
            out[key] = _merge(base[key], val, kp)
        else:
            out[key] = val
    return out


def _num(tree, path, kind=float, lo=None, hi=None, lo_open=False, hi_open=False):
    *parents, leaf = path.split(".")
    node = tree
    for p in parents:
        node = node[p]
    val = node[leaf]
    try:
        if isinstance(val, bool):
            raise TypeError
        num = kind(float(val)) if kind is int else float(val)
        if kind is int and num != float(val):
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {'an integer' if kind is int else 'a number'}, got {val!r}") from None
    if lo is not None and (num < lo or (lo_open and num == lo)):
        raise ConfigError(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {num}")
    if hi is not None and (num > hi or (hi_open and num == hi)):
        raise ConfigError(f"{path}: must be {'<' if hi_open else '<='} {hi}, got {num}")
    node[leaf] = num
    return num


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment tree; ``tree`` holds the fully resolved values."""

    tree: dict

    @property
    def experiment(self) -> str:
        return self.tree["experiment"]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.tree["grid"]["T"], self.tree["grid"]["N"])

    @property
    def kernel(self) -> KernelSpec:
        im = self.tree["impact"]
        return KernelSpec(im["kappa_inf"], im["lambda"], im["nu"])

    @property
    def resistance(self) -> ResistanceFn:
        rs = self.tree["resistance"]
        return ResistanceFn(rs["variant"], c=rs["c"], delta=rs["delta"], a=rs["a"])

    @property
    def signal(self) -> OUParams:
        s = self.tree["signal"]
        return OUParams(s["eta"], s["kappa"], s["sigma"], s["mu0"])

    @property
    def seed(self) -> int:
        return self.tree["mc"]["seed"]

    def scheme(self, **overrides) -> SchemeConfig:
        t = self.tree
        kw = dict(
            gamma=t["impact"]["gamma"], kernel=self.kernel,
            penalties=PenaltyKernelParams(t["penalties"]["phi"], t["penalties"]["varrho"]),
            resistance=self.resistance, X0=t["inventory"]["X0"], eps1=t["scheme"]["eps1"],
            eps2=t["scheme"]["eps2"], eps_bf=t["scheme"]["eps_bf"], max_outer=t["scheme"]["max_outer"],
            mode="deterministic" if t["signal"]["sigma"] == 0 else "stochastic")
        kw.update(overrides)
        return SchemeConfig(**kw)

    def replace(self, **paths) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"impact.nu": 0.7})``."""
        tree = copy.deepcopy(self.tree)
        for path, val in paths.items():
            *parents, leaf = path.split(".")
            node = tree
            for p in parents:
                node = node[p]
            node[leaf] = val
        return validate(tree)


def validate(raw: dict | None) -> ExperimentConfig:
    """Merge ``raw`` onto the defaults and check every field."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    t = _merge(DEFAULTS, raw, "")
    if t["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {t['experiment']!r}")
    _num(t, "grid.T", lo=0, lo_open=True)
    _num(t, "grid.N", int, lo=2)
    _num(t, "impact.gamma", lo=0)
    _num(t, "impact.lambda", lo=0)
    # nu = 1/2 is accepted for the impact studies, anything smaller is not
    _num(t, "impact.nu", lo=0.5, hi=1, hi_open=True)
    _num(t, "impact.kappa_inf", lo=0)
    if t["resistance"]["variant"] not in ("power", "linear", "zero"):
        raise ConfigError(f"resistance.variant: must be power, linear or zero, got {t['resistance']['variant']!r}")
    _num(t, "resistance.c", lo=1)
    _num(t, "resistance.delta", lo=0, lo_open=True)
    _num(t, "resistance.a", lo=0)
    _num(t, "penalties.phi", lo=0)
    _num(t, "penalties.varrho", lo=0)
    _num(t, "signal.eta")
    _num(t, "signal.kappa", lo=0, lo_open=True)
    _num(t, "signal.sigma", lo=0)
    _num(t, "signal.mu0")
    _num(t, "inventory.X0")
    _num(t, "mc.M", int, lo=1)
    _num(t, "mc.seed", int, lo=0)
    _num(t, "mc.ridge_penalty", lo=0)
    for key in ("eps1", "eps2", "eps_bf"):
        _num(t, f"scheme.{key}", lo=0, lo_open=True)
    _num(t, "scheme.max_outer", int, lo=1)
    a = "analysis"
    for key in ("rate", "duration", "horizon", "gamma_min", "gamma_max", "linear_eps1"):
        _num(t, f"{a}.{key}", lo=0, lo_open=True)
    for key in ("profile_N", "scaling_N", "linear_max_outer"):
        _num(t, f"{a}.{key}", int, lo=2)
    _num(t, f"{a}.gamma_points", int, lo=3)
    if t[a]["duration"] >= t[a]["horizon"]:
        raise ConfigError(f"{a}.horizon: must exceed {a}.duration")
    if t[a]["gamma_min"] >= t[a]["gamma_max"]:
        raise ConfigError(f"{a}.gamma_max: must exceed {a}.gamma_min")
    for key, lo in (("sweep_nu", 0.5), ("sweep_kappa_inf", 0.0)):
        vals = t[a][key]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{a}.{key}: expected a non-empty list")
        for i, v in enumerate(vals):
            try:
                if isinstance(v, bool):
                    raise TypeError
                fv = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"{a}.{key}[{i}]: expected a number, got {v!r}") from None
            if fv < lo or (key == "sweep_nu" and fv >= 1):
                raise ConfigError(f"{a}.{key}[{i}]: out of range, got {fv}")
            t[a][key][i] = fv
    if not isinstance(t["output"]["directory"], str) or not t["output"]["directory"]:
        raise ConfigError("output.directory: expected a non-empty path")
    _num(t, "output.samples", int, lo=0)
    return ExperimentConfig(t)


def load_config(path) -> ExperimentConfig:
    """Read a YAML file; an empty file gives the default configuration."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML: {exc}") from None
    return validate(raw)
