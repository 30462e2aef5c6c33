"""Market impact profiles, impact scaling fits, PnL, gradients and cost trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .foc import SchemeConfig, SchemeMatrices, _backward_f, foc_rhs
from .kernels import KernelSpec, TimeGrid, build_nystrom
from .paths import DeterministicExpectation, PathSet, apply_forward, inner_product
from .resistance import ResistanceFn, solve_resistance


@dataclass(frozen=True)
class ImpactProfile:
    """Impact ``MI(t)`` of one or more rate paths.

    ``pmi`` and ``tmi`` are filled by :func:`decompose_pmi_tmi`.
    """

    times: np.ndarray
    mi: np.ndarray
    resistance: np.ndarray
    pmi: float | None = None
    tmi: np.ndarray | None = None
    pmi_tail: float | None = None


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit ``log MI = log prefactor + exponent log gamma``."""

    prefactor: float
    exponent: float
    gammas: np.ndarray
    mi: np.ndarray
    residual: float


def _as_paths(u, grid):
    if isinstance(u, PathSet):
        return u
    return PathSet(np.atleast_2d(np.asarray(u, dtype=float)), grid)


def market_impact(u, kernel: KernelSpec, fn: ResistanceFn, grid: TimeGrid, method: str = "sweep",
                  eps2: float = 1e-16, matrices=None) -> ImpactProfile:
    """``MI(t) = sum_{j<i} L_GH[i, j] (u - r)_j`` with ``r`` the resistance of ``u``.

    The exact forward sweep is the default because Picard iteration loses
    contraction for large rates.
    """
    u = _as_paths(u, grid)
    G, GH = _impact_matrices(kernel, grid) if matrices is None else matrices
    r, _ = solve_resistance(u, G, fn, eps2, method=method)
    mi = apply_forward(GH, PathSet(u.values - r.values, grid))
    return ImpactProfile(grid.nodes, mi.values, r.values)


def _impact_matrices(kernel, grid):
    return build_nystrom(kernel.transient(), grid), build_nystrom(kernel, grid)


def _tail_integral(t, r):
    """Integral of a power-law extrapolation of ``r`` beyond the last node."""
    n = len(t)
    sl = slice(2 * n // 3, n)
    tt, rr = t[sl], np.abs(r[sl])
    if np.any(rr <= 0) or len(tt) < 3:
        return 0.0 if np.all(rr == 0) else float("nan")
    p = np.polyfit(np.log(tt), np.log(rr), 1)[0]
    if p >= -1:
        return float("inf")
    return float(np.abs(r[-1]) * t[-1] / (-p - 1))


def decompose_pmi_tmi(u, kernel: KernelSpec, fn: ResistanceFn, grid: TimeGrid, method: str = "sweep") -> ImpactProfile:
    """Permanent and transient parts of the impact of a compactly supported rate.

    The integrals to infinity are truncated at the grid horizon; the
    power-law tail of ``kappa_inf * int_T^inf r`` is reported in ``pmi_tail``.
    """
    u = _as_paths(u, grid)
    if u.M != 1:
        raise ValueError("decomposition expects a single deterministic path")
    nz = np.nonzero(u.body[0])[0]
    if nz.size and nz[-1] >= grid.N - 1:
        raise ValueError("rate support reaches the horizon; extend the grid")
    prof = market_impact(u, kernel, fn, grid, method)
    d = grid.delta
    x = (u.values - prof.resistance)[0]
    cum = np.concatenate([[0.0], np.cumsum(x[:-1]) * d])
    total = cum[-1]
    pmi = kernel.kappa_inf * total
    transient = apply_forward(build_nystrom(kernel.transient(), grid), PathSet(x, grid)).values[0]
    tmi = transient - kernel.kappa_inf * (total - cum)
    tail = kernel.kappa_inf * _tail_integral(grid.nodes[1:], prof.resistance[0, 1:])
    return ImpactProfile(prof.times, prof.mi, prof.resistance, float(pmi), tmi, float(tail))


def gamma_scaling_fit(u, gammas, kernel: KernelSpec, fn: ResistanceFn, grid: TimeGrid) -> ScalingFit:
    """Peak impact of ``gamma * u`` over a grid of sizes and its log-log fit."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.ndim != 1 or gammas.size < 3 or np.any(gammas <= 0):
        raise ValueError("need at least three positive gamma values")
    u = _as_paths(u, grid)
    mats = _impact_matrices(kernel, grid)
    peaks = np.array([market_impact(PathSet(g * u.values, grid), kernel, fn, grid, matrices=mats).mi.max()
                      for g in gammas])
    if np.any(~np.isfinite(peaks)) or np.any(peaks <= 0):
        raise ValueError("impact must be positive at every gamma for a log-log fit")
    lx, ly = np.log(gammas), np.log(peaks)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (icpt + slope * lx)) ** 2)))
    return ScalingFit(float(np.exp(icpt)), float(slope), gammas, peaks, resid)


def inventory(u: PathSet, X0: float = 0.0) -> PathSet:
    d = u.grid.delta
    X = np.zeros_like(u.values)
    X[:, 1:] = np.cumsum(u.body, axis=1) * d
    return PathSet(X + X0, u.grid)


def impact_path(u: PathSet, r: PathSet, cfg: SchemeConfig, mats: SchemeMatrices | None = None) -> PathSet:
    """Execution-price distortion ``gamma/2 u + L_GH (u - r)``."""
    mats = SchemeMatrices.build(cfg, u.grid) if mats is None else mats
    fwd = apply_forward(mats.GH, PathSet(u.values - r.values, u.grid))
    return PathSet(0.5 * cfg.gamma * u.values + fwd.values, u.grid)


def inventory_and_costs(u: PathSet, impact: PathSet, X0: float = 0.0):
    """Inventory ``X0 + int u`` and running cost ``int I u`` by left-rectangle sums."""
    if u.values.shape != impact.values.shape:
        raise ValueError("shape mismatch")
    d = u.grid.delta
    cost = np.zeros_like(u.values)
    cost[:, 1:] = np.cumsum(impact.body * u.body, axis=1) * d
    return inventory(u, X0), PathSet(cost, u.grid)


def eval_pnl(u: PathSet, r: PathSet, alpha: PathSet, cfg: SchemeConfig, mats: SchemeMatrices | None = None) -> float:
    """Discrete objective, up to the strategy-independent ``X0 E[S_T]``.

    ``<u, alpha> - gamma/2 |u|^2 - <u, L_GH (u - r)> - phi/2 delta sum_{i=1}^N E X_i^2
    - varrho/2 E X_N^2``.
    """
    mats = SchemeMatrices.build(cfg, u.grid) if mats is None else mats
    d = u.grid.delta
    fwd = apply_forward(mats.GH, PathSet(u.values - r.values, u.grid))
    X = inventory(u, cfg.X0).values
    J = inner_product(u, alpha) - 0.5 * cfg.gamma * inner_product(u, u) - inner_product(u, fwd)
    J -= 0.5 * cfg.penalties.phi * d * float(np.mean(np.sum(X[:, 1:] ** 2, axis=1)))
    J -= 0.5 * cfg.penalties.varrho * float(np.mean(X[:, -1] ** 2))
    return float(J)


def eval_gradient(u: PathSet, alpha: PathSet, cfg: SchemeConfig, mats: SchemeMatrices | None = None, ce=None,
                  method: str | None = None):
    """Gradient of the discrete objective at ``u``.

    ``rhs - gamma u - L_GH (u - r) - f - (L_P + M_P) u`` with ``f`` from the
    backward recursion. Pass ``mats.transposed_adjoint()`` to obtain the
    exact gradient of :func:`eval_pnl`.

    Returns
    -------
    grad : PathSet
    r : PathSet
    """
    mats = SchemeMatrices.build(cfg, u.grid) if mats is None else mats
    ce = DeterministicExpectation() if ce is None else ce
    fn = cfg.resistance
    r, _ = solve_resistance(u, mats.G, fn, cfg.eps2, method=method or cfg.resistance_method)
    ub, rb = u.body, r.body
    f = _backward_f(ub, rb, mats, fn, ce)
    P = mats.P
    pen = ub @ (P.L + np.diag(np.diag(P.M))).T + ce.project_columns(ub @ np.triu(P.M, 1).T)
    g = foc_rhs(alpha, cfg).body - cfg.gamma * ub - (ub - rb) @ mats.GH.L.T - f - pen
    return PathSet(np.column_stack([g, np.zeros(u.M)]), u.grid), r
