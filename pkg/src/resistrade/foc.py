"""Iterative solver of the nonlinear first-order condition for the optimal rate."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve, solve_triangular

from .kernels import (AdmissibilityError, KernelSpec, NystromMatrices, PenaltyKernelParams, TimeGrid, build_nystrom,
                      build_penalty_matrices, kernel_l2_constant)
from .paths import DeterministicExpectation, PathSet, apply_forward
from .resistance import ResistanceConvergenceError, ResistanceFn, picard_resistance, sweep_resistance


class ConfigurationError(ValueError):
    """The discretised linear system is singular for this configuration."""


class InnerLoopError(RuntimeError):
    """The lagged stochastic inner loop hit its iteration cap."""


class SingularPivotError(ArithmeticError):
    """Nonpositive pivot in the backward recursion."""


@dataclass(frozen=True)
class SchemeConfig:
    """Model and numerical parameters of the iterative scheme.

    Parameters
    ----------
    gamma : float
        Slippage intensity.
    kernel : KernelSpec
    penalties : PenaltyKernelParams
    resistance : ResistanceFn
    X0 : float
        Initial inventory.
    eps1, eps2, eps_bf : float
        Tolerances on the FOC residual, the resistance fixed point and the
        backward equation (the last one is only reported).
    max_outer : int
        Cap on outer iterations.
    mode : {"deterministic", "stochastic"}
    resistance_method : {"picard", "sweep"}
    inner : {"reduced", "lagged"}
        Stochastic linear step: exact solve on the regression coefficients,
        or fixed-point iteration lagging the conditional-expectation term.
    inner_cap : int
    """

    gamma: float = 0.2
    kernel: KernelSpec = field(default_factory=KernelSpec)
    penalties: PenaltyKernelParams = field(default_factory=PenaltyKernelParams)
    resistance: ResistanceFn = field(default_factory=ResistanceFn)
    X0: float = 0.0
    eps1: float = 1e-11
    eps2: float = 1e-16
    eps_bf: float = 1e-30
    max_outer: int = 200
    mode: str = "deterministic"
    resistance_method: str = "picard"
    inner: str = "reduced"
    inner_cap: int = 20000

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        for name in ("eps1", "eps2", "eps_bf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError("max_outer must be a positive integer")
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.resistance_method not in ("picard", "sweep"):
            raise ValueError(f"unknown resistance method {self.resistance_method!r}")
        if self.inner not in ("reduced", "lagged"):
            raise ValueError(f"unknown inner solver {self.inner!r}")


@dataclass(frozen=True)
class SchemeMatrices:
    """Quadrature matrices of the transient kernel, the full kernel and the penalty."""

    grid: TimeGrid
    G: NystromMatrices
    GH: NystromMatrices
    P: NystromMatrices

    @classmethod
    def build(cls, cfg: SchemeConfig, grid: TimeGrid) -> "SchemeMatrices":
        return cls(grid, build_nystrom(cfg.kernel.transient(), grid), build_nystrom(cfg.kernel, grid),
                   build_penalty_matrices(cfg.penalties, grid))

    def transposed_adjoint(self) -> "SchemeMatrices":
        """Kernel adjoints replaced by exact transposes; penalty matrices kept."""
        return SchemeMatrices(self.grid, self.G.transposed_adjoint(), self.GH.transposed_adjoint(), self.P)


@dataclass
class SolveResult:
    """Outcome of :func:`iterate_scheme`."""

    u: PathSet
    r: PathSet
    f: PathSet
    e1_history: list
    e2_history: list
    ebf_history: list
    outer_iterations: int
    converged: bool
    picard_iterations: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    iterates: list | None = None
    message: str = ""
    regression_residual: float = 0.0


def _as_matrices(cfg, grid, matrices):
    return SchemeMatrices.build(cfg, grid) if matrices is None else matrices


def _close(body, terminal=None):
    """Append the terminal column; the rate is held constant on the last cell."""
    terminal = body[:, -1] if terminal is None else terminal
    return np.column_stack([body, terminal])


def foc_rhs(alpha: PathSet, cfg: SchemeConfig) -> PathSet:
    """``alpha - X0 (phi (T - t) + varrho)``."""
    g = alpha.grid
    pen = cfg.penalties.phi * (g.T - g.nodes) + cfg.penalties.varrho
    return PathSet(alpha.values - cfg.X0 * pen, g)


def _w(ub, rb, mats, fn):
    return fn.derivative((ub - rb) @ mats.G.L.T)


def _backward_f(ub, rb, mats, fn, ce):
    MG, MGH = mats.G.M, mats.GH.M
    w = _w(ub, rb, mats, fn)
    M, N = ub.shape
    f = np.zeros((M, N))
    for p in range(N - 1, -1, -1):
        num = MGH[p, p] * ub[:, p]
        if p < N - 1:
            z = ub[:, p + 1:] @ MGH[p, p + 1:] - (w[:, p + 1:] * f[:, p + 1:]) @ MG[p, p + 1:]
            num = num + ce.project(p, z)
        den = 1.0 + MG[p, p] * w[:, p]
        if np.any(den <= 0):
            raise SingularPivotError(f"nonpositive pivot at node {p}")
        f[:, p] = num / den
    return f


def _ebf(fb, ub, rb, mats, fn, ce, delta):
    MG, MGH = mats.G.M, mats.GH.M
    w = _w(ub, rb, mats, fn)
    N = ub.shape[1]
    res = np.empty_like(fb)
    for p in range(N):
        z = ub[:, p + 1:] @ MGH[p, p + 1:] - (w[:, p + 1:] * fb[:, p + 1:]) @ MG[p, p + 1:]
        e = ce.project(p, z) if p < N - 1 else 0.0
        res[:, p] = fb[:, p] + MG[p, p] * w[:, p] * fb[:, p] - MGH[p, p] * ub[:, p] - e
    return float(np.max(delta * np.sum(res * res, axis=1)))


def solve_backward_f(u: PathSet, r: PathSet, mats: SchemeMatrices, fn: ResistanceFn, ce=None) -> PathSet:
    """Backward recursion for the adjoint term ``f`` with ``f(t_N) = 0``.

    ``f_p (1 + M_G[p,p] w_p) = M_GH[p,p] u_p
    + E_p[sum_{k>p} M_GH[p,k] u_k - M_G[p,k] w_k f_k]``, ``w = U'(G(u - r))``.
    """
    ce = DeterministicExpectation() if ce is None else ce
    fb = _backward_f(u.body, r.body, mats, fn, ce)
    return PathSet(_close(fb, np.zeros(u.M)), u.grid)


def backward_error_Ebf(f: PathSet, u: PathSet, r: PathSet, mats: SchemeMatrices, fn: ResistanceFn, ce=None) -> float:
    """Supremum over paths of the squared discrete residual of the backward equation."""
    ce = DeterministicExpectation() if ce is None else ce
    return _ebf(f.body, u.body, r.body, mats, fn, ce, u.grid.delta)


def assemble_A(u: PathSet, r: PathSet, f: PathSet, GH: NystromMatrices) -> PathSet:
    """``A = L_GH r - f``."""
    fr = apply_forward(GH, r)
    return PathSet(fr.values - f.values, u.grid)


def _e1(ub, rb, fb, bb, cfg, mats, ce, delta):
    LGH, P = mats.GH.L, mats.P
    res = cfg.gamma * ub + ub @ (LGH + P.L).T + np.diag(P.M) * ub
    res += ce.project_columns(ub @ np.triu(P.M, 1).T)
    res += fb - rb @ LGH.T - bb
    return float(np.max(delta * np.sum(res * res, axis=1)))


def foc_error_E1(u: PathSet, r: PathSet, f: PathSet, alpha: PathSet, cfg: SchemeConfig,
                 mats: SchemeMatrices | None = None, ce=None) -> float:
    """Supremum over paths of the squared discrete FOC residual."""
    mats = _as_matrices(cfg, u.grid, mats)
    ce = DeterministicExpectation() if ce is None else ce
    b = foc_rhs(alpha, cfg)
    return _e1(u.body, r.body, f.body, b.body, cfg, mats, ce, u.grid.delta)


class FOCStepSolver:
    """Solver of ``[gamma I + L_GH + L_P + M_P] u = b`` with conditional expectations.

    In deterministic mode this is one dense LU solve. With a regression
    provider the strict upper part of ``M_P`` acts through the smoother
    ``D R``; writing ``u = K^{-1}(b - D c)`` with ``K`` the lower part gives
    a linear system ``(I + W) c = c0`` of size ``N * n_basis`` for the
    regression coefficients, factored once and shared by all paths.
    """

    def __init__(self, cfg: SchemeConfig, mats: SchemeMatrices, ce=None):
        self.cfg = cfg
        self.mats = mats
        self.ce = DeterministicExpectation() if ce is None else ce
        N = mats.grid.N
        P = mats.P
        self.K_low = cfg.gamma * np.eye(N) + mats.GH.L + P.L + np.diag(np.diag(P.M))
        self.U_P = np.triu(P.M, 1)
        self.deterministic = getattr(self.ce, "mode", "deterministic") == "deterministic"
        self.inner_iterations = 0
        if self.deterministic:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu, piv = lu_factor(self.K_low + self.U_P)
            if np.any(np.diag(lu) == 0):
                raise ConfigurationError("singular FOC system (gamma too small with vanishing kernels?)")
            self._lu = (lu, piv)
            return
        if np.any(np.diag(self.K_low) == 0):
            raise ConfigurationError("singular FOC system (gamma too small with vanishing kernels?)")
        if cfg.inner == "reduced":
            D, R = self.ce.design, self.ce.operators
            k = D.shape[-1]
            C = np.einsum("lam,mjb->ljab", R, D)
            Kinv = solve_triangular(self.K_low, np.eye(N), lower=True)
            W = self.U_P @ Kinv
            big = (W[:, :, None, None] * C).transpose(0, 2, 1, 3).reshape(N * k, N * k)
            self._lu_red = lu_factor(np.eye(N * k) + big)
            self._k = k

    def _lower(self, b):
        return solve_triangular(self.K_low, b.T, lower=True).T

    def solve(self, b: np.ndarray, u_prev: np.ndarray | None = None) -> np.ndarray:
        """Solve for node arrays ``b`` of shape ``(M, N)``."""
        if self.deterministic:
            return lu_solve(self._lu, b.T).T
        if self.cfg.inner == "reduced":
            ce = self.ce
            u0 = self._lower(b)
            c0 = np.einsum("lam,ml->la", ce.operators, u0 @ self.U_P.T).ravel()
            cc = lu_solve(self._lu_red, c0).reshape(-1, self._k)
            return self._lower(b - np.einsum("mjb,jb->mj", ce.design, cc))
        # lagged fixed point on the conditional-expectation term
        u = np.zeros_like(b) if u_prev is None else u_prev
        tol = self.cfg.eps1 / 10.0
        delta = self.mats.grid.delta
        for it in range(1, self.cfg.inner_cap + 1):
            nxt = self._lower(b - self.ce.project_columns(u @ self.U_P.T))
            diff = float(np.max(delta * np.sum((nxt - u) ** 2, axis=1)))
            u = nxt
            if diff < tol:
                self.inner_iterations += it
                return u
        raise InnerLoopError(f"lagged inner loop exceeded {self.cfg.inner_cap} passes")


def solve_linear_foc_step(b: PathSet, cfg: SchemeConfig, mats: SchemeMatrices | None = None, ce=None) -> PathSet:
    """One linear FOC solve with right-hand side ``b`` (the FOC data plus ``A``)."""
    mats = _as_matrices(cfg, b.grid, mats)
    ub = FOCStepSolver(cfg, mats, ce).solve(b.body)
    return PathSet(_close(ub), b.grid)


def _resolve(ub, r0, cfg, mats, delta):
    fn = cfg.resistance
    if cfg.resistance_method == "sweep":
        rb, its = sweep_resistance(ub, mats.G.L, fn), 1
    else:
        rb, its = picard_resistance(ub, mats.G.L, fn, delta, cfg.eps2, r0)
    return rb, its


def iterate_scheme(cfg: SchemeConfig, alpha: PathSet, ce=None, mats: SchemeMatrices | None = None,
                   keep_iterates: bool = False, callback=None) -> SolveResult:
    """Outer fixed-point iteration for the optimal rate.

    Starting from ``u = r = 0``, each iteration solves the linear FOC with
    ``A`` from the previous iterate, updates the resistance warm-started at
    the previous one, recomputes ``f`` and records E1, E2 and Ebf.
    Non-convergence is flagged on the result rather than raised.
    """
    grid = alpha.grid
    if cfg.mode == "stochastic" and ce is None:
        raise ValueError("stochastic mode needs a conditional-expectation provider")
    if cfg.mode == "deterministic":
        if ce is not None and getattr(ce, "mode", "deterministic") != "deterministic":
            raise ValueError("deterministic mode uses the identity conditional expectation")
        if not np.all(alpha.values == alpha.values[:1]):
            raise ValueError("deterministic mode requires identical paths")
        ce = DeterministicExpectation()
    mats = _as_matrices(cfg, grid, mats)
    fn, d = cfg.resistance, grid.delta
    b = foc_rhs(alpha, cfg).body
    M, N = b.shape
    solver = FOCStepSolver(cfg, mats, ce)
    ub = np.zeros((M, N))
    rb = np.zeros((M, N))
    fb = np.zeros((M, N))
    e1h, e2h, ebfh, picard, walls = [], [], [], [], []
    iterates = [ub.copy()] if keep_iterates else None
    converged, message = False, ""
    t0 = time.perf_counter()
    n = 0
    for n in range(1, cfg.max_outer + 1):
        A = rb @ mats.GH.L.T - fb
        ub = solver.solve(b + A, ub)
        try:
            rb, its = _resolve(ub, rb, cfg, mats, d)
        except ResistanceConvergenceError as exc:
            message = f"resistance solve failed at outer iteration {n}: {exc}"
            n -= 1
            break
        fb = _backward_f(ub, rb, mats, fn, ce)
        e1h.append(_e1(ub, rb, fb, b, cfg, mats, ce, d))
        e2h.append(float(np.max(d * np.sum((rb - fn.value((ub - rb) @ mats.G.L.T)) ** 2, axis=1))))
        ebfh.append(_ebf(fb, ub, rb, mats, fn, ce, d))
        picard.append(its)
        walls.append(time.perf_counter() - t0)
        if keep_iterates:
            iterates.append(ub.copy())
        if callback is not None:
            callback(n, e1h[-1], e2h[-1], ebfh[-1])
        if not np.isfinite(e1h[-1]):
            message = f"non-finite FOC residual at outer iteration {n}"
            break
        if e1h[-1] <= cfg.eps1:
            converged = True
            break
    else:
        message = f"E1 above {cfg.eps1:g} after {cfg.max_outer} outer iterations"
    r_term = fn.value((ub - rb) @ mats.G.L_terminal)
    return SolveResult(
        u=PathSet(_close(ub), grid), r=PathSet(_close(rb, r_term), grid),
        f=PathSet(_close(fb, np.zeros(M)), grid),
        e1_history=e1h, e2_history=e2h, ebf_history=ebfh, outer_iterations=n, converged=converged,
        picard_iterations=picard, wall_times=walls, iterates=iterates, message=message,
        regression_residual=float(getattr(ce, "max_residual_", 0.0)))


def solve_linear_direct(a: float, cfg: SchemeConfig, alpha: PathSet, mats: SchemeMatrices | None = None) -> PathSet:
    """Dense solve of the FOC for the linear resistance ``U(x) = a x``.

    The resistance is eliminated exactly: ``u - r = (I + a L_G)^{-1} u``
    forward and ``(I + a M_G)^{-1}`` on the adjoint side.
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    grid = alpha.grid
    if not np.all(alpha.values == alpha.values[:1]):
        raise ValueError("the direct solve is deterministic: all paths must coincide")
    mats = _as_matrices(cfg, grid, mats)
    N = grid.N
    I = np.eye(N)
    fwd = mats.GH.L @ np.linalg.solve(I + a * mats.G.L, I)
    adj = np.linalg.solve(I + a * mats.G.M, mats.GH.M)
    D = cfg.gamma * I + fwd + adj + mats.P.L + mats.P.M
    b = foc_rhs(alpha, cfg).body[0]
    try:
        u = np.linalg.solve(D, b)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("singular linear FOC system") from exc
    return PathSet(np.tile(_close(u[None, :]), (alpha.M, 1)), grid)


@dataclass(frozen=True)
class ConvergenceReport:
    C_G: float
    C_HG: float
    L: float
    C: float
    C_tilde: float
    cond1: bool
    cond2: bool
    predicted_rate: float


def check_convergence_conditions(cfg: SchemeConfig, grid: TimeGrid) -> ConvergenceReport:
    """Sufficient conditions for geometric convergence of the outer loop.

    ``cond1``: ``sqrt(T C_G) max(L, C) < 1``; ``cond2``: ``gamma > C~`` with
    ``C~ = sqrt(T C_HG) (L s / (1 - L s) + 1 / (1 - C s))``, ``s = sqrt(T C_G)``.
    """
    T = grid.T
    if cfg.kernel.nu <= 0.5:
        raise AdmissibilityError(f"convergence conditions need nu > 1/2, got {cfg.kernel.nu}")
    cg = kernel_l2_constant(cfg.kernel.transient(), T)
    chg = kernel_l2_constant(cfg.kernel, T)
    L = C = cfg.resistance.lipschitz
    s = np.sqrt(T * cg)
    cond1 = bool(1.0 > s * max(L, C))
    if cond1:
        ct = float(np.sqrt(T * chg) * (L * s / (1 - L * s) + 1.0 / (1 - C * s)))
    else:
        ct = float("inf")
    cond2 = bool(cfg.gamma > ct)
    rate = ct / cfg.gamma if cfg.gamma > 0 else float("inf")
    return ConvergenceReport(cg, chg, L, C, ct, cond1, cond2, float(rate))
