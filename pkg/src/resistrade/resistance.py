"""Resistance function and the fixed-point solver for the market resistance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .kernels import KernelSpec, NystromMatrices, TimeGrid, build_nystrom
from .paths import PathSet

DEFAULT_DELTA = 1e6
PICARD_CAP = 500


class ResistanceConvergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance; ``last_e2`` holds the final error."""

    def __init__(self, message, last_e2=np.nan, iterations=0):
        super().__init__(message)
        self.last_e2 = last_e2
        self.iterations = iterations


@dataclass(frozen=True)
class ResistanceFn:
    """Map from perceived mispricing to resistance rate.

    Parameters
    ----------
    variant : {"power", "linear", "zero"}
        ``power`` is ``sign(x)|x|**c`` inside ``[-delta, delta]`` and its
        tangent line outside; ``linear`` is ``a * x``; ``zero`` is 0.
    c : float
        Convexity exponent, ``c >= 1``.
    delta : float
        Linearisation threshold.
    a : float
        Slope of the linear variant.
    """

    variant: str = "power"
    c: float = 2.0
    delta: float = DEFAULT_DELTA
    a: float = 0.0

    def __post_init__(self):
        if self.variant not in ("power", "linear", "zero"):
            raise ValueError(f"unknown resistance variant {self.variant!r}")
        if self.variant == "power":
            if self.c < 1:
                raise ValueError(f"c must be >= 1, got {self.c}")
            if not self.delta > 0:
                raise ValueError(f"delta must be positive, got {self.delta}")
        if self.variant == "linear" and self.a < 0:
            raise ValueError(f"a must be nonnegative, got {self.a}")

    @classmethod
    def power(cls, c=2.0, delta=DEFAULT_DELTA):
        return cls("power", c=c, delta=delta)

    @classmethod
    def linear(cls, a):
        return cls("linear", a=a)

    @classmethod
    def zero(cls):
        return cls("zero")

    @property
    def lipschitz(self) -> float:
        """Global Lipschitz constant, also the bound on the derivative."""
        if self.variant == "power":
            return self.c * self.delta ** (self.c - 1)
        if self.variant == "linear":
            return self.a
        return 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "zero":
            return np.zeros_like(x)
        if self.variant == "linear":
            return self.a * x
        c, d = self.c, self.delta
        ax = np.abs(x)
        inner = np.sign(x) * ax**c
        outer = c * d ** (c - 1) * x - np.sign(x) * d**c * (c - 1)
        return np.where(ax <= d, inner, outer)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "zero":
            return np.zeros_like(x)
        if self.variant == "linear":
            return np.full_like(x, self.a)
        c, d = self.c, self.delta
        ax = np.abs(x)
        return np.where(ax <= d, c * ax ** (c - 1), c * d ** (c - 1))


def resistance_value(fn: ResistanceFn, x):
    out = fn.value(x)
    return float(out) if np.ndim(out) == 0 else out


def resistance_derivative(fn: ResistanceFn, x):
    out = fn.derivative(x)
    return float(out) if np.ndim(out) == 0 else out


def _e2(ub, rb, LG, fn, delta):
    res = rb - fn.value((ub - rb) @ LG.T)
    return float(np.max(delta * np.sum(res * res, axis=1)))


def picard_resistance(ub, LG, fn, delta, eps2, r0=None, cap=PICARD_CAP):
    """Picard iteration on node arrays of shape ``(M, N)``.

    Returns the first iterate whose E2 error is at most ``eps2`` together
    with the number of error evaluations performed.
    """
    r = np.zeros_like(ub) if r0 is None else np.array(r0, dtype=float)
    e2 = np.inf
    for it in range(1, cap + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = fn.value((ub - r) @ LG.T)
            diff = r - nxt
            e2 = float(np.max(delta * np.sum(diff * diff, axis=1)))
        if not np.isfinite(e2):
            raise ResistanceConvergenceError(f"Picard iteration diverged after {it} steps", e2, it)
        if e2 <= eps2:
            return r, it
        r = nxt
    raise ResistanceConvergenceError(f"Picard iteration exceeded {cap} steps, E2={e2:.3e}", e2, cap)


def sweep_resistance(ub, LG, fn):
    """Exact causal solve by forward substitution, one node at a time."""
    M, N = ub.shape
    r = np.zeros((M, N))
    x = np.zeros(M)
    for i in range(1, N):
        x = (ub[:, :i] - r[:, :i]) @ LG[i, :i]
        r[:, i] = fn.value(x)
    if not np.all(np.isfinite(r)):
        raise ResistanceConvergenceError("forward sweep overflowed", np.inf, 1)
    return r


def solve_resistance(u: PathSet, LG: NystromMatrices, fn: ResistanceFn, eps2: float = 1e-16,
                     warm: PathSet | None = None, method: str = "picard", cap: int = PICARD_CAP):
    """Solve ``r = U(G(u - r))`` on every path.

    Parameters
    ----------
    method : {"picard", "sweep"}
        Picard fixed-point iteration warm-started from ``warm``, or the exact
        forward substitution (stable when Picard diverges for large inputs).

    Returns
    -------
    r : PathSet
    iterations : int
    """
    if not eps2 > 0:
        raise ValueError("eps2 must be positive")
    if LG.N != u.grid.N:
        raise ValueError("matrix size does not match grid")
    ub = u.body
    if method == "picard":
        r0 = None if warm is None else warm.body
        rb, its = picard_resistance(ub, LG.L, fn, u.grid.delta, eps2, r0, cap)
    elif method == "sweep":
        rb, its = sweep_resistance(ub, LG.L, fn), 1
    else:
        raise ValueError(f"unknown method {method!r}")
    terminal = fn.value((ub - rb) @ LG.L_terminal)
    return PathSet(np.column_stack([rb, terminal]), u.grid), its


def resistance_error_E2(u: PathSet, r: PathSet, LG: NystromMatrices, fn: ResistanceFn) -> float:
    """``max_m delta sum_i |r - U(sum_{j<i} L[i, j](u - r)_j)|**2``."""
    if u.values.shape != r.values.shape:
        raise ValueError("shape mismatch")
    return _e2(u.body, r.body, LG.L, fn, u.grid.delta)


class ResistanceTransformer(TransformerMixin, BaseEstimator):
    """Map trading-rate trajectories to their endogenous resistance.

    Parameters
    ----------
    T : float
        Horizon of the grid the rows are sampled on.
    kappa_inf, lam, nu : float
        Kernel parameters; only the transient part drives resistance.
    variant, c, delta, a
        See :class:`ResistanceFn`.
    eps2 : float
        Tolerance of the fixed point.
    method : {"picard", "sweep"}
    """

    def __init__(self, T=1.0, lam=0.467, nu=0.614, variant="power", c=2.0, delta=DEFAULT_DELTA,
                 a=0.0, eps2=1e-16, method="picard"):
        self.T = T
        self.lam = lam
        self.nu = nu
        self.variant = variant
        self.c = c
        self.delta = delta
        self.a = a
        self.eps2 = eps2
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] < 2:
            raise ValueError("need at least two time nodes per row")
        self.grid_ = TimeGrid(self.T, X.shape[1] - 1)
        self.fn_ = ResistanceFn(self.variant, c=self.c, delta=self.delta, a=self.a)
        self.matrices_ = build_nystrom(KernelSpec(0.0, self.lam, self.nu), self.grid_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "matrices_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        r, _ = solve_resistance(PathSet(X, self.grid_), self.matrices_, self.fn_, self.eps2,
                                method=self.method)
        return np.array(r.values)
