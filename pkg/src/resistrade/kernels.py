"""Time grids, the power-law impact kernel and its exact cell quadrature."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz


class AdmissibilityError(ValueError):
    """Raised when a kernel is not square integrable near the origin."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / N`` for ``i = 0..N``.

    Parameters
    ----------
    T : float
        Horizon, strictly positive.
    N : int
        Number of steps.
    """

    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def delta(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # integer multiples so that t_N == T exactly
        t = np.arange(self.N + 1) * self.delta
        t[-1] = self.T
        return t


@dataclass(frozen=True)
class KernelSpec:
    """Impact kernel ``G(t) = kappa_inf + lam * t**(nu - 1)``.

    ``kappa_inf`` is the permanent level and ``lam * t**(nu-1)`` the
    transient power-law part.
    """

    kappa_inf: float = 1.0
    lam: float = 0.467
    nu: float = 0.614

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.kappa_inf < 0:
            raise ValueError(f"kappa_inf must be nonnegative, got {self.kappa_inf}")
        if not 0 < self.nu < 1:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu}")

    def transient(self) -> "KernelSpec":
        """The power-law part alone (``kappa_inf = 0``)."""
        return KernelSpec(kappa_inf=0.0, lam=self.lam, nu=self.nu)

    def permanent(self) -> "KernelSpec":
        """The constant part alone (``lam = 0``)."""
        return KernelSpec(kappa_inf=self.kappa_inf, lam=0.0, nu=self.nu)


@dataclass(frozen=True)
class PenaltyKernelParams:
    """Running (``phi``) and terminal (``varrho``) inventory penalties."""

    phi: float = 0.0
    varrho: float = 500.0

    def __post_init__(self):
        if self.phi < 0 or self.varrho < 0:
            raise ValueError(f"penalties must be nonnegative, got phi={self.phi}, varrho={self.varrho}")


@dataclass(frozen=True)
class NystromMatrices:
    """Forward (strictly lower) and adjoint (upper, with diagonal) matrices.

    Attributes
    ----------
    L : ndarray of shape (N, N)
        ``L[i, j]`` weights ``u(t_j)`` in the forward sum at ``t_i``, ``j < i``.
    M : ndarray of shape (N, N)
        ``M[i, j]`` weights ``u(t_j)`` in the adjoint sum at ``t_i``, ``j >= i``.
    L_terminal : ndarray of shape (N,)
        Forward weights for the terminal node ``t_N``.
    """

    L: np.ndarray
    M: np.ndarray
    L_terminal: np.ndarray = field(default=None)

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape != M.shape:
            raise ValueError(f"L and M must be matching square matrices, got {L.shape} and {M.shape}")
        term = np.zeros(L.shape[0]) if self.L_terminal is None else np.asarray(self.L_terminal, dtype=float)
        if term.shape != (L.shape[0],):
            raise ValueError("L_terminal must have length N")
        for name, arr in (("L", L), ("M", M), ("L_terminal", term)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def __add__(self, other: "NystromMatrices") -> "NystromMatrices":
        return NystromMatrices(self.L + other.L, self.M + other.M, self.L_terminal + other.L_terminal)

    def transposed_adjoint(self) -> "NystromMatrices":
        """Return a copy whose adjoint is the exact discrete transpose ``L.T``.

        The quadrature adjoint ``M`` approximates the continuous adjoint; the
        transpose is the adjoint of the discrete forward sum itself, which is
        what finite differences of a discretised functional see.
        """
        return NystromMatrices(self.L, self.L.T.copy(), self.L_terminal)

    def forward_full(self) -> np.ndarray:
        """``(N+1, N)`` forward matrix including the terminal row."""
        return np.vstack([self.L, self.L_terminal[None, :]])


def kernel_value(spec: KernelSpec, t) -> np.ndarray | float:
    """Evaluate ``kappa_inf + lam * t**(nu-1)`` for ``t > 0``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("kernel is singular at t <= 0")
    out = spec.kappa_inf + spec.lam * t_arr ** (spec.nu - 1.0)
    return float(out) if out.ndim == 0 else out


def cell_integrals(spec: KernelSpec, delta: float, n: int) -> np.ndarray:
    """``I_k = int_{k delta}^{(k+1) delta} K(s) ds`` for ``k = 0..n-1``.

    Integer offsets avoid round-off in differences of grid nodes.
    """
    k = np.arange(n + 1, dtype=float)
    edges = (k * delta) ** spec.nu
    return spec.kappa_inf * delta + spec.lam / spec.nu * np.diff(edges)


def build_nystrom(spec: KernelSpec, grid: TimeGrid) -> NystromMatrices:
    """Exact left-rectangle quadrature matrices of a convolution kernel.

    ``L[i, j] = int_{t_j}^{t_{j+1}} K(t_i - s) ds`` for ``j < i`` and
    ``M[i, j] = int_{t_j}^{t_{j+1}} K(s - t_i) ds`` for ``j >= i``.
    """
    N = grid.N
    cells = cell_integrals(spec, grid.delta, N)
    zeros = np.zeros(N)
    L = toeplitz(np.concatenate([[0.0], cells[:-1]]), zeros)
    M = toeplitz(np.concatenate([cells[:1], zeros[1:]]), cells)
    term = cells[N - 1 - np.arange(N)]
    return NystromMatrices(L, M, term)


def build_penalty_matrices(params: PenaltyKernelParams, grid: TimeGrid) -> NystromMatrices:
    """Quadrature of ``H(t, s) = (phi (T - t) + varrho) 1_{t > s}``.

    The kernel is evaluated at the outer time argument, so rows of ``L``
    and columns of ``M`` carry the weight ``phi (T - t) + varrho``.
    """
    N, d = grid.N, grid.delta
    t = grid.nodes
    weight = (params.phi * (grid.T - t) + params.varrho) * d
    i = np.arange(N)[:, None]
    j = np.arange(N)[None, :]
    L = np.where(j < i, weight[:N, None], 0.0)
    M = np.where(j >= i, weight[None, :N], 0.0)
    term = np.full(N, weight[N])
    return NystromMatrices(L, M, term)


def kernel_l2_constant(spec: KernelSpec, T: float) -> float:
    """``sup_{t <= T} int_0^t K(s)**2 ds`` in closed form.

    Raises
    ------
    AdmissibilityError
        If ``nu <= 1/2`` with a nonzero power-law part.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    lam, nu, k = spec.lam, spec.nu, spec.kappa_inf
    if lam > 0 and nu <= 0.5:
        raise AdmissibilityError(f"kernel not square integrable for nu={nu} <= 1/2")
    out = k * k * T
    if lam > 0:
        out += 2.0 * k * lam * T**nu / nu + lam * lam * T ** (2 * nu - 1) / (2 * nu - 1)
    return float(out)


def symmetrized_kernel_matrix(spec: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Discrete quadratic form of the kernel, ``(L + L.T)/2 + diag(M)``.

    Off-diagonal pairs are split evenly between the two triangles and the
    diagonal self-interaction carries the full cell integral ``M[i, i]``.
    """
    mats = build_nystrom(spec, grid)
    return 0.5 * (mats.L + mats.L.T) + np.diag(np.diag(mats.M))


def is_discrete_completely_monotone(spec: KernelSpec, times) -> bool:
    """Check nonnegativity, monotone decrease and convexity on sampled times."""
    t = np.sort(np.asarray(times, dtype=float))
    k = kernel_value(spec, t)
    k = np.atleast_1d(k)
    tol = 1e-12 * np.max(np.abs(k))
    ok = bool(np.all(k >= -tol))
    if k.size > 1:
        ok &= bool(np.all(np.diff(k) <= tol))
    if k.size > 2:
        # convexity for non-uniform samples: slopes nondecreasing
        slopes = np.diff(k) / np.diff(t)
        ok &= bool(np.all(np.diff(slopes) >= -tol))
    return ok
