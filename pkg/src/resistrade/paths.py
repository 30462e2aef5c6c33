"""Path sets on a time grid and discretised Volterra operators acting on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import NystromMatrices, TimeGrid


@dataclass(frozen=True)
class PathSet:
    """``M`` sample trajectories of a scalar process on ``grid``.

    ``values`` has shape ``(M, N + 1)``; column ``i`` is the value at ``t_i``.
    Left-rectangle sums only use columns ``0..N-1``.
    """

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.N + 1:
            raise ValueError(f"values must have shape (M, {self.grid.N + 1}), got {np.shape(self.values)}")
        if v.shape[0] < 1:
            raise ValueError("at least one path is required")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def body(self) -> np.ndarray:
        """Quadrature-node values, shape ``(M, N)``."""
        return self.values[:, :-1]

    @classmethod
    def zeros(cls, grid: TimeGrid, M: int = 1) -> "PathSet":
        return cls(np.zeros((M, grid.N + 1)), grid)

    @classmethod
    def from_function(cls, fn, grid: TimeGrid, M: int = 1) -> "PathSet":
        """Evaluate a deterministic function of time on every path."""
        row = np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.N + 1)
        return cls(np.tile(row, (M, 1)), grid)

    def with_body(self, body: np.ndarray, terminal=None) -> "PathSet":
        """New path set on the same grid from node values and a terminal column."""
        body = np.asarray(body, dtype=float)
        if terminal is None:
            terminal = body[:, -1]
        return PathSet(np.column_stack([body, terminal]), self.grid)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)


class DeterministicExpectation:
    """Conditional expectation for deterministic paths: the identity."""

    mode = "deterministic"

    def project(self, p: int, y: np.ndarray) -> np.ndarray:
        """Estimate ``E_{t_p}[y]`` per path."""
        return np.asarray(y, dtype=float)

    def project_columns(self, Y: np.ndarray) -> np.ndarray:
        """Apply ``project(p, Y[:, p])`` to every column ``p``."""
        return np.asarray(Y, dtype=float)


def _check(L: NystromMatrices, u: PathSet):
    if L.N != u.grid.N:
        raise ValueError(f"matrix size {L.N} does not match grid size {u.grid.N}")


def apply_forward(L: NystromMatrices, u: PathSet) -> PathSet:
    """``out[m, i] = sum_{j<i} L[i, j] u[m, j]``, terminal node included."""
    _check(L, u)
    body = u.body @ L.L.T
    return PathSet(np.column_stack([body, u.body @ L.L_terminal]), u.grid)


def apply_adjoint(L: NystromMatrices, u: PathSet, ce=None) -> PathSet:
    """``out[m, i] = M[i, i] u[m, i] + E_{t_i}[sum_{j>i} M[i, j] u[m, j]]``.

    The diagonal term is known at ``t_i`` and bypasses ``ce``. The terminal
    value is zero (empty future).
    """
    _check(L, u)
    ce = DeterministicExpectation() if ce is None else ce
    ub = u.body
    diag = np.diag(L.M)
    future = ub @ np.triu(L.M, 1).T
    body = diag * ub + ce.project_columns(future)
    return PathSet(np.column_stack([body, np.zeros(u.M)]), u.grid)


def inner_product(f: PathSet, g: PathSet) -> float:
    """``(1/M) sum_m delta sum_{i<N} f[m, i] g[m, i]``."""
    if f.values.shape != g.values.shape:
        raise ValueError(f"shape mismatch {f.values.shape} vs {g.values.shape}")
    return float(f.grid.delta * np.sum(f.body * g.body) / f.M)


def l2_norm(f: PathSet) -> float:
    return float(np.sqrt(inner_product(f, f)))
