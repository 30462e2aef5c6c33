"""Ornstein-Uhlenbeck drift signal, its integrated alpha and regression features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .kernels import TimeGrid
from .paths import PathSet

FEATURE_NAMES = ("alpha", "cum_alpha", "exp_alpha")


@dataclass(frozen=True)
class OUParams:
    """``d mu = (eta - kappa mu) dt + sigma dW``, ``mu_0 = mu0``."""

    eta: float = 10.0
    kappa: float = 1.0
    sigma: float = 1.0
    mu0: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


def simulate_mu(params: OUParams, grid: TimeGrid, M: int, seed: int = 0) -> PathSet:
    """Sample ``M`` drift paths with the exact Gaussian transition."""
    if M < 1:
        raise ValueError("M must be >= 1")
    k, d = params.kappa, grid.delta
    decay = np.exp(-k * d)
    drift = params.eta / k * (1.0 - decay)
    sd = params.sigma * np.sqrt((1.0 - decay * decay) / (2.0 * k))
    mu = np.empty((M, grid.N + 1))
    mu[:, 0] = params.mu0
    if sd > 0:
        z = np.random.default_rng(seed).standard_normal((grid.N, M))
    else:
        z = np.zeros((grid.N, M))
    for i in range(grid.N):
        mu[:, i + 1] = mu[:, i] * decay + drift + sd * z[i]
    return PathSet(mu, grid)


def alpha_closed_form(params: OUParams, mu: PathSet) -> PathSet:
    """``alpha_t = E_t[int_t^T mu_s ds]`` evaluated pathwise."""
    k, eta = params.kappa, params.eta
    tau = mu.grid.T - mu.grid.nodes
    alpha = (mu.values - eta / k) * (1.0 - np.exp(-k * tau)) / k + eta / k * tau
    return PathSet(alpha, mu.grid)


def ou_conditional_mean(params: OUParams, mu_p, dt):
    """``E[mu_{t+dt} | mu_t]``."""
    e = np.exp(-params.kappa * dt)
    return np.asarray(mu_p) * e + params.eta / params.kappa * (1.0 - e)


def laguerre(x, degree: int):
    """Laguerre polynomial ``l_degree`` for degree 0, 1 or 2."""
    x = np.asarray(x, dtype=float)
    if degree == 0:
        return np.ones_like(x)
    if degree == 1:
        return 1.0 - x
    if degree == 2:
        return 1.0 - 2.0 * x + 0.5 * x * x
    raise ValueError("only degrees 0..2 are supported")


def laguerre_basis(Z, degree: int = 2) -> np.ndarray:
    """Intercept plus ``l_1..l_degree`` of every column of ``Z`` (no cross terms)."""
    Z = np.asarray(Z, dtype=float)
    cols = [np.ones(Z.shape[:-1] + (1,))]
    cols += [laguerre(Z, deg) for deg in range(1, degree + 1)]
    return np.concatenate(cols, axis=-1)


def standardize(F, floor: float = 1e-12):
    """Per-column cross-sectional standardisation along axis 0."""
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale = np.where(scale < floor, 1.0, scale)
    return (F - mean) / scale, mean, scale


@dataclass(frozen=True)
class FeatureSet:
    """Raw signal features and their Laguerre expansion.

    Attributes
    ----------
    raw : ndarray of shape (M, N+1, 3)
        ``alpha``, its running integral and its exponentially weighted integral.
    basis : ndarray of shape (M, N+1, 1 + 3*degree)
        Intercept followed by Laguerre polynomials of the per-time
        standardised raw features.
    """

    raw: np.ndarray
    basis: np.ndarray
    grid: TimeGrid

    @property
    def n_basis(self) -> int:
        return self.basis.shape[-1]


def raw_features(alpha: PathSet, kappa: float) -> np.ndarray:
    """Running integrals by left-rectangle sums, causal at every node."""
    a = alpha.values
    d = alpha.grid.delta
    M, n = a.shape
    cum = np.zeros((M, n))
    cum[:, 1:] = np.cumsum(a[:, :-1], axis=1) * d
    ex = np.zeros((M, n))
    decay = np.exp(-kappa * d)
    for i in range(n - 1):
        ex[:, i + 1] = decay * ex[:, i] + a[:, i] * d
    return np.stack([a, cum, ex], axis=-1)


def build_features(alpha: PathSet, params: OUParams, degree: int = 2, standardize_features: bool = True) -> FeatureSet:
    """Signal features at every node and their Laguerre expansion."""
    raw = raw_features(alpha, params.kappa)
    Z = raw
    if standardize_features:
        # per time node across paths
        Z = np.empty_like(raw)
        for i in range(raw.shape[1]):
            Z[:, i], _, _ = standardize(raw[:, i])
    return FeatureSet(raw, laguerre_basis(Z, degree), alpha.grid)


class LaguerreFeatures(TransformerMixin, BaseEstimator):
    """Standardise columns then expand each in Laguerre polynomials.

    Parameters
    ----------
    degree : int, default 2
    standardize : bool, default True
    """

    def __init__(self, degree=2, standardize=True):
        self.degree = degree
        self.standardize = standardize

    def fit(self, X, y=None):
        X = check_array(X)
        if self.standardize:
            _, self.mean_, self.scale_ = standardize(X)
        else:
            self.mean_, self.scale_ = np.zeros(X.shape[1]), np.ones(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return laguerre_basis((X - self.mean_) / self.scale_, self.degree)
