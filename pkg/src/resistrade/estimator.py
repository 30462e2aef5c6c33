"""Estimator-style front end to the iterative scheme."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import eval_pnl
from .foc import SchemeConfig, SchemeMatrices, iterate_scheme
from .kernels import KernelSpec, PenaltyKernelParams, TimeGrid
from .lsmc import LSMCExpectation, RegressionConfig
from .paths import PathSet
from .resistance import DEFAULT_DELTA, ResistanceFn
from .signals import OUParams, build_features


class OptimalTradingSolver(BaseEstimator):
    """Optimal trading rate for sampled alpha paths.

    ``fit`` takes alpha trajectories of shape ``(M, N+1)`` on ``[0, T]``.
    Identical rows are solved deterministically, otherwise conditional
    expectations are regressed on signal features.

    Parameters
    ----------
    T : float
    gamma, kappa_inf, lam, nu : float
        Slippage and kernel parameters.
    variant, c, delta, a
        Resistance function, see :class:`~resistrade.resistance.ResistanceFn`.
    phi, varrho : float
        Inventory penalties.
    X0 : float
    eps1, eps2, eps_bf : float
    max_outer : int
    mode : {"auto", "deterministic", "stochastic"}
    ridge_penalty : float
    signal_kappa : float
        Decay used by the exponential-integral feature.

    Attributes
    ----------
    u_, r_, f_ : ndarray of shape (M, N+1)
    e1_history_ : list of float
    n_iter_ : int
    converged_ : bool
    result_ : SolveResult
    """

    def __init__(self, T=1.0, gamma=0.2, kappa_inf=1.0, lam=0.467, nu=0.614, variant="power", c=2.0,
                 delta=DEFAULT_DELTA, a=0.0, phi=0.0, varrho=500.0, X0=0.0, eps1=1e-11, eps2=1e-16,
                 eps_bf=1e-30, max_outer=200, mode="auto", ridge_penalty=1e-5, signal_kappa=1.0):
        self.T = T
        self.gamma = gamma
        self.kappa_inf = kappa_inf
        self.lam = lam
        self.nu = nu
        self.variant = variant
        self.c = c
        self.delta = delta
        self.a = a
        self.phi = phi
        self.varrho = varrho
        self.X0 = X0
        self.eps1 = eps1
        self.eps2 = eps2
        self.eps_bf = eps_bf
        self.max_outer = max_outer
        self.mode = mode
        self.ridge_penalty = ridge_penalty
        self.signal_kappa = signal_kappa

    def _config(self, mode):
        return SchemeConfig(
            gamma=self.gamma, kernel=KernelSpec(self.kappa_inf, self.lam, self.nu),
            penalties=PenaltyKernelParams(self.phi, self.varrho),
            resistance=ResistanceFn(self.variant, c=self.c, delta=self.delta, a=self.a), X0=self.X0,
            eps1=self.eps1, eps2=self.eps2, eps_bf=self.eps_bf, max_outer=self.max_outer, mode=mode)

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] < 2:
            raise ValueError("need at least two time nodes per path")
        grid = TimeGrid(self.T, X.shape[1] - 1)
        alpha = PathSet(X, grid)
        mode = self.mode
        if mode == "auto":
            mode = "deterministic" if np.all(X == X[:1]) else "stochastic"
        cfg = self._config(mode)
        ce = None
        if mode == "stochastic":
            feats = build_features(alpha, OUParams(kappa=self.signal_kappa, sigma=0.0))
            ce = LSMCExpectation(feats, RegressionConfig(self.ridge_penalty))
        self.config_ = cfg
        self.grid_ = grid
        self.matrices_ = SchemeMatrices.build(cfg, grid)
        self.result_ = iterate_scheme(cfg, alpha, ce, self.matrices_)
        self.u_ = np.array(self.result_.u.values)
        self.r_ = np.array(self.result_.r.values)
        self.f_ = np.array(self.result_.f.values)
        self.e1_history_ = list(self.result_.e1_history)
        self.n_iter_ = self.result_.outer_iterations
        self.converged_ = self.result_.converged
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y=None):
        """Discrete objective of the fitted rate against alpha paths ``X``."""
        check_is_fitted(self, "u_")
        X = check_array(X)
        if X.shape != self.u_.shape:
            raise ValueError(f"expected shape {self.u_.shape}, got {X.shape}")
        return eval_pnl(self.result_.u, self.result_.r, PathSet(X, self.grid_), self.config_, self.matrices_)
