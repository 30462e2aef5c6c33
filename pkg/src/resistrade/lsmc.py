"""Ridge least-squares Monte Carlo estimates of conditional expectations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .signals import FeatureSet


class InsufficientPathsError(ValueError):
    """Fewer samples than regressors."""


@dataclass(frozen=True)
class RegressionConfig:
    ridge_penalty: float = 1e-5
    min_paths: int = 0

    def __post_init__(self):
        if self.ridge_penalty < 0:
            raise ValueError(f"ridge_penalty must be nonnegative, got {self.ridge_penalty}")


@dataclass(frozen=True)
class RidgePredictor:
    """Fitted linear predictor ``X @ coef + intercept``."""

    coef: np.ndarray
    intercept: float = 0.0


def _gram_solve(X, rhs, penalty):
    G = X.T @ X + penalty * np.eye(X.shape[1])
    try:
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular regression system (penalty={penalty})") from exc


def fit_cond_exp(X, y, penalty: float = 1e-5, fit_intercept: bool = False) -> RidgePredictor:
    """Ridge fit ``beta = (X'X + penalty I)^{-1} X'y``.

    With ``fit_intercept`` the columns are centred first so the intercept
    is left unpenalised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"expected X of shape (M, B) and y of shape (M,), got {X.shape} and {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("regression inputs must be finite")
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    M, B = X.shape
    if M < B + int(fit_intercept):
        raise InsufficientPathsError(f"{M} samples for {B} regressors")
    if not fit_intercept:
        return RidgePredictor(_gram_solve(X, X.T @ y, penalty), 0.0)
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    beta = _gram_solve(Xc, Xc.T @ (y - ym), penalty)
    return RidgePredictor(beta, float(ym - xm @ beta))


def predict_path_conditional(predictor: RidgePredictor, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != predictor.coef.shape[0]:
        raise ValueError(f"feature width {X.shape[-1]} does not match {predictor.coef.shape[0]} coefficients")
    return X @ predictor.coef + predictor.intercept


def normal_equation_residual(X, y, beta, penalty) -> float:
    """``||(X'X + penalty I) beta - X'y|| / ||X'y||`` (0 when ``X'y = 0``)."""
    X = np.asarray(X, dtype=float)
    Xty = X.T @ np.asarray(y, dtype=float)
    res = X.T @ (X @ beta) + penalty * beta - Xty
    scale = np.linalg.norm(Xty)
    return float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))


class RidgeConditionalExpectation(RegressorMixin, BaseEstimator):
    """Ridge regressor used as a cross-sectional conditional expectation.

    Parameters
    ----------
    penalty : float, default 1e-5
    fit_intercept : bool, default False
    """

    def __init__(self, penalty=1e-5, fit_intercept=False):
        self.penalty = penalty
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        pred = fit_cond_exp(X, y, self.penalty, self.fit_intercept)
        self.coef_ = pred.coef
        self.intercept_ = pred.intercept
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return predict_path_conditional(RidgePredictor(self.coef_, self.intercept_), X)


class LSMCExpectation:
    """Conditional expectations ``E_{t_p}[.]`` by per-time ridge regression.

    For each conditioning node ``p`` the basis (without intercept) is
    centred across paths; the smoother ``P_p = D_p R_p`` with
    ``D_p = [1, Bc_p]`` and ``R_p = [1'/M ; (Bc_p'Bc_p + eta I)^{-1} Bc_p']``
    is factored once and reused for every target, so regressing a linear
    combination of targets equals combining per-target regressions.

    Parameters
    ----------
    features : FeatureSet
    config : RegressionConfig
    """

    mode = "regression"

    def __init__(self, features: FeatureSet, config: RegressionConfig | None = None):
        self.config = RegressionConfig() if config is None else config
        B = features.basis[:, :-1, :]  # quadrature nodes only
        M, N, k = B.shape
        if M < max(k, self.config.min_paths):
            raise InsufficientPathsError(f"{M} paths for {k} regressors")
        eta = self.config.ridge_penalty
        Bc = B[:, :, 1:] - B[:, :, 1:].mean(axis=0)
        self.design = np.concatenate([np.ones((M, N, 1)), Bc], axis=-1)
        S = np.empty((N, k - 1, M))
        self._grams = np.empty((N, k - 1, k - 1))
        for p in range(N):
            X = Bc[:, p]
            G = X.T @ X + eta * np.eye(k - 1)
            self._grams[p] = G
            try:
                S[p] = np.linalg.solve(G, X.T)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"singular regression system at node {p}") from exc
        self.operators = np.concatenate([np.full((N, 1, M), 1.0 / M), S], axis=1)
        self.M, self.N, self.n_basis = M, N, k
        self.max_residual_ = 0.0
        self.n_fits_ = 0

    def coefficients(self, p: int, y) -> np.ndarray:
        """Regression coefficients ``[intercept, beta]`` of ``y`` at node ``p``."""
        if not 0 <= p < self.N:
            raise IndexError(f"no regression fitted at node {p}")
        coef = self.operators[p] @ np.asarray(y, dtype=float)
        self._record(p, y, coef)
        return coef

    def _record(self, p, y, coef):
        X = self.design[:, p, 1:]
        Xty = X.T @ y
        res = self._grams[p] @ coef[1:] - Xty
        scale = np.linalg.norm(Xty)
        rel = np.linalg.norm(res) / scale if scale > 1e-300 else np.linalg.norm(res)
        self.max_residual_ = max(self.max_residual_, float(rel))
        self.n_fits_ += 1

    def project(self, p: int, y) -> np.ndarray:
        """Estimate ``E_{t_p}[y]`` on every path."""
        return self.design[:, p] @ self.coefficients(p, y)

    def project_columns(self, Y) -> np.ndarray:
        """Column ``p`` of the result is ``project(p, Y[:, p])``."""
        Y = np.asarray(Y, dtype=float)
        coef = np.einsum("jam,mj->ja", self.operators, Y)
        for p in range(self.N):
            self._record(p, Y[:, p], coef[p])
        return np.einsum("mjb,jb->mj", self.design, coef)
