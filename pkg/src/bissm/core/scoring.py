"""Residual covariance fitting and Mahalanobis anomaly scoring.

Residuals are one-step-ahead reconstruction errors
``e_t = x_t - D(F(E(x_{t-1}), u_{t-1}))``. Their covariance, fitted on
validation data, whitens test residuals into the anomaly score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from bissm.core.autodiff import Array
from bissm.core.evaluation import ScoreSeries
from bissm.core.exceptions import (
    FactorizationError,
    NonFiniteError,
    SeriesTooShortError,
    ShapeMismatchError,
)
from bissm.core.model import ModelParams, forward_residuals
from bissm.data.windows import WindowedDataset

logger = logging.getLogger(__name__)

RELATIVE_EPSILON = 1e-6
EPSILON_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """Residual covariance and its regularized inverse.

    Attributes:
        sigma: Empirical residual covariance (n x n)
        sigma_inv: Inverse of ``sigma + epsilon * I``
        mean_residual: Mean validation residual, kept for diagnostics only
        epsilon: Diagonal regularization that was added before inverting
    """

    sigma: Array
    sigma_inv: Array
    mean_residual: Array
    epsilon: float

    @property
    def dim(self) -> int:
        return int(self.sigma.shape[0])

    @classmethod
    def from_covariance(
        cls,
        sigma: Array,
        epsilon: float | None = None,
        mean_residual: Array | None = None,
    ) -> ErrorModel:
        """Invert ``sigma + epsilon * I`` through its Cholesky factor.

        With ``epsilon=None`` the regularization is 1e-6 * trace(sigma) / n,
        floored at 1e-12.
        """
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ShapeMismatchError("error_model", sigma.shape, sigma.shape[:1] * 2)
        n = sigma.shape[0]
        if epsilon is None:
            epsilon = max(RELATIVE_EPSILON * float(np.trace(sigma)) / n, EPSILON_FLOOR)
        regularized = sigma + epsilon * np.eye(n)
        try:
            factor = cho_factor(regularized, lower=True)
        except LinAlgError:
            raise FactorizationError("residual covariance", epsilon)
        inverse = cho_solve(factor, np.eye(n))
        return cls(
            sigma=sigma,
            sigma_inv=(inverse + inverse.T) / 2.0,
            mean_residual=np.zeros(n) if mean_residual is None else np.asarray(mean_residual),
            epsilon=float(epsilon),
        )

    @classmethod
    def from_residuals(cls, residuals: Array, epsilon: float | None = None) -> ErrorModel:
        """Covariance (denominator N-1) about the empirical mean, then invert."""
        if residuals.ndim != 2 or residuals.shape[0] < 2:
            raise SeriesTooShortError(2, residuals.shape[0] if residuals.ndim else 0, "residuals")
        bad_rows = np.flatnonzero(~np.isfinite(residuals).all(axis=1))
        if bad_rows.size:
            raise NonFiniteError("residuals", int(bad_rows[0]))
        mean = residuals.mean(axis=0)
        centered = residuals - mean
        sigma = centered.T @ centered / (residuals.shape[0] - 1)
        return cls.from_covariance((sigma + sigma.T) / 2.0, epsilon, mean)


def fit_error_model(val: WindowedDataset, params: ModelParams, epsilon: float | None = None) -> ErrorModel:
    """Fit the residual covariance on chronological validation windows.

    Raises:
        SeriesTooShortError: Fewer than two residuals
        NonFiniteError: A residual contains NaN or infinity (index is the
            residual's window position within ``val``)
    """
    residuals = forward_residuals(val, params)
    bad_rows = np.flatnonzero(~np.isfinite(residuals).all(axis=1))
    if bad_rows.size:
        raise NonFiniteError("residuals", int(bad_rows[0]) + 1)
    model = ErrorModel.from_residuals(residuals, epsilon)
    logger.info(
        f"Fitted error model on {residuals.shape[0]} residuals "
        f"(n={model.dim}, epsilon={model.epsilon:.3g})"
    )
    return model


def mahalanobis_many(residuals: Array, error_model: ErrorModel) -> NDArray[np.float64]:
    """sqrt(e^T Sigma^-1 e) for every row e of ``residuals``."""
    residuals = np.atleast_2d(residuals)
    if residuals.shape[1] != error_model.dim:
        raise ShapeMismatchError("mahalanobis", residuals.shape, error_model.sigma.shape)
    quadratic = np.einsum("ij,jk,ik->i", residuals, error_model.sigma_inv, residuals)
    return np.sqrt(np.maximum(quadratic, 0.0))


def mahalanobis(x_flat: Array, mu: Array, error_model: ErrorModel) -> float:
    """Anomaly score of one observed window against its prediction ``mu``."""
    x_flat = np.asarray(x_flat, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x_flat.shape != mu.shape:
        raise ShapeMismatchError("mahalanobis", x_flat.shape, mu.shape)
    return float(mahalanobis_many(x_flat - mu, error_model)[0])


def score_series(test: WindowedDataset, params: ModelParams, error_model: ErrorModel) -> ScoreSeries:
    """Score every window that has a predecessor; the first window is skipped."""
    residuals = forward_residuals(test, params)
    return ScoreSeries(
        time_index=test.end_times[1:],
        scores=mahalanobis_many(residuals, error_model),
        labels=test.labels[1:],
    )
