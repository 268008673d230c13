"""Unscented Kalman filtering with learned forward and backward dynamics.

The forward pass filters states in time order with the forward transition
F. For every t, a single backward step then starts from the forward
posterior at t+1, predicts back to t with B, and updates against the
observation at t. Decoding the two posterior means gives the forward and
backward reconstructions of x_t.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from bissm.core.autodiff import Array
from bissm.core.exceptions import (
    FactorizationError,
    SeriesTooShortError,
    ShapeMismatchError,
)
from bissm.core.model import (
    ModelParams,
    apply_transition,
    decode_states,
    encode_controls,
    encode_windows,
)
from bissm.data.windows import WindowedDataset
from bissm.models.reports import SmoothingStats

logger = logging.getLogger(__name__)

INITIAL_JITTER = 1e-9
MAX_JITTER = 1e-3
JITTER_GROWTH = 10.0


class Direction(str, Enum):
    """Which pass produced a state estimate."""

    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean and covariance of the hidden state."""

    mean: Array
    cov: Array
    direction: Direction = Direction.FORWARD

    def __post_init__(self) -> None:
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ShapeMismatchError("gaussian_state", self.mean.shape, self.cov.shape)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


@dataclass(frozen=True, eq=False)
class NoiseEstimates:
    """Process noise per direction and observation noise covariances."""

    q_forward: Array
    q_backward: Array
    r: Array


@dataclass(frozen=True)
class UnscentedScaling:
    """Scaled unscented transform parameters."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def spread(self, n: int) -> float:
        """n + lambda, the factor applied to the covariance before the square root."""
        return self.alpha**2 * (n + self.kappa)


@dataclass(frozen=True, eq=False)
class SigmaPointSet:
    """2n+1 points with their mean and covariance weights."""

    points: Array
    mean_weights: Array
    cov_weights: Array
    scaling: UnscentedScaling

    def mean(self) -> Array:
        return _weighted_mean(self.points, self.mean_weights)

    def covariance(self) -> Array:
        return _weighted_cov(self.points, self.mean(), self.cov_weights)


class Dynamics(Protocol):
    """State transition and observation maps used by the filter.

    ``forward(states, t)`` applies F with the control window at index t and
    ``backward(states, t)`` applies B likewise; both map (k, n) to (k, n).
    ``observe`` maps (k, n) states to (k, m) flattened windows.
    """

    def initial_mean(self) -> Array: ...

    def forward(self, states: Array, t: int) -> Array: ...

    def backward(self, states: Array, t: int) -> Array: ...

    def observe(self, states: Array) -> Array: ...


class LearnedDynamics:
    """The trained networks as filter dynamics over one windowed series."""

    def __init__(self, params: ModelParams, windows: WindowedDataset):
        self.params = params
        self.windows = windows
        self._u_plus, self._u_minus = encode_controls(params, windows.controls)

    def initial_mean(self) -> Array:
        return encode_windows(self.params, self.windows.signals[:1])[0]

    def _apply(self, states: Array, direction: Array) -> Array:
        return apply_transition(self.params, states, np.tile(direction, (states.shape[0], 1)))

    def forward(self, states: Array, t: int) -> Array:
        return self._apply(states, self._u_plus[t])

    def backward(self, states: Array, t: int) -> Array:
        return self._apply(states, self._u_minus[t])

    def observe(self, states: Array) -> Array:
        return decode_states(self.params, states, self.windows.xl)


# =============================================================================
# Numerical helpers
# =============================================================================


def symmetrize(matrix: Array) -> Array:
    return (matrix + matrix.T) / 2.0


def cholesky_with_jitter(matrix: Array, what: str) -> Array:
    """Lower Cholesky factor, adding 1e-9*I and growing it x10 up to 1e-3 on failure."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    jitter = INITIAL_JITTER
    identity = np.eye(matrix.shape[0])
    while jitter <= MAX_JITTER * (1 + 1e-12):
        try:
            factor = np.linalg.cholesky(matrix + jitter * identity)
            logger.debug(f"Cholesky of {what} needed jitter {jitter:g}")
            return factor
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise FactorizationError(what, MAX_JITTER)


def _weighted_mean(points: Array, weights: Array) -> Array:
    # Offsets from the centre point keep the large negative centre weight benign
    centre = points[0]
    return centre + weights @ (points - centre)


def _weighted_cov(points: Array, mean: Array, weights: Array) -> Array:
    deviations = points - mean
    return symmetrize((deviations * weights[:, None]).T @ deviations)


def _spd_solve(matrix: Array, rhs: Array, what: str) -> Array:
    """Solve matrix @ X = rhs for symmetric positive definite ``matrix``."""
    try:
        return cho_solve(cho_factor(matrix, lower=True), rhs)
    except LinAlgError:
        factor = cholesky_with_jitter(matrix, what)
        return cho_solve((factor, True), rhs)


# =============================================================================
# Unscented transform and filter steps
# =============================================================================


def sigma_points(state: GaussianState, scaling: UnscentedScaling | None = None) -> SigmaPointSet:
    """Scaled unscented sigma points: mean, then mean +/- columns of sqrt((n+lambda) P)."""
    scaling = scaling or UnscentedScaling()
    n = state.dim
    spread = scaling.spread(n)
    lam = spread - n
    if not np.any(state.cov):
        root = np.zeros((n, n))
    else:
        root = np.sqrt(spread) * cholesky_with_jitter(symmetrize(state.cov), "state covariance")
    points = np.vstack([state.mean, state.mean + root.T, state.mean - root.T])

    mean_weights = np.full(2 * n + 1, 1.0 / (2.0 * spread))
    cov_weights = mean_weights.copy()
    mean_weights[0] = lam / spread
    cov_weights[0] = lam / spread + (1.0 - scaling.alpha**2 + scaling.beta)
    return SigmaPointSet(
        points=points, mean_weights=mean_weights, cov_weights=cov_weights, scaling=scaling
    )


def unscented_transform(
    sigma: SigmaPointSet, fn: Callable[[Array], Array]
) -> tuple[Array, Array, Array]:
    """Propagate sigma points through ``fn``; returns (mean, cov, propagated points)."""
    propagated = fn(sigma.points)
    mean = _weighted_mean(propagated, sigma.mean_weights)
    return mean, _weighted_cov(propagated, mean, sigma.cov_weights), propagated


def _predict(
    prior: GaussianState,
    transition: Callable[[Array], Array],
    process_noise: Array,
    scaling: UnscentedScaling,
) -> tuple[Array, Array]:
    mean, cov, _ = unscented_transform(sigma_points(prior, scaling), transition)
    return mean, symmetrize(cov + process_noise)


def _update(
    mean: Array,
    cov: Array,
    observe: Callable[[Array], Array],
    observation_noise: Array,
    observation: Array,
    scaling: UnscentedScaling,
    direction: Direction,
) -> GaussianState:
    predicted = GaussianState(mean, cov, direction)
    sigma = sigma_points(predicted, scaling)
    z_mean, z_cov, z_points = unscented_transform(sigma, observe)
    if observation.shape != z_mean.shape:
        raise ShapeMismatchError("ukf_update", z_mean.shape, observation.shape)
    innovation_cov = symmetrize(z_cov + observation_noise)
    cross_cov = ((sigma.points - mean) * sigma.cov_weights[:, None]).T @ (z_points - z_mean)
    gain = _spd_solve(innovation_cov, cross_cov.T, "innovation covariance").T
    posterior_mean = mean + gain @ (observation - z_mean)
    posterior_cov = symmetrize(cov - gain @ innovation_cov @ gain.T)
    return GaussianState(posterior_mean, posterior_cov, direction)


def ukf_forward_step(
    prev: GaussianState,
    dynamics: Dynamics,
    control_index: int,
    x_obs: Array,
    noise: NoiseEstimates,
    scaling: UnscentedScaling | None = None,
) -> GaussianState:
    """Forward posterior at t from the posterior at t-1.

    ``control_index`` selects u_{t-1}; ``x_obs`` is the flattened window x_t.
    """
    scaling = scaling or UnscentedScaling()
    mean, cov = _predict(
        prev, lambda s: dynamics.forward(s, control_index), noise.q_forward, scaling
    )
    return _update(mean, cov, dynamics.observe, noise.r, x_obs, scaling, Direction.FORWARD)


def ukf_backward_step(
    fwd_next: GaussianState,
    dynamics: Dynamics,
    control_index: int,
    x_obs: Array,
    noise: NoiseEstimates,
    scaling: UnscentedScaling | None = None,
) -> GaussianState:
    """Backward posterior at t from the forward posterior at t+1.

    ``control_index`` selects u_{t+1}; ``x_obs`` is the flattened window x_t.
    """
    scaling = scaling or UnscentedScaling()
    mean, cov = _predict(
        fwd_next, lambda s: dynamics.backward(s, control_index), noise.q_backward, scaling
    )
    return _update(mean, cov, dynamics.observe, noise.r, x_obs, scaling, Direction.BACKWARD)


# =============================================================================
# Noise estimation and smoothing sweep
# =============================================================================


def _covariance(residuals: Array, what: str) -> Array:
    if residuals.shape[0] < 2:
        raise SeriesTooShortError(2, residuals.shape[0], f"{what} samples")
    centered = residuals - residuals.mean(axis=0)
    return symmetrize(centered.T @ centered / (residuals.shape[0] - 1))


def estimate_noise(val: WindowedDataset, params: ModelParams) -> NoiseEstimates:
    """Residual covariances of F, B and D over validation windows.

    Q_f from E(x_t) - F(E(x_{t-1}), u_{t-1}), Q_b from
    E(x_t) - B(E(x_{t+1}), u_{t+1}) and R from x_t - D(E(x_t)).
    """
    if len(val) < 3:
        raise SeriesTooShortError(3, len(val), "windows")
    states = encode_windows(params, val.signals)
    u_plus, u_minus = encode_controls(params, val.controls)
    q_forward = _covariance(states[1:] - apply_transition(params, states[:-1], u_plus[:-1]), "Q_f")
    q_backward = _covariance(
        states[:-1] - apply_transition(params, states[1:], u_minus[1:]), "Q_b"
    )
    r = _covariance(val.signal_flat() - decode_states(params, states, val.xl), "R")
    return NoiseEstimates(q_forward=q_forward, q_backward=q_backward, r=r)


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    """Forward and backward reconstructions of the last step of every window.

    Value arrays are (N, d_x); the backward reconstruction of the final
    window is NaN because it has no successor.
    """

    time_index: np.ndarray
    observation: Array
    forward_recon: Array
    backward_recon: Array
    ground_truth: Array | None
    forward_states: list[GaussianState]
    backward_states: list[GaussianState]
    stats: SmoothingStats | None


def smoothing_stats(
    ground_truth: Array,
    forward_recon: Array,
    backward_recon: Array,
    transition_mask: NDArray[np.bool_] | None = None,
) -> SmoothingStats:
    """Squared errors over the steps where both reconstructions exist."""
    usable = len(ground_truth) - 1
    forward_err = np.mean((forward_recon[:usable] - ground_truth[:usable]) ** 2, axis=1)
    backward_err = np.mean((backward_recon[:usable] - ground_truth[:usable]) ** 2, axis=1)
    transition_forward = transition_backward = None
    if transition_mask is not None and transition_mask[:usable].any():
        selected = transition_mask[:usable]
        transition_forward = float(forward_err[selected].mean())
        transition_backward = float(backward_err[selected].mean())
    return SmoothingStats(
        forward_median=float(np.median(forward_err)),
        backward_median=float(np.median(backward_err)),
        forward_mean=float(forward_err.mean()),
        backward_mean=float(backward_err.mean()),
        transition_forward_mean=transition_forward,
        transition_backward_mean=transition_backward,
        n_samples=usable,
    )


def smooth_series(
    test: WindowedDataset,
    dynamics: Dynamics,
    noise: NoiseEstimates,
    ground_truth: Array | None = None,
    transition_mask: NDArray[np.bool_] | None = None,
    scaling: UnscentedScaling | None = None,
) -> SmoothingResult:
    """Forward sweep over all windows, then one backward step per window.

    The forward filter starts at mean E(x_0) with covariance Q_f.
    ``ground_truth`` holds the noiseless values at each window's end (N, d_x);
    when given, error statistics are computed.
    """
    n_windows = len(test)
    if n_windows < 2:
        raise SeriesTooShortError(2, n_windows, "windows")
    if ground_truth is not None and ground_truth.shape != (n_windows, test.signal_dim):
        raise ShapeMismatchError("smooth_series", (n_windows, test.signal_dim), ground_truth.shape)
    scaling = scaling or UnscentedScaling()
    observations = test.signal_flat()

    forward_states = [GaussianState(dynamics.initial_mean(), noise.q_forward.copy())]
    for t in range(1, n_windows):
        forward_states.append(
            ukf_forward_step(forward_states[-1], dynamics, t - 1, observations[t], noise, scaling)
        )
    logger.info(f"Forward filtering finished over {n_windows} windows")

    backward_states = [
        ukf_backward_step(forward_states[t + 1], dynamics, t + 1, observations[t], noise, scaling)
        for t in range(n_windows - 1)
    ]

    d_x = test.signal_dim
    forward_recon = dynamics.observe(np.array([s.mean for s in forward_states]))[:, -d_x:]
    backward_recon = np.full_like(forward_recon, np.nan)
    backward_recon[:-1] = dynamics.observe(np.array([s.mean for s in backward_states]))[:, -d_x:]

    stats = None
    if ground_truth is not None:
        stats = smoothing_stats(ground_truth, forward_recon, backward_recon, transition_mask)
        logger.info(
            f"Median squared error forward={stats.forward_median:.3g} "
            f"backward={stats.backward_median:.3g}"
        )

    return SmoothingResult(
        time_index=test.end_times,
        observation=test.signals[:, -1, :],
        forward_recon=forward_recon,
        backward_recon=backward_recon,
        ground_truth=ground_truth,
        forward_states=forward_states,
        backward_states=backward_states,
        stats=stats,
    )
