"""Identification laws on the scalarized regression.

The gradient law drives theta_hat with the instantaneous regression error.
The averaging law filters kappa_hat * scalY through a growing-window average
1/(t + k_i); kappa_hat tracks 1/delta through its own ODE, whose delta_dot
feed-through makes the exact inverse an invariant solution. Both are pure
right-hand sides; the caller owns integration.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class EstimatorState:
    theta_hat: np.ndarray
    kappa_hat: float | None
    t: float

    def __post_init__(self):
        self.theta_hat = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))


@njit(cache=True)
def gradient_deriv(theta_hat, scalY, delta, gamma):
    n = theta_hat.size
    d = np.empty(n)
    for i in range(n):
        d[i] = -gamma * delta * (delta * theta_hat[i] - scalY[i])
    return d


@njit(cache=True)
def kappa_deriv(kappa_hat, delta, delta_dot, gamma):
    return -gamma * delta * (delta * kappa_hat - 1.0) - delta_dot * kappa_hat * kappa_hat


@njit(cache=True)
def averaging_theta_deriv(theta_hat, kappa_hat, scalY, t, k):
    n = theta_hat.size
    d = np.empty(n)
    for i in range(n):
        d[i] = -(theta_hat[i] - kappa_hat * scalY[i]) / (t + k[i])
    return d


def gradient_rhs(state, mixed, gamma):
    """Gradient-law derivative; frozen whenever delta = 0."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    d = gradient_deriv(state.theta_hat, mixed.scalY, mixed.delta, float(gamma))
    return EstimatorState(theta_hat=d, kappa_hat=None, t=1.0)


def kappa_rhs(kappa_hat, mixed, gamma):
    """Derivative of the inverse-regressor estimate kappa_hat."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if mixed.delta_dot is None:
        raise ValueError("mixed.delta_dot is required for the kappa dynamics")
    return float(kappa_deriv(float(kappa_hat), mixed.delta, mixed.delta_dot, float(gamma)))


def averaging_rhs(state, mixed, gamma, k):
    """Averaging-law derivative (theta_hat and kappa_hat together).

    state.t is elapsed time since the start of the run, so the averaging
    window 1/(t + k_i) is bounded by 1/k_i from below at t = 0.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if np.any(k <= 0):
        raise ValueError("k_i must be > 0")
    if k.size != state.theta_hat.size:
        raise ValueError(f"k has {k.size} entries, state has {state.theta_hat.size}")
    dtheta = averaging_theta_deriv(
        state.theta_hat, float(state.kappa_hat), mixed.scalY, float(state.t), k
    )
    dkappa = kappa_rhs(state.kappa_hat, mixed, gamma)
    return EstimatorState(theta_hat=dtheta, kappa_hat=dkappa, t=1.0)
