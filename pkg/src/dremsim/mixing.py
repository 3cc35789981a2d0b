"""Mixing step: scalarize the matrix regression with the adjugate trick.

adj(M) M = det(M) I turns Y = M theta + W into n decoupled scalar equations
scalY_i = delta * theta_i + scalW_i with delta = det(M). The effective
regressor matrix is M = Phi for the forgetting scheme and M = I - Phi for
the decaying scheme. delta_dot comes from Jacobi's formula so the estimator
right-hand side stays a pure function of the current state.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .signals import FeDecay, Kreisselmeier
from .smallmat import _adjugate, _det, _trace_prod


@dataclass
class MixedSignals:
    scalY: np.ndarray
    delta: float
    scalW: np.ndarray
    delta_dot: float | None = None


@njit(cache=True)
def effective_matrix(Phi, fe):
    n = Phi.shape[0]
    if not fe:
        return Phi.copy()
    M = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            M[i, j] = (1.0 if i == j else 0.0) - Phi[i, j]
    return M


@njit(cache=True)
def mix_parts(Y, Phi, W, fe):
    M = effective_matrix(Phi, fe)
    adj = _adjugate(M)
    delta = _det(M)
    n = Y.size
    scalY = np.empty(n)
    scalW = np.empty(n)
    for i in range(n):
        sy = 0.0
        sw = 0.0
        for j in range(n):
            sy += adj[i, j] * Y[j]
            sw += adj[i, j] * W[j]
        scalY[i] = sy
        scalW[i] = sw
    return scalY, delta, scalW


@njit(cache=True)
def delta_dot_from(Phi, dPhi, fe):
    # d/dt det(M) = tr(adj(M) dM/dt); dM/dt = dPhi or -dPhi for M = I - Phi.
    M = effective_matrix(Phi, fe)
    adj = _adjugate(M)
    sign = -1.0 if fe else 1.0
    return sign * _trace_prod(adj, dPhi)


def _is_fe(scheme):
    if isinstance(scheme, FeDecay):
        return True
    if isinstance(scheme, Kreisselmeier):
        return False
    raise TypeError(f"unknown extension scheme {scheme!r}")


def mix(state, scheme):
    """Scalarized regression signals for the given extension scheme."""
    scalY, delta, scalW = mix_parts(state.Y, state.Phi, state.W, _is_fe(scheme))
    return MixedSignals(scalY=scalY, delta=float(delta), scalW=scalW)


def delta_dot(state, state_dot, scheme):
    """Time derivative of delta = det(M) by Jacobi's formula."""
    return float(delta_dot_from(state.Phi, state_dot.Phi, _is_fe(scheme)))
