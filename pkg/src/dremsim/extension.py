"""Regressor extension schemes: the filtered matrix regression (Y, Phi, W).

Both schemes expose the same state shape so the mixing step and the
estimation laws are scheme-agnostic. W is integrated alongside Y and Phi
even though it is unmeasurable in practice: the simulator knows w(t) and the
averaging-condition checks need the ground-truth mixed disturbance.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .signals import FeDecay, Kreisselmeier


@dataclass
class ExtensionState:
    Y: np.ndarray
    Phi: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.Y = np.atleast_1d(np.asarray(self.Y, dtype=float))
        self.Phi = np.asarray(self.Phi, dtype=float)
        self.W = np.atleast_1d(np.asarray(self.W, dtype=float))
        n = self.Y.size
        if self.Phi.shape != (n, n) or self.W.size != n:
            raise ValueError(
                f"inconsistent extension state: Y{self.Y.shape} Phi{self.Phi.shape} W{self.W.shape}"
            )

    @classmethod
    def initial(cls, n, scheme):
        phi0 = np.eye(n) if isinstance(scheme, FeDecay) else np.zeros((n, n))
        return cls(np.zeros(n), phi0, np.zeros(n))


@njit(cache=True)
def kreisselmeier_derivs(Y, Phi, W, phi, y, w, l):
    n = Y.size
    dY = np.empty(n)
    dW = np.empty(n)
    dPhi = np.empty((n, n))
    for i in range(n):
        dY[i] = -l * Y[i] + phi[i] * y
        dW[i] = -l * W[i] + phi[i] * w
        for j in range(n):
            dPhi[i, j] = -l * Phi[i, j] + phi[i] * phi[j]
    return dY, dPhi, dW


@njit(cache=True)
def fe_decay_derivs(Y, Phi, W, phi, y, w, mu):
    # W carries the same mu gain as Y so that Y = (I - Phi) theta + W stays
    # an exact solution identity of the filter equations.
    n = Y.size
    dY = np.empty(n)
    dW = np.empty(n)
    dPhi = np.empty((n, n))
    py = 0.0
    pw = 0.0
    for j in range(n):
        py += phi[j] * Y[j]
        pw += phi[j] * W[j]
    for i in range(n):
        dY[i] = -mu * phi[i] * (py - y)
        dW[i] = -mu * phi[i] * pw + mu * phi[i] * w
        for j in range(n):
            pc = 0.0
            for m in range(n):
                pc += phi[m] * Phi[m, j]
            dPhi[i, j] = -mu * phi[i] * pc
    return dY, dPhi, dW


def _check_args(state, phi, rate, rate_name):
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.size != state.Y.size:
        raise ValueError(f"phi has {phi.size} entries, state has {state.Y.size}")
    if rate <= 0:
        raise ValueError(f"{rate_name} must be > 0, got {rate}")
    return phi


def kreisselmeier_rhs(state, phi, y, w, l):
    """Derivative of the exponential-forgetting extension state."""
    phi = _check_args(state, phi, l, "l")
    dY, dPhi, dW = kreisselmeier_derivs(state.Y, state.Phi, state.W, phi, float(y), float(w), float(l))
    return ExtensionState(dY, dPhi, dW)


def fe_extension_rhs(state, phi, y, w, mu):
    """Derivative of the decaying extension state (Phi starts at identity)."""
    phi = _check_args(state, phi, mu, "mu")
    dY, dPhi, dW = fe_decay_derivs(state.Y, state.Phi, state.W, phi, float(y), float(w), float(mu))
    return ExtensionState(dY, dPhi, dW)


def extension_rhs(state, phi, y, w, scheme):
    """Scheme-dispatching derivative."""
    if isinstance(scheme, Kreisselmeier):
        return kreisselmeier_rhs(state, phi, y, w, scheme.l)
    if isinstance(scheme, FeDecay):
        return fe_extension_rhs(state, phi, y, w, scheme.mu)
    raise TypeError(f"unknown extension scheme {scheme!r}")
