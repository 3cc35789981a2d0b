"""State observation for plants that are linear in the unknown parameters.

A bank of stable filters (chi, P, Omega, PhiK) driven by the measured output
turns the reconstruction problem into a scalar linear regression whose
parameters are the plant's unknown theta; any estimation law running on that
regression then yields the state estimate chi + P + Omega theta_hat. delta_f
is simulator-only bookkeeping: it carries the filtered output disturbance so
the regression's ground-truth disturbance w is known exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .signals import AveragingLaw, FeDecay, GradientLaw, Kreisselmeier, SignalExpr
from .smallmat import LyapunovError, solve_lyapunov


@dataclass(frozen=True)
class ConstantMap:
    """(y, u) -> fixed matrix/vector, independent of both arguments."""

    matrix: tuple

    def __init__(self, matrix):
        object.__setattr__(self, "matrix", np.asarray(matrix, dtype=float))

    def __call__(self, y, u):
        return self.matrix


@dataclass(frozen=True)
class InputLinearMap:
    """(y, u) -> matrix @ u, linear in the control input."""

    matrix: tuple

    def __init__(self, matrix):
        object.__setattr__(self, "matrix", np.asarray(matrix, dtype=float))

    def __call__(self, y, u):
        return self.matrix @ np.atleast_1d(u)


@dataclass
class PlantSpec:
    """Plant x' = A x + phi(y, u) + G(y, u) theta with y = C x + delta(t)."""

    A: np.ndarray
    C: np.ndarray
    K: np.ndarray
    phi_map: object
    G_map: object
    theta: np.ndarray
    delta: list  # SignalExpr per output channel
    u: list  # SignalExpr per input channel
    x0: np.ndarray
    chi0: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.K = np.asarray(self.K, dtype=float)
        if self.K.ndim == 1:
            self.K = self.K.reshape(-1, 1)
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float)
        n = self.A.shape[0]
        p = self.C.shape[0]
        if self.A.shape != (n, n) or self.C.shape[1] != n:
            raise ValueError(f"inconsistent A {self.A.shape} / C {self.C.shape}")
        if self.K.shape != (n, p):
            raise ValueError(f"K must be {n}x{p}, got {self.K.shape}")
        if self.x0.size != n:
            raise ValueError(f"x0 must have {n} entries")
        if len(self.delta) != p:
            raise ValueError(f"delta must have {p} channels")
        if self.chi0 is None:
            self.chi0 = np.zeros(n)
        else:
            self.chi0 = np.asarray(self.chi0, dtype=float)
            if self.chi0.size != n:
                raise ValueError(f"chi0 must have {n} entries")
        # construction-time stability check: the filter matrix must admit a
        # symmetric positive-definite Lyapunov solution
        try:
            solve_lyapunov(self.a_k, np.eye(n))
        except LyapunovError as exc:
            raise ValueError(f"A - K C is not Hurwitz: {exc}") from exc

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.theta.size

    @property
    def a_k(self):
        return self.A - self.K @ self.C

    @property
    def e0(self):
        return self.chi0 - self.x0

    def delta_at(self, t):
        return np.array([float(e.at(t)) for e in self.delta])

    def u_at(self, t):
        return np.array([float(e.at(t)) for e in self.u])

    def delta_max(self):
        """Amplitude bound for the output disturbance (2-norm over channels)."""
        return float(np.linalg.norm([e.sup_bound() for e in self.delta]))


@dataclass
class PlantScenario:
    """Run plan for an observer experiment: plant plus extension and law setup."""

    name: str
    plant: PlantSpec
    extension: Kreisselmeier | FeDecay
    law: GradientLaw | AveragingLaw
    horizon: float
    step: float
    sample_every: float | None = None

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")
        if 0 < self.horizon < self.step:
            raise ValueError(f"horizon {self.horizon} is shorter than one step {self.step}")
        q = self.plant.q
        if isinstance(self.law, AveragingLaw):
            if self.law.k.size == 1 and q > 1:
                self.law.k = np.full(q, self.law.k[0])
            if self.law.k.size != q:
                raise ValueError(f"law.k has {self.law.k.size} entries, expected {q}")
        if self.sample_every is None:
            self.sample_every = self.step


@dataclass
class ObserverState:
    x: np.ndarray
    chi: np.ndarray
    P: np.ndarray
    Omega: np.ndarray
    PhiK: np.ndarray
    delta_f: np.ndarray

    @classmethod
    def initial(cls, spec):
        n, q = spec.n, spec.q
        return cls(
            x=spec.x0.copy(),
            chi=spec.chi0.copy(),
            P=np.zeros(n),
            Omega=np.zeros((n, q)),
            PhiK=np.eye(n),
            delta_f=np.zeros(n),
        )


def plant_rhs(spec, x, t):
    """Plant state derivative at time t (disturbance entering through y)."""
    x = np.asarray(x, dtype=float)
    if x.size != spec.n:
        raise ValueError(f"x must have {spec.n} entries")
    u = spec.u_at(t)
    y = spec.C @ x + spec.delta_at(t)
    return spec.A @ x + np.atleast_1d(spec.phi_map(y, u)) + spec.G_map(y, u) @ spec.theta


def filters_rhs(spec, obs, y, u):
    """Derivatives of the filter bank (chi, P, Omega, PhiK, delta_f)."""
    a_k = spec.a_k
    y = np.atleast_1d(y)
    dlt = y - spec.C @ obs.x
    return ObserverState(
        x=np.zeros_like(obs.x),  # the plant state advances via plant_rhs
        chi=a_k @ obs.chi + spec.K @ y,
        P=a_k @ obs.P + np.atleast_1d(spec.phi_map(y, u)),
        Omega=a_k @ obs.Omega + spec.G_map(y, u),
        PhiK=a_k @ obs.PhiK,
        delta_f=a_k @ obs.delta_f + spec.K @ dlt,
    )


def build_regression(spec, obs, y):
    """Scalar regression triple (z, phi_row, w) from the filter states.

    w uses the ground-truth initial error e0 and the integrated delta_f, so
    it is bookkeeping the estimation laws never see. The output disturbance
    is recovered as y - C x from the simulated plant state.
    """
    ell = np.ones(spec.p)
    y = np.atleast_1d(y)
    z = float(ell @ (y - spec.C @ obs.chi - spec.C @ obs.P))
    phi_row = ell @ spec.C @ obs.Omega
    dlt = y - spec.C @ obs.x
    w = float(-ell @ spec.C @ obs.PhiK @ spec.e0 - ell @ spec.C @ obs.delta_f + ell @ dlt)
    return z, phi_row, w


def reconstruct_state(obs, theta_hat):
    """State estimate chi + P + Omega theta_hat."""
    return obs.chi + obs.P + obs.Omega @ np.atleast_1d(theta_hat)


def epsilon_x_bound(spec, delta_max, q=None, c=None):
    """Steady-state reconstruction error bound from the Lyapunov solution.

    q defaults to the identity and c to lambda_min(q)/2; any 0 < c <
    lambda_min(q) is accepted.
    """
    n = spec.n
    q = np.eye(n) if q is None else np.asarray(q, dtype=float)
    lam_q = np.linalg.eigvalsh(q).min()
    if c is None:
        c = 0.5 * lam_q
    if not 0 < c < lam_q:
        raise ValueError(f"need 0 < c < lambda_min(q) = {lam_q}, got c = {c}")
    pi = solve_lyapunov(spec.a_k, q)
    lam_pi = np.linalg.eigvalsh(pi)
    return float(
        np.linalg.norm(pi @ spec.K, 2)
        * delta_max
        * np.sqrt(lam_pi[-1] / (c * (lam_q - c) * lam_pi[0]))
    )
