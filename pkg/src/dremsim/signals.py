"""Declarative time signals and scenario definitions.

Regressors, disturbances and plant inputs are built from a closed expression
grammar (constant / sin / exp_decay plus sum and scale) so that scenarios
serialize to plain config files and every experiment is reproducible from
text. Specs are immutable after construction and freely shared.
"""

from dataclasses import dataclass, field

import numpy as np

_KIND_CONSTANT = 0.0
_KIND_SIN = 1.0
_KIND_EXP_DECAY = 2.0


class SignalExpr:
    """Real-valued function of time t >= 0, closed under sum and scale."""

    def at(self, t):
        raise NotImplementedError

    def sup_bound(self):
        """Upper bound for |value| over t >= 0 (amplitude sum)."""
        raise NotImplementedError

    def _terms(self, coeff, out):
        raise NotImplementedError

    def flatten(self):
        """Normal form as an (m, 4) array of scaled primitive terms.

        Row layout: (kind, a, b, c) evaluating to
          kind 0: a
          kind 1: a * sin(b*t + c)
          kind 2: a * exp(-b*t)
        """
        out = []
        self._terms(1.0, out)
        if not out:
            out.append((_KIND_CONSTANT, 0.0, 0.0, 0.0))
        return np.array(out, dtype=float)


@dataclass(frozen=True)
class Constant(SignalExpr):
    value: float

    def at(self, t):
        return self.value + 0.0 * np.asarray(t, dtype=float)

    def sup_bound(self):
        return abs(self.value)

    def _terms(self, coeff, out):
        out.append((_KIND_CONSTANT, coeff * self.value, 0.0, 0.0))


@dataclass(frozen=True)
class Sin(SignalExpr):
    amplitude: float
    frequency: float
    phase: float = 0.0

    def at(self, t):
        return self.amplitude * np.sin(self.frequency * np.asarray(t, dtype=float) + self.phase)

    def sup_bound(self):
        return abs(self.amplitude)

    def _terms(self, coeff, out):
        out.append((_KIND_SIN, coeff * self.amplitude, self.frequency, self.phase))


@dataclass(frozen=True)
class ExpDecay(SignalExpr):
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"exp_decay rate must be >= 0, got {self.rate}")

    def at(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def sup_bound(self):
        return 1.0

    def _terms(self, coeff, out):
        out.append((_KIND_EXP_DECAY, coeff, self.rate, 0.0))


@dataclass(frozen=True)
class Scale(SignalExpr):
    factor: float
    expr: SignalExpr

    def at(self, t):
        return self.factor * self.expr.at(t)

    def sup_bound(self):
        return abs(self.factor) * self.expr.sup_bound()

    def _terms(self, coeff, out):
        self.expr._terms(coeff * self.factor, out)


@dataclass(frozen=True)
class Sum(SignalExpr):
    exprs: tuple

    def __init__(self, exprs):
        object.__setattr__(self, "exprs", tuple(exprs))

    def at(self, t):
        acc = 0.0 * np.asarray(t, dtype=float)
        for e in self.exprs:
            acc = acc + e.at(t)
        return acc

    def sup_bound(self):
        return sum(e.sup_bound() for e in self.exprs)

    def _terms(self, coeff, out):
        for e in self.exprs:
            e._terms(coeff, out)


ZERO = Constant(0.0)


@dataclass(frozen=True)
class Kreisselmeier:
    """Exponential-forgetting regressor extension; l is the forgetting rate."""

    l: float

    def __post_init__(self):
        if self.l <= 0:
            raise ValueError(f"l must be > 0, got {self.l}")


@dataclass(frozen=True)
class FeDecay:
    """Decaying extension that turns finite excitation into a persistent scalar regressor."""

    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")


@dataclass
class GradientLaw:
    gamma: float
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float)


@dataclass
class AveragingLaw:
    """Growing-window averaging law with the online inverse-regressor estimate."""

    gamma: float
    k: np.ndarray
    kappa0: float = 0.0
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        self.k = np.atleast_1d(np.asarray(self.k, dtype=float))
        if np.any(self.k <= 0):
            raise ValueError("k_i must be > 0")
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float)


@dataclass
class ScenarioSpec:
    """Scalar-output regression scenario: y(t) = phi(t)' theta + w(t).

    theta is ground truth used only by the simulator for the disturbance
    bookkeeping and error metrics; the estimation laws never read it.
    """

    name: str
    regressor: list
    theta: np.ndarray
    disturbance: SignalExpr
    extension: Kreisselmeier | FeDecay
    law: GradientLaw | AveragingLaw
    horizon: float
    step: float
    sample_every: float | None = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if len(self.regressor) != self.theta.size:
            raise ValueError(
                f"regressor has {len(self.regressor)} components but theta has {self.theta.size}"
            )
        if self.step <= 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")
        # horizon == 0 is the degenerate single-sample run
        if 0 < self.horizon < self.step:
            raise ValueError(f"horizon {self.horizon} is shorter than one step {self.step}")
        if isinstance(self.law, AveragingLaw) and self.law.k.size == 1 and self.n > 1:
            self.law.k = np.full(self.n, self.law.k[0])
        if isinstance(self.law, AveragingLaw) and self.law.k.size != self.n:
            raise ValueError(f"law.k has {self.law.k.size} entries, expected {self.n}")
        if self.sample_every is None:
            self.sample_every = self.step

    @property
    def n(self):
        return self.theta.size


def eval_regressor(spec, t):
    """Regressor vector phi(t)."""
    return np.array([float(e.at(t)) for e in spec.regressor])


def eval_disturbance(spec, t):
    """Additive disturbance w(t)."""
    return float(spec.disturbance.at(t))


def eval_output(spec, t):
    """Measured output y(t) = phi(t)' theta + w(t)."""
    return float(eval_regressor(spec, t) @ spec.theta + eval_disturbance(spec, t))
