"""Excitation and convergence diagnostics over sampled traces.

Everything here is post-hoc and pure: excitation levels from Gram integrals
of the sampled regressor, the measurable activation time of the scalar
regressor delta, the verifiable gain inequality, and the running weighted
disturbance integral whose boundedness the averaging law needs. Quadrature
is trapezoidal on the uniform sampling grid.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class InequalityResult:
    """Outcome of the verifiable-inequality scan: eta_max or the failing time."""

    eta_max: float
    ok: bool
    failed_at: float | None = None


@dataclass
class ExcitationReport:
    alpha: float | None
    window: tuple | None
    t_detect: float
    delta_lb: float
    delta_ub: float
    eta_max: float
    c1_bound: list
    c2_sup: list

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "window": list(self.window) if self.window is not None else None,
            "t_detect": self.t_detect,
            "delta_lb": self.delta_lb,
            "delta_ub": self.delta_ub,
            "eta_max": self.eta_max,
            "c1_bound": list(self.c1_bound),
            "c2_sup": list(self.c2_sup),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _phi_matrix(phi_samples):
    phi = np.asarray(phi_samples, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    return phi


def _gram_prefix(ts, phi):
    """Cumulative trapezoidal integral of phi phi' along the trace."""
    outer = phi[:, :, None] * phi[:, None, :]
    dt = np.diff(ts)[:, None, None]
    seg = 0.5 * (outer[1:] + outer[:-1]) * dt
    prefix = np.zeros_like(outer)
    np.cumsum(seg, axis=0, out=prefix[1:])
    return prefix


def fe_level(ts, phi_samples, window):
    """Largest alpha with Gram(window) >= alpha*I: the smallest eigenvalue."""
    ts = np.asarray(ts, dtype=float)
    phi = _phi_matrix(phi_samples)
    a, b = window
    mask = (ts >= a) & (ts <= b)
    if mask.sum() < 2:
        raise ValueError(f"window {window} selects fewer than 2 samples")
    sub_t = ts[mask]
    sub = phi[mask]
    outer = sub[:, :, None] * sub[:, None, :]
    gram = np.trapezoid(outer, sub_t, axis=0)
    return float(np.linalg.eigvalsh(gram)[0])


def pe_level(ts, phi_samples, window_len):
    """Smallest window excitation level over all sliding windows of the trace."""
    ts = np.asarray(ts, dtype=float)
    phi = _phi_matrix(phi_samples)
    if ts[-1] - ts[0] < window_len:
        raise ValueError(f"trace shorter than window_len {window_len}")
    dt = ts[1] - ts[0]
    k = int(round(window_len / dt))
    if k < 1:
        raise ValueError(f"window_len {window_len} is below the sampling interval")
    prefix = _gram_prefix(ts, phi)
    best = np.inf
    for i in range(0, ts.size - k):
        gram = prefix[i + k] - prefix[i]
        lam = np.linalg.eigvalsh(gram)[0]
        if lam < best:
            best = lam
    return float(best)


def detect_activation(ts, delta, frac=0.9, tail_frac=0.1):
    """(t_detect, delta_lb, delta_ub): earliest time after which delta stays
    above frac * (minimum over the trailing tail_frac of the horizon)."""
    ts = np.asarray(ts, dtype=float)
    delta = np.asarray(delta, dtype=float)
    tail_start = ts[-1] - tail_frac * (ts[-1] - ts[0])
    tail_min = delta[ts >= tail_start].min()
    if tail_min <= 0.0:
        raise ValueError("delta does not settle above zero; no activation time exists")
    thr = frac * tail_min
    below = np.flatnonzero(delta < thr)
    idx = below[-1] + 1 if below.size else 0
    t_detect = float(ts[idx])
    return t_detect, float(delta[idx:].min()), float(delta.max())


def check_inequality(ts, delta, delta_dot, kappa_hat, gamma, t_from):
    """eta_max = inf over t >= t_from of (gamma d^3 + d d' kappa + d') / d.

    Requires delta > 0 on the scanned range; a nonpositive delta yields a
    failure record naming the first offending time instead of an exception.
    """
    ts = np.asarray(ts, dtype=float)
    mask = ts >= t_from
    d = np.asarray(delta, dtype=float)[mask]
    dd = np.asarray(delta_dot, dtype=float)[mask]
    kap = np.asarray(kappa_hat, dtype=float)[mask]
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        return InequalityResult(eta_max=0.0, ok=False, failed_at=float(ts[mask][bad[0]]))
    ratio = (gamma * d ** 3 + d * dd * kap + dd) / d
    return InequalityResult(eta_max=float(ratio.min()), ok=True)


def c2_integral(ts, delta, scalW, t_from):
    """Running |integral of scalW_i / delta| per channel from t_from on.

    The integration starts where delta is already bounded away from zero;
    near the start of a run delta vanishes and the weight is undefined.
    Returns an (n_samples_in_range, n_channels) array; its per-channel
    supremum estimates the averaging constant, and a linearly growing
    trajectory flags a violated averaging condition.
    """
    ts = np.asarray(ts, dtype=float)
    delta = np.asarray(delta, dtype=float)
    scalW = np.asarray(scalW, dtype=float)
    if scalW.ndim == 1:
        scalW = scalW[:, None]
    mask = ts >= t_from
    d = delta[mask]
    if np.any(d <= 0.0):
        first = float(ts[mask][np.flatnonzero(d <= 0.0)[0]])
        raise ValueError(f"delta <= 0 at t = {first}; weighted integral undefined")
    w = scalW[mask] / d[:, None]
    sub_t = ts[mask]
    dt = np.diff(sub_t)[:, None]
    seg = 0.5 * (w[1:] + w[:-1]) * dt
    running = np.zeros_like(w)
    np.cumsum(seg, axis=0, out=running[1:])
    return np.abs(running)


def excitation_report(ts, delta, scalW, *, gamma=None, delta_dot=None,
                      kappa_hat=None, phi_samples=None, frac=0.9):
    """Assemble the full report; excitation level is None without regressor samples."""
    t_detect, delta_lb, delta_ub = detect_activation(ts, delta, frac=frac)
    if kappa_hat is not None and delta_dot is not None and gamma is not None:
        res = check_inequality(ts, delta, delta_dot, kappa_hat, gamma, t_detect)
        eta_max = res.eta_max if res.ok else 0.0
    else:
        eta_max = 0.0
    alpha = None
    window = None
    if phi_samples is not None:
        window = (float(ts[0]), float(ts[-1]))
        alpha = fe_level(ts, phi_samples, window)
    scalW = np.asarray(scalW, dtype=float)
    if scalW.ndim == 1:
        scalW = scalW[:, None]
    c1 = np.abs(scalW).max(axis=0)
    c2 = c2_integral(ts, delta, scalW, t_detect).max(axis=0)
    return ExcitationReport(
        alpha=alpha,
        window=window,
        t_detect=t_detect,
        delta_lb=delta_lb,
        delta_ub=delta_ub,
        eta_max=eta_max,
        c1_bound=[float(v) for v in c1],
        c2_sup=[float(v) for v in c2],
    )
