"""Deterministic fixed-step RK4 integration of the coupled simulation ODE.

All subsystems (plant, filters, extension, estimator, the integrated
determinant) advance in one monolithic state vector so the estimator sees
delta and delta_dot at the same instant. Runs are bit-reproducible: fixed
step, no adaptivity, time computed as step_index * h.

The bundled scenario families run through numba kernels (the acceptance
runtime budget requires microsecond steps); plants with non-declarative
(y, u) maps fall back to a plain-Python loop over the same module functions.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import mixing, observer, signals
from .estimators import (
    EstimatorState,
    averaging_rhs,
    averaging_theta_deriv,
    gradient_deriv,
    gradient_rhs,
    kappa_deriv,
)
from .extension import ExtensionState, extension_rhs, fe_decay_derivs, kreisselmeier_derivs
from .mixing import delta_dot_from, mix_parts
from .observer import ConstantMap, InputLinearMap, ObserverState, PlantSpec, build_regression
from .signals import AveragingLaw, FeDecay, GradientLaw, Kreisselmeier, ScenarioSpec


class StepError(RuntimeError):
    """A step produced a non-finite entry; carries time and block name."""

    def __init__(self, t, block, partial=None):
        super().__init__(f"non-finite value in block '{block}' at t = {t:.6g}")
        self.t = t
        self.block = block
        self.partial = partial


class StateLayout:
    """Named blocks mapped to index ranges of the flat state vector."""

    def __init__(self, blocks):
        self.blocks = []
        off = 0
        for name, shape in blocks:
            size = int(np.prod(shape))
            self.blocks.append((name, tuple(np.atleast_1d(shape)), off, size))
            off += size
        self.dim = off
        self._by_name = {b[0]: b for b in self.blocks}

    def names(self):
        return [b[0] for b in self.blocks]

    def slice_of(self, name):
        _, _, off, size = self._by_name[name]
        return slice(off, off + size)

    def view(self, vec, name):
        _, shape, off, size = self._by_name[name]
        v = vec[off:off + size]
        return v.reshape(shape) if len(shape) > 1 else v

    def unpack(self, vec):
        return {name: self.view(vec, name) for name in self.names()}

    def pack(self, parts):
        vec = np.empty(self.dim)
        for name, shape, off, size in self.blocks:
            vec[off:off + size] = np.asarray(parts[name], dtype=float).reshape(size)
        return vec

    def block_of_index(self, i):
        for name, _, off, size in self.blocks:
            if off <= i < off + size:
                return name
        raise IndexError(i)


class Trace:
    """Uniformly sampled named signals; column-major storage."""

    def __init__(self, columns, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(columns):
            raise ValueError(f"data shape {data.shape} does not match {len(columns)} columns")
        self.columns = list(columns)
        self.data = data

    @property
    def t(self):
        return self.column("t")

    @property
    def n_samples(self):
        return self.data.shape[0]

    def column(self, name):
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"trace has no column '{name}'") from None

    def has_column(self, name):
        return name in self.columns

    def with_column(self, name, values, after=None):
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        pos = len(self.columns) if after is None else self.columns.index(after) + 1
        cols = self.columns[:pos] + [name] + self.columns[pos:]
        data = np.hstack([self.data[:, :pos], values, self.data[:, pos:]])
        return Trace(cols, data)


@dataclass
class SimResult:
    trace: Trace
    ts: np.ndarray
    states: np.ndarray
    layout: StateLayout
    spec: object

    def block(self, name):
        """Sampled state block, shape (n_samples, *block_shape)."""
        _, shape, off, size = self.layout._by_name[name]
        v = self.states[:, off:off + size]
        return v.reshape((v.shape[0],) + shape) if len(shape) > 1 else v[:, 0] if size == 1 else v


def rk4_step(rhs, s, t, h, layout=None):
    """One classical Runge-Kutta step of ds/dt = rhs(t, s)."""
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    s = np.asarray(s, dtype=float)
    k1 = np.asarray(rhs(t, s))
    k2 = np.asarray(rhs(t + 0.5 * h, s + 0.5 * h * k1))
    k3 = np.asarray(rhs(t + 0.5 * h, s + 0.5 * h * k2))
    k4 = np.asarray(rhs(t + h, s + h * k3))
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        block = layout.block_of_index(bad[0]) if layout is not None else f"index {bad[0]}"
        raise StepError(t, block)
    return out


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True)
def _eval_terms(terms, lo, hi, t):
    v = 0.0
    for j in range(lo, hi):
        kind = terms[j, 0]
        if kind == 0.0:
            v += terms[j, 1]
        elif kind == 1.0:
            v += terms[j, 1] * np.sin(terms[j, 2] * t + terms[j, 3])
        else:
            v += terms[j, 1] * np.exp(-terms[j, 2] * t)
    return v


@njit(cache=True)
def _regression_rhs(t, s, ds, n, fe, rate, law_avg, gamma, kvec, theta_true,
                    rterms, roff, dterms):
    phi = np.empty(n)
    for i in range(n):
        phi[i] = _eval_terms(rterms, roff[i], roff[i + 1], t)
    w = _eval_terms(dterms, 0, dterms.shape[0], t)
    y = w
    for i in range(n):
        y += phi[i] * theta_true[i]
    nn = n * n
    Y = s[0:n]
    Phi = s[n:n + nn].reshape(n, n)
    W = s[n + nn:2 * n + nn]
    th = s[2 * n + nn:3 * n + nn]
    kap = s[3 * n + nn]
    if fe:
        dY, dPhi, dW = fe_decay_derivs(Y, Phi, W, phi, y, w, rate)
    else:
        dY, dPhi, dW = kreisselmeier_derivs(Y, Phi, W, phi, y, w, rate)
    scalY, delta, scalW = mix_parts(Y, Phi, W, fe)
    ddelta = delta_dot_from(Phi, dPhi, fe)
    ds[0:n] = dY
    ds[n:n + nn] = dPhi.reshape(nn)
    ds[n + nn:2 * n + nn] = dW
    if law_avg:
        ds[2 * n + nn:3 * n + nn] = averaging_theta_deriv(th, kap, scalY, t, kvec)
        ds[3 * n + nn] = kappa_deriv(kap, delta, ddelta, gamma)
    else:
        ds[2 * n + nn:3 * n + nn] = gradient_deriv(th, scalY, delta, gamma)
        ds[3 * n + nn] = 0.0
    ds[3 * n + nn + 1] = ddelta


@njit(cache=True)
def _run_regression(s0, h, n_steps, stride, n, fe, rate, law_avg, gamma, kvec,
                    theta_true, rterms, roff, dterms):
    dim = s0.size
    n_samples = n_steps // stride + 1
    states = np.empty((n_samples, dim))
    ts = np.empty(n_samples)
    s = s0.copy()
    states[0] = s
    ts[0] = 0.0
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    idx = 1
    for st in range(n_steps):
        t = st * h
        _regression_rhs(t, s, k1, n, fe, rate, law_avg, gamma, kvec, theta_true, rterms, roff, dterms)
        for i in range(dim):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        _regression_rhs(t + 0.5 * h, tmp, k2, n, fe, rate, law_avg, gamma, kvec, theta_true, rterms, roff, dterms)
        for i in range(dim):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        _regression_rhs(t + 0.5 * h, tmp, k3, n, fe, rate, law_avg, gamma, kvec, theta_true, rterms, roff, dterms)
        for i in range(dim):
            tmp[i] = s[i] + h * k3[i]
        _regression_rhs(t + h, tmp, k4, n, fe, rate, law_avg, gamma, kvec, theta_true, rterms, roff, dterms)
        bad = -1
        for i in range(dim):
            s[i] = s[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if bad < 0 and not np.isfinite(s[i]):
                bad = i
        if bad >= 0:
            return states[:idx], ts[:idx], st, bad
        if (st + 1) % stride == 0:
            states[idx] = s
            ts[idx] = (st + 1) * h
            idx += 1
    return states, ts, -1, -1


@njit(cache=True)
def _regression_derived(ts, states, n, fe, rate, gamma, law_avg, theta_true,
                        rterms, roff, dterms):
    n_samples = ts.size
    nn = n * n
    delta = np.empty(n_samples)
    ddelta = np.empty(n_samples)
    scalY = np.empty((n_samples, n))
    scalW = np.empty((n_samples, n))
    ineq_lhs = np.empty(n_samples)
    for r in range(n_samples):
        t = ts[r]
        s = states[r]
        phi = np.empty(n)
        for i in range(n):
            phi[i] = _eval_terms(rterms, roff[i], roff[i + 1], t)
        w = _eval_terms(dterms, 0, dterms.shape[0], t)
        y = w
        for i in range(n):
            y += phi[i] * theta_true[i]
        Y = s[0:n]
        Phi = s[n:n + nn].reshape(n, n)
        W = s[n + nn:2 * n + nn]
        kap = s[3 * n + nn]
        if fe:
            dY, dPhi, dW = fe_decay_derivs(Y, Phi, W, phi, y, w, rate)
        else:
            dY, dPhi, dW = kreisselmeier_derivs(Y, Phi, W, phi, y, w, rate)
        sy, d, sw = mix_parts(Y, Phi, W, fe)
        dd = delta_dot_from(Phi, dPhi, fe)
        delta[r] = d
        ddelta[r] = dd
        scalY[r] = sy
        scalW[r] = sw
        if law_avg:
            ineq_lhs[r] = gamma * d * d * d + d * dd * kap + dd
        else:
            ineq_lhs[r] = np.nan
    return delta, ddelta, scalY, scalW, ineq_lhs


@njit(cache=True)
def _plant_rhs(t, s, ds, n, p, q, m, A, AK, C, K, G, phiu, phic, gth, e0, fe,
               rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff):
    # hand-rolled products throughout: BLAS dispatch dominates at these sizes
    x = s[0:n]
    chi = s[n:2 * n]
    P = s[2 * n:3 * n]
    Om = s[3 * n:3 * n + n * q].reshape(n, q)
    ofs = 3 * n + n * q
    PhiK = s[ofs:ofs + n * n].reshape(n, n)
    df = s[ofs + n * n:ofs + n * n + n]
    base = 4 * n + n * q + n * n
    Y = s[base:base + q]
    Phi = s[base + q:base + q + q * q].reshape(q, q)
    W = s[base + q + q * q:base + 2 * q + q * q]
    th = s[base + 2 * q + q * q:base + 3 * q + q * q]
    kap = s[base + 3 * q + q * q]

    u = np.empty(m)
    for i in range(m):
        u[i] = _eval_terms(uterms, uoff[i], uoff[i + 1], t)
    dl = np.empty(p)
    for i in range(p):
        dl[i] = _eval_terms(dterms, doff[i], doff[i + 1], t)
    y = np.empty(p)
    for i in range(p):
        acc = dl[i]
        for j in range(n):
            acc += C[i, j] * x[j]
        y[i] = acc
    phi_val = np.empty(n)
    for i in range(n):
        acc = phic[i]
        for j in range(m):
            acc += phiu[i, j] * u[j]
        phi_val[i] = acc

    for i in range(n):
        acc = phi_val[i] + gth[i]
        for j in range(n):
            acc += A[i, j] * x[j]
        ds[i] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += AK[i, j] * chi[j]
        for j in range(p):
            acc += K[i, j] * y[j]
        ds[n + i] = acc
    for i in range(n):
        acc = phi_val[i]
        for j in range(n):
            acc += AK[i, j] * P[j]
        ds[2 * n + i] = acc
    for i in range(n):
        for jq in range(q):
            acc = G[i, jq]
            for j in range(n):
                acc += AK[i, j] * Om[j, jq]
            ds[3 * n + i * q + jq] = acc
    for i in range(n):
        for j2 in range(n):
            acc = 0.0
            for j in range(n):
                acc += AK[i, j] * PhiK[j, j2]
            ds[ofs + i * n + j2] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += AK[i, j] * df[j]
        for j in range(p):
            acc += K[i, j] * dl[j]
        ds[ofs + n * n + i] = acc

    # scalar regression with the all-ones output combination
    pk_e0 = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += PhiK[i, j] * e0[j]
        pk_e0[i] = acc
    z = 0.0
    w = 0.0
    for i in range(p):
        zc = y[i]
        wc = dl[i]
        for j in range(n):
            zc -= C[i, j] * (chi[j] + P[j])
            wc -= C[i, j] * (pk_e0[j] + df[j])
        z += zc
        w += wc
    phi_row = np.empty(q)
    for jq in range(q):
        acc = 0.0
        for i in range(p):
            for j in range(n):
                acc += C[i, j] * Om[j, jq]
        phi_row[jq] = acc

    if fe:
        dY, dPhi, dW = fe_decay_derivs(Y, Phi, W, phi_row, z, w, rate)
    else:
        dY, dPhi, dW = kreisselmeier_derivs(Y, Phi, W, phi_row, z, w, rate)
    scalY, delta, scalW = mix_parts(Y, Phi, W, fe)
    ddelta = delta_dot_from(Phi, dPhi, fe)

    ds[base:base + q] = dY
    ds[base + q:base + q + q * q] = dPhi.reshape(q * q)
    ds[base + q + q * q:base + 2 * q + q * q] = dW
    if law_avg:
        ds[base + 2 * q + q * q:base + 3 * q + q * q] = averaging_theta_deriv(th, kap, scalY, t, kvec)
        ds[base + 3 * q + q * q] = kappa_deriv(kap, delta, ddelta, gamma)
    else:
        ds[base + 2 * q + q * q:base + 3 * q + q * q] = gradient_deriv(th, scalY, delta, gamma)
        ds[base + 3 * q + q * q] = 0.0
    ds[base + 3 * q + q * q + 1] = ddelta


@njit(cache=True)
def _run_plant(s0, h, n_steps, stride, n, p, q, m, A, AK, C, K, G, phiu, phic,
               gth, e0, fe, rate, law_avg, gamma, kvec, theta_true, uterms, uoff,
               dterms, doff):
    dim = s0.size
    n_samples = n_steps // stride + 1
    states = np.empty((n_samples, dim))
    ts = np.empty(n_samples)
    s = s0.copy()
    states[0] = s
    ts[0] = 0.0
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    idx = 1
    for st in range(n_steps):
        t = st * h
        _plant_rhs(t, s, k1, n, p, q, m, A, AK, C, K, G, phiu, phic, gth, e0, fe,
                   rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff)
        for i in range(dim):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        _plant_rhs(t + 0.5 * h, tmp, k2, n, p, q, m, A, AK, C, K, G, phiu, phic, gth,
                   e0, fe, rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff)
        for i in range(dim):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        _plant_rhs(t + 0.5 * h, tmp, k3, n, p, q, m, A, AK, C, K, G, phiu, phic, gth,
                   e0, fe, rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff)
        for i in range(dim):
            tmp[i] = s[i] + h * k3[i]
        _plant_rhs(t + h, tmp, k4, n, p, q, m, A, AK, C, K, G, phiu, phic, gth, e0,
                   fe, rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff)
        bad = -1
        for i in range(dim):
            s[i] = s[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if bad < 0 and not np.isfinite(s[i]):
                bad = i
        if bad >= 0:
            return states[:idx], ts[:idx], st, bad
        if (st + 1) % stride == 0:
            states[idx] = s
            ts[idx] = (st + 1) * h
            idx += 1
    return states, ts, -1, -1


@njit(cache=True)
def _plant_derived(ts, states, n, p, q, m, A, AK, C, K, G, phiu, phic, gth, e0,
                   fe, rate, gamma, law_avg, kvec, theta_true, uterms, uoff, dterms, doff):
    n_samples = ts.size
    delta = np.empty(n_samples)
    ddelta = np.empty(n_samples)
    scalY = np.empty((n_samples, q))
    scalW = np.empty((n_samples, q))
    ineq_lhs = np.empty(n_samples)
    xhat = np.empty((n_samples, n))
    ds = np.empty(states.shape[1])
    base = 4 * n + n * q + n * n
    for r in range(n_samples):
        t = ts[r]
        s = states[r]
        _plant_rhs(t, s, ds, n, p, q, m, A, AK, C, K, G, phiu, phic, gth, e0, fe,
                   rate, law_avg, gamma, kvec, theta_true, uterms, uoff, dterms, doff)
        Y = s[base:base + q]
        Phi = s[base + q:base + q + q * q].reshape(q, q)
        W = s[base + q + q * q:base + 2 * q + q * q]
        th = s[base + 2 * q + q * q:base + 3 * q + q * q]
        kap = s[base + 3 * q + q * q]
        sy, d, sw = mix_parts(Y, Phi, W, fe)
        delta[r] = d
        scalY[r] = sy
        scalW[r] = sw
        dd = ds[base + 3 * q + q * q + 1]
        ddelta[r] = dd
        if law_avg:
            ineq_lhs[r] = gamma * d * d * d + d * dd * kap + dd
        else:
            ineq_lhs[r] = np.nan
        chi = s[n:2 * n]
        P = s[2 * n:3 * n]
        Om = s[3 * n:3 * n + n * q].reshape(n, q)
        for i in range(n):
            v = chi[i] + P[i]
            for j in range(q):
                v += Om[i, j] * th[j]
            xhat[r, i] = v
    return delta, ddelta, scalY, scalW, ineq_lhs, xhat


# ---------------------------------------------------------------------------
# layouts, initial conditions, column assembly

def regression_layout(n):
    return StateLayout([
        ("Y", (n,)),
        ("Phi", (n, n)),
        ("W", (n,)),
        ("theta_hat", (n,)),
        ("kappa_hat", (1,)),
        ("delta_jacobi", (1,)),
    ])


def plant_layout(n, q):
    return StateLayout([
        ("x", (n,)),
        ("chi", (n,)),
        ("P", (n,)),
        ("Omega", (n, q)),
        ("PhiK", (n, n)),
        ("delta_f", (n,)),
        ("Y", (q,)),
        ("Phi", (q, q)),
        ("W", (q,)),
        ("theta_hat", (q,)),
        ("kappa_hat", (1,)),
        ("delta_jacobi", (1,)),
    ])


def _law_flags(law, n):
    if isinstance(law, AveragingLaw):
        return True, float(law.gamma), np.ascontiguousarray(law.k, dtype=float)
    if isinstance(law, GradientLaw):
        return False, float(law.gamma), np.zeros(n)
    raise TypeError(f"unknown law {law!r}")


def _scheme_flags(scheme):
    if isinstance(scheme, FeDecay):
        return True, float(scheme.mu)
    if isinstance(scheme, Kreisselmeier):
        return False, float(scheme.l)
    raise TypeError(f"unknown extension scheme {scheme!r}")


def _theta0(law, n):
    if law.theta0 is not None:
        th0 = np.asarray(law.theta0, dtype=float)
        if th0.size != n:
            raise ValueError(f"theta0 has {th0.size} entries, expected {n}")
        return th0
    return np.zeros(n)


def _initial_regression(spec, layout):
    fe = isinstance(spec.extension, FeDecay)
    n = spec.n
    parts = {
        "Y": np.zeros(n),
        "Phi": np.eye(n) if fe else np.zeros((n, n)),
        "W": np.zeros(n),
        "theta_hat": _theta0(spec.law, n),
        "kappa_hat": [spec.law.kappa0 if isinstance(spec.law, AveragingLaw) else 0.0],
        "delta_jacobi": [0.0],
    }
    return layout.pack(parts)


def _initial_plant(plan, layout):
    plant = plan.plant
    fe = isinstance(plan.extension, FeDecay)
    q = plant.q
    parts = {
        "x": plant.x0,
        "chi": plant.chi0,
        "P": np.zeros(plant.n),
        "Omega": np.zeros((plant.n, q)),
        "PhiK": np.eye(plant.n),
        "delta_f": np.zeros(plant.n),
        "Y": np.zeros(q),
        "Phi": np.eye(q) if fe else np.zeros((q, q)),
        "W": np.zeros(q),
        "theta_hat": _theta0(plan.law, q),
        "kappa_hat": [plan.law.kappa0 if isinstance(plan.law, AveragingLaw) else 0.0],
        "delta_jacobi": [0.0],
    }
    return layout.pack(parts)


def _steps_and_stride(horizon, step, sample_every):
    n_steps = int(round(horizon / step)) if horizon > 0 else 0
    if abs(n_steps * step - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"step {step} does not divide horizon {horizon}")
    stride = max(1, int(round(sample_every / step)))
    if abs(stride * step - sample_every) > 1e-12:
        raise ValueError(f"step {step} does not divide sample_every {sample_every}")
    if n_steps % stride != 0:
        raise ValueError(f"sample_every {sample_every} does not divide horizon {horizon}")
    return n_steps, stride


def _flatten_signals(exprs):
    tables = [e.flatten() for e in exprs]
    offsets = np.zeros(len(tables) + 1, dtype=np.int64)
    for i, tb in enumerate(tables):
        offsets[i + 1] = offsets[i] + tb.shape[0]
    terms = np.ascontiguousarray(np.vstack(tables)) if tables else np.zeros((0, 4))
    return terms, offsets


def _regression_columns(spec, ts, states, layout, derived):
    delta, ddelta, scalY, scalW, ineq_lhs = derived
    n = spec.n
    avg = isinstance(spec.law, AveragingLaw)
    th = states[:, layout.slice_of("theta_hat")]
    tt = th - spec.theta[None, :]
    cols = [("t", ts)]
    for i in range(n):
        cols.append((f"theta_hat_{i + 1}", th[:, i]))
    for i in range(n):
        cols.append((f"theta_tilde_{i + 1}", tt[:, i]))
    if avg:
        kap = states[:, layout.slice_of("kappa_hat")][:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            ktilde = np.where(delta != 0.0, kap - 1.0 / np.where(delta == 0.0, 1.0, delta), np.nan)
        cols.append(("kappa_hat", kap))
        cols.append(("kappa_tilde", ktilde))
    cols.append(("delta", delta))
    cols.append(("delta_dot", ddelta))
    cols.append(("delta_jacobi", states[:, layout.slice_of("delta_jacobi")][:, 0]))
    for i in range(n):
        cols.append((f"scalY_{i + 1}", scalY[:, i]))
    for i in range(n):
        cols.append((f"scalW_{i + 1}", scalW[:, i]))
    if avg:
        cols.append(("ineq_lhs", ineq_lhs))
    return Trace([c for c, _ in cols], np.column_stack([v for _, v in cols]))


def _plant_columns(plan, ts, states, layout, derived):
    delta, ddelta, scalY, scalW, ineq_lhs, xhat = derived
    plant = plan.plant
    q = plant.q
    avg = isinstance(plan.law, AveragingLaw)
    th = states[:, layout.slice_of("theta_hat")]
    tt = th - plant.theta[None, :]
    x = states[:, layout.slice_of("x")]
    xtilde = np.linalg.norm(xhat - x, axis=1)
    cols = [("t", ts)]
    for i in range(q):
        cols.append((f"theta_hat_{i + 1}", th[:, i]))
    for i in range(q):
        cols.append((f"theta_tilde_{i + 1}", tt[:, i]))
    if avg:
        kap = states[:, layout.slice_of("kappa_hat")][:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            ktilde = np.where(delta != 0.0, kap - 1.0 / np.where(delta == 0.0, 1.0, delta), np.nan)
        cols.append(("kappa_hat", kap))
        cols.append(("kappa_tilde", ktilde))
    cols.append(("delta", delta))
    cols.append(("delta_dot", ddelta))
    cols.append(("delta_jacobi", states[:, layout.slice_of("delta_jacobi")][:, 0]))
    for i in range(q):
        cols.append((f"scalY_{i + 1}", scalY[:, i]))
    for i in range(q):
        cols.append((f"scalW_{i + 1}", scalW[:, i]))
    if avg:
        cols.append(("ineq_lhs", ineq_lhs))
    for i in range(plant.n):
        cols.append((f"x_{i + 1}", x[:, i]))
    for i in range(plant.n):
        cols.append((f"xhat_{i + 1}", xhat[:, i]))
    cols.append(("xtilde_norm", xtilde))
    return Trace([c for c, _ in cols], np.column_stack([v for _, v in cols]))


# ---------------------------------------------------------------------------
# integrate

def integrate(plan, sample_every=None, force_generic=False):
    """Run a scenario over its full horizon and sample a Trace.

    plan is a regression ScenarioSpec or an observer PlantScenario. Returns
    a SimResult; raises StepError (with the partial result attached) if the
    state leaves the finite range.
    """
    if isinstance(plan, ScenarioSpec):
        return _integrate_regression(plan, sample_every, force_generic)
    if isinstance(plan, observer.PlantScenario):
        return _integrate_plant(plan, sample_every, force_generic)
    raise TypeError(f"cannot integrate {type(plan).__name__}")


def _integrate_regression(spec, sample_every, force_generic):
    sample_every = spec.sample_every if sample_every is None else sample_every
    n_steps, stride = _steps_and_stride(spec.horizon, spec.step, sample_every)
    layout = regression_layout(spec.n)
    s0 = _initial_regression(spec, layout)
    fe, rate = _scheme_flags(spec.extension)
    law_avg, gamma, kvec = _law_flags(spec.law, spec.n)
    rterms, roff = _flatten_signals(spec.regressor)
    dterms, _ = _flatten_signals([spec.disturbance])
    theta = np.ascontiguousarray(spec.theta, dtype=float)

    if force_generic:
        states, ts, err_step, err_i = _run_regression_generic(
            s0, spec.step, n_steps, stride, spec, layout)
    else:
        states, ts, err_step, err_i = _run_regression(
            s0, spec.step, n_steps, stride, spec.n, fe, rate, law_avg, gamma,
            kvec, theta, rterms, roff, dterms)
    if err_step >= 0:
        partial = _finish_regression(spec, ts, states, layout, fe, rate, gamma, law_avg, theta, rterms, roff, dterms)
        raise StepError((err_step + 1) * spec.step, layout.block_of_index(err_i), partial)
    return _finish_regression(spec, ts, states, layout, fe, rate, gamma, law_avg, theta, rterms, roff, dterms)


def _finish_regression(spec, ts, states, layout, fe, rate, gamma, law_avg, theta, rterms, roff, dterms):
    derived = _regression_derived(ts, states, spec.n, fe, rate, gamma, law_avg,
                                  theta, rterms, roff, dterms)
    trace = _regression_columns(spec, ts, states, layout, derived)
    return SimResult(trace=trace, ts=ts, states=states, layout=layout, spec=spec)


def _declarative_plant(plant):
    phi_ok = isinstance(plant.phi_map, (InputLinearMap, ConstantMap))
    g_ok = isinstance(plant.G_map, ConstantMap)
    return phi_ok and g_ok


def _integrate_plant(plan, sample_every, force_generic):
    plant = plan.plant
    sample_every = plan.sample_every if sample_every is None else sample_every
    n_steps, stride = _steps_and_stride(plan.horizon, plan.step, sample_every)
    layout = plant_layout(plant.n, plant.q)
    s0 = _initial_plant(plan, layout)
    fe, rate = _scheme_flags(plan.extension)
    law_avg, gamma, kvec = _law_flags(plan.law, plant.q)

    if force_generic or not _declarative_plant(plant):
        states, ts, err_step, err_i = _run_plant_generic(s0, plan.step, n_steps, stride, plan, layout)
        result = _finish_plant_generic(plan, ts, states, layout, gamma, law_avg)
        if err_step >= 0:
            raise StepError((err_step + 1) * plan.step, layout.block_of_index(err_i), result)
        return result

    n, p, q, mm = plant.n, plant.p, plant.q, len(plant.u)
    A = np.ascontiguousarray(plant.A)
    AK = np.ascontiguousarray(plant.a_k)
    C = np.ascontiguousarray(plant.C)
    K = np.ascontiguousarray(plant.K)
    G = np.ascontiguousarray(plant.G_map.matrix.reshape(n, q))
    if isinstance(plant.phi_map, InputLinearMap):
        phiu = np.ascontiguousarray(plant.phi_map.matrix.reshape(n, mm))
        phic = np.zeros(n)
    else:
        phiu = np.zeros((n, mm))
        phic = np.ascontiguousarray(plant.phi_map.matrix.reshape(n))
    e0 = np.ascontiguousarray(plant.e0)
    theta = np.ascontiguousarray(plant.theta)
    gth = np.ascontiguousarray(G @ theta)
    uterms, uoff = _flatten_signals(plant.u)
    dterms, doff = _flatten_signals(plant.delta)

    states, ts, err_step, err_i = _run_plant(
        s0, plan.step, n_steps, stride, n, p, q, mm, A, AK, C, K, G, phiu, phic,
        gth, e0, fe, rate, law_avg, gamma, kvec, theta, uterms, uoff, dterms, doff)
    derived = _plant_derived(ts, states, n, p, q, mm, A, AK, C, K, G, phiu, phic,
                             gth, e0, fe, rate, gamma, law_avg, kvec, theta, uterms,
                             uoff, dterms, doff)
    trace = _plant_columns(plan, ts, states, layout, derived)
    result = SimResult(trace=trace, ts=ts, states=states, layout=layout, spec=plan)
    if err_step >= 0:
        raise StepError((err_step + 1) * plan.step, layout.block_of_index(err_i), result)
    return result


# ---------------------------------------------------------------------------
# plain-Python fallback paths (arbitrary plant maps; cross-checks the kernels)

def _run_regression_generic(s0, h, n_steps, stride, spec, layout):
    def rhs(t, s):
        ext = ExtensionState(layout.view(s, "Y"), layout.view(s, "Phi"), layout.view(s, "W"))
        phi = signals.eval_regressor(spec, t)
        w = signals.eval_disturbance(spec, t)
        y = signals.eval_output(spec, t)
        dext = extension_rhs(ext, phi, y, w, spec.extension)
        mixed = mixing.mix(ext, spec.extension)
        mixed.delta_dot = mixing.delta_dot(ext, dext, spec.extension)
        est = EstimatorState(layout.view(s, "theta_hat"),
                             float(layout.view(s, "kappa_hat")[0]), t)
        if isinstance(spec.law, AveragingLaw):
            dest = averaging_rhs(est, mixed, spec.law.gamma, spec.law.k)
            dkap = dest.kappa_hat
        else:
            dest = gradient_rhs(est, mixed, spec.law.gamma)
            dkap = 0.0
        return layout.pack({
            "Y": dext.Y, "Phi": dext.Phi, "W": dext.W,
            "theta_hat": dest.theta_hat, "kappa_hat": [dkap],
            "delta_jacobi": [mixed.delta_dot],
        })

    return _generic_loop(rhs, s0, h, n_steps, stride, layout)


def _run_plant_generic(s0, h, n_steps, stride, plan, layout):
    plant = plan.plant

    def rhs(t, s):
        obs = ObserverState(
            x=layout.view(s, "x"), chi=layout.view(s, "chi"), P=layout.view(s, "P"),
            Omega=layout.view(s, "Omega"), PhiK=layout.view(s, "PhiK"),
            delta_f=layout.view(s, "delta_f"))
        u = plant.u_at(t)
        y = plant.C @ obs.x + plant.delta_at(t)
        dx = plant.A @ obs.x + np.atleast_1d(plant.phi_map(y, u)) + plant.G_map(y, u) @ plant.theta
        dobs = observer.filters_rhs(plant, obs, y, u)
        z, phi_row, w = build_regression(plant, obs, y)
        ext = ExtensionState(layout.view(s, "Y"), layout.view(s, "Phi"), layout.view(s, "W"))
        dext = extension_rhs(ext, phi_row, z, w, plan.extension)
        mixed = mixing.mix(ext, plan.extension)
        mixed.delta_dot = mixing.delta_dot(ext, dext, plan.extension)
        est = EstimatorState(layout.view(s, "theta_hat"),
                             float(layout.view(s, "kappa_hat")[0]), t)
        if isinstance(plan.law, AveragingLaw):
            dest = averaging_rhs(est, mixed, plan.law.gamma, plan.law.k)
            dkap = dest.kappa_hat
        else:
            dest = gradient_rhs(est, mixed, plan.law.gamma)
            dkap = 0.0
        return layout.pack({
            "x": dx, "chi": dobs.chi, "P": dobs.P, "Omega": dobs.Omega,
            "PhiK": dobs.PhiK, "delta_f": dobs.delta_f,
            "Y": dext.Y, "Phi": dext.Phi, "W": dext.W,
            "theta_hat": dest.theta_hat, "kappa_hat": [dkap],
            "delta_jacobi": [mixed.delta_dot],
        })

    return _generic_loop(rhs, s0, h, n_steps, stride, layout)


def _generic_loop(rhs, s0, h, n_steps, stride, layout):
    dim = s0.size
    n_samples = n_steps // stride + 1
    states = np.empty((n_samples, dim))
    ts = np.empty(n_samples)
    s = s0.copy()
    states[0] = s
    ts[0] = 0.0
    idx = 1
    for st in range(n_steps):
        t = st * h
        try:
            s = rk4_step(rhs, s, t, h, layout)
        except StepError as exc:
            bad = layout.slice_of(exc.block).start
            return states[:idx], ts[:idx], st, bad
        if (st + 1) % stride == 0:
            states[idx] = s
            ts[idx] = (st + 1) * h
            idx += 1
    return states, ts, -1, -1


def _finish_plant_generic(plan, ts, states, layout, gamma, law_avg):
    plant = plan.plant
    n_samples = ts.size
    q = plant.q
    delta = np.empty(n_samples)
    ddelta = np.empty(n_samples)
    scalY = np.empty((n_samples, q))
    scalW = np.empty((n_samples, q))
    ineq_lhs = np.full(n_samples, np.nan)
    xhat = np.empty((n_samples, plant.n))
    for r in range(n_samples):
        s = states[r]
        t = ts[r]
        obs = ObserverState(
            x=layout.view(s, "x"), chi=layout.view(s, "chi"), P=layout.view(s, "P"),
            Omega=layout.view(s, "Omega"), PhiK=layout.view(s, "PhiK"),
            delta_f=layout.view(s, "delta_f"))
        u = plant.u_at(t)
        y = plant.C @ obs.x + plant.delta_at(t)
        z, phi_row, w = build_regression(plant, obs, y)
        ext = ExtensionState(layout.view(s, "Y"), layout.view(s, "Phi"), layout.view(s, "W"))
        dext = extension_rhs(ext, phi_row, z, w, plan.extension)
        mixed = mixing.mix(ext, plan.extension)
        dd = mixing.delta_dot(ext, dext, plan.extension)
        delta[r] = mixed.delta
        ddelta[r] = dd
        scalY[r] = mixed.scalY
        scalW[r] = mixed.scalW
        kap = float(layout.view(s, "kappa_hat")[0])
        if law_avg:
            d = mixed.delta
            ineq_lhs[r] = gamma * d ** 3 + d * dd * kap + dd
        xhat[r] = observer.reconstruct_state(obs, layout.view(s, "theta_hat"))
    derived = (delta, ddelta, scalY, scalW, ineq_lhs, xhat)
    trace = _plant_columns(plan, ts, states, layout, derived)
    return SimResult(trace=trace, ts=ts, states=states, layout=layout, spec=plan)
