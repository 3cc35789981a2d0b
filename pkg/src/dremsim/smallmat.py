"""Dense kernels for the small matrices (n <= 8) used throughout the simulator.

Determinant and adjugate use closed-form cofactor expansion up to 4x4 and LU
with partial pivoting above; the adjugate is defined for singular matrices.
The Lyapunov solver vectorizes the equation into a dense linear system.
"""

import numpy as np
from numba import njit


class DimensionError(ValueError):
    """Matrix arguments have incompatible or non-square shapes."""


class LyapunovError(RuntimeError):
    """The Lyapunov equation has no symmetric positive-definite solution."""


@njit(cache=True)
def _det3(m):
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


@njit(cache=True)
def _det_lu(m):
    # LU with partial pivoting; returns 0.0 on an exactly singular pivot.
    n = m.shape[0]
    a = m.copy()
    d = 1.0
    for k in range(n):
        p = k
        mx = abs(a[k, k])
        for i in range(k + 1, n):
            v = abs(a[i, k])
            if v > mx:
                mx = v
                p = i
        if mx == 0.0:
            return 0.0
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            d = -d
        d *= a[k, k]
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            for j in range(k + 1, n):
                a[i, j] -= f * a[k, j]
    return d


@njit(cache=True)
def _det(m):
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    if n == 2:
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if n == 3:
        return _det3(m)
    if n == 4:
        d = 0.0
        sub = np.empty((3, 3))
        sign = 1.0
        for c in range(4):
            for i in range(3):
                jj = 0
                for j in range(4):
                    if j != c:
                        sub[i, jj] = m[i + 1, j]
                        jj += 1
            d += sign * m[0, c] * _det3(sub)
            sign = -sign
        return d
    return _det_lu(m)


@njit(cache=True)
def _adjugate(m):
    n = m.shape[0]
    out = np.empty((n, n))
    if n == 1:
        out[0, 0] = 1.0
        return out
    if n == 2:
        out[0, 0] = m[1, 1]
        out[0, 1] = -m[0, 1]
        out[1, 0] = -m[1, 0]
        out[1, 1] = m[0, 0]
        return out
    sub = np.empty((n - 1, n - 1))
    for i in range(n):
        for j in range(n):
            r = 0
            for ii in range(n):
                if ii == i:
                    continue
                c = 0
                for jj in range(n):
                    if jj == j:
                        continue
                    sub[r, c] = m[ii, jj]
                    c += 1
                r += 1
            cof = _det(sub)
            if (i + j) % 2 == 1:
                cof = -cof
            out[j, i] = cof
    return out


@njit(cache=True)
def _trace_prod(a, b):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            s += a[i, j] * b[j, i]
    return s


def _as_square(m, who):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{who} expects a square matrix, got shape {m.shape}")
    return m


def det(m):
    """Determinant of a square matrix."""
    return float(_det(_as_square(m, "det")))


def adjugate(m):
    """Adjugate of a square (possibly singular) matrix: adjugate(m) @ m == det(m) * I."""
    return _adjugate(_as_square(m, "adjugate"))


def trace_prod(a, b):
    """tr(a @ b) without forming the product."""
    a = _as_square(a, "trace_prod")
    b = _as_square(b, "trace_prod")
    if a.shape != b.shape:
        raise DimensionError(f"trace_prod shapes differ: {a.shape} vs {b.shape}")
    return float(_trace_prod(a, b))


def solve_lyapunov(a_k, q, residual_tol=1e-9):
    """Solve a_k.T @ P + P @ a_k = -q for symmetric positive-definite P.

    Dense Kronecker vectorization; adequate for the n <= 8 systems handled here.
    Raises LyapunovError when a_k is not Hurwitz (no SPD solution exists).
    """
    a_k = _as_square(a_k, "solve_lyapunov")
    q = _as_square(q, "solve_lyapunov")
    if a_k.shape != q.shape:
        raise DimensionError(f"solve_lyapunov shapes differ: {a_k.shape} vs {q.shape}")
    if not np.allclose(q, q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise LyapunovError("q must be symmetric")
    n = a_k.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, a_k.T) + np.kron(a_k.T, eye)
    try:
        vec = np.linalg.solve(lhs, -q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise LyapunovError(f"Lyapunov system is singular: {exc}") from exc
    p = vec.reshape((n, n), order="F")
    p = 0.5 * (p + p.T)
    scale = max(1.0, np.abs(q).max())
    resid = np.abs(a_k.T @ p + p @ a_k + q).max()
    if resid > residual_tol * scale:
        raise LyapunovError(f"Lyapunov residual {resid:.3e} exceeds tolerance")
    if np.linalg.eigvalsh(p).min() <= 0.0:
        raise LyapunovError("solution is not positive definite; a_k is not Hurwitz")
    return p
