"""
Dense matrix functions for small rating-scale matrices.

``expm`` uses scaling and squaring with diagonal Pade approximants
(Higham 2005), ``logm`` the inverse scaling and squaring method on a
complex Schur form (Higham 2001). Both accept real or complex input so
that complex-step differentiation can run through them.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "MatrixFunctionError",
    "LogmError",
    "expm",
    "logm",
    "repair_generator",
]


class MatrixFunctionError(ArithmeticError):
    pass


class LogmError(MatrixFunctionError):
    """Raised when the principal logarithm does not exist."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0,
        1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}

# 1-norm bounds below which the degree-m approximant is accurate to unit
# roundoff without scaling.
_THETA = (
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
)

# Squarings beyond this overflow any double-precision result that is not
# already degenerate.
_MAX_SQUARINGS = 1100


def _as_square(a, name="a"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if a.dtype.kind not in "fc":
        a = a.astype(float)
    if not np.all(np.isfinite(a)):
        raise MatrixFunctionError(f"{name} has non-finite entries")
    return a


def _one_norm(a):
    return float(np.max(np.sum(np.abs(a), axis=0))) if a.size else 0.0


def _pade_uv(a, m):
    b = _PADE_COEFFS[m]
    ident = np.eye(a.shape[0], dtype=a.dtype)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
        return u, v
    powers = [ident, a2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    u = a @ u
    v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return u, v


def expm(a):
    """Matrix exponential by scaling and squaring.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Real or complex square matrix with finite entries.

    Returns
    -------
    ndarray
        ``exp(a)``, same dtype kind as the input.

    Raises
    ------
    MatrixFunctionError
        If the input is not finite or the result overflows.
    """
    a = _as_square(a)
    n = a.shape[0]
    if n == 0:
        return a.copy()
    norm = _one_norm(a)
    if norm == 0.0:
        return np.eye(n, dtype=a.dtype)
    s = 0
    for m, theta in _THETA:
        if norm <= theta:
            break
    else:
        m = 13
        s = max(0, int(np.ceil(np.log2(norm / _THETA[-1][1]))))
        if s > _MAX_SQUARINGS:
            raise MatrixFunctionError(
                f"expm overflow: 1-norm {norm:.3e} is out of range")
        a = a / 2.0 ** s
    u, v = _pade_uv(a, m)
    r = np.linalg.solve(v - u, v + u)
    # overflow is detected below and reported as an error
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            r = r @ r
    if not np.all(np.isfinite(r)):
        raise MatrixFunctionError(
            f"expm overflow: result is not finite (1-norm of input {norm:.3e})")
    return r


def _sqrtm_triu(t):
    # Bjorck-Hammarling recurrence for the principal square root of an
    # upper-triangular matrix.
    n = t.shape[0]
    r = np.zeros_like(t)
    d = np.sqrt(np.diag(t))
    r[np.arange(n), np.arange(n)] = d
    for j in range(n):
        for i in range(j - 1, -1, -1):
            s = t[i, j] - r[i, i + 1:j] @ r[i + 1:j, j]
            denom = d[i] + d[j]
            r[i, j] = s / denom if denom != 0 else 0.0
    return r


def _log1p_pade(x, m=8):
    # [m/m] Pade approximant of log(I + X) via m-point Gauss-Legendre on
    # log(I + X) = int_0^1 X (I + tX)^{-1} dt.
    nodes, weights = np.polynomial.legendre.leggauss(m)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    ident = np.eye(x.shape[0], dtype=x.dtype)
    out = np.zeros_like(x)
    for node, weight in zip(nodes, weights):
        out += weight * scipy.linalg.solve_triangular(ident + node * x, x)
    return out


def logm(a, theta=0.25, max_roots=64):
    """Principal matrix logarithm by inverse scaling and squaring.

    The input is reduced to complex Schur form, square-rooted until it is
    within ``theta`` of the identity in the 1-norm, and the logarithm of
    the remainder is evaluated with an 8th-order Pade approximant.

    Raises
    ------
    LogmError
        If an eigenvalue lies on the closed negative real axis (this
        includes singular input), so that no principal logarithm exists.
    """
    a = _as_square(a)
    n = a.shape[0]
    real_input = a.dtype.kind == "f"
    if n == 0:
        return a.copy()
    t, q = scipy.linalg.schur(a.astype(complex), output="complex")
    eig = np.diag(t)
    on_cut = (np.abs(eig.imag) < 1e-12) & (eig.real < 1e-12)
    if np.any(on_cut):
        bad = complex(eig[np.argmax(on_cut)])
        raise LogmError(
            f"matrix has eigenvalue {bad:.6g} on the closed negative real "
            "axis; principal logarithm undefined", eigenvalue=bad)
    ident = np.eye(n, dtype=complex)
    s = 0
    while _one_norm(t - ident) > theta:
        if s >= max_roots:
            raise LogmError(
                f"no convergence after {max_roots} square roots")
        t = _sqrtm_triu(t)
        s += 1
    lt = (2.0 ** s) * _log1p_pade(t - ident)
    out = q @ lt @ q.conj().T
    if real_input:
        return out.real.copy()
    return out


def repair_generator(a):
    """Turn an approximate log of a stochastic matrix into a valid generator.

    Negative off-diagonal entries are set to zero and each diagonal entry is
    replaced with the negated sum of its row's off-diagonal entries.
    """
    a = np.array(_as_square(a).real, dtype=float)
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    a[off & (a < 0)] = 0.0
    idx = np.arange(n)
    a[idx, idx] = 0.0
    a[idx, idx] = -a.sum(axis=1)
    return a
