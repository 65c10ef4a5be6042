"""Bound-constrained Levenberg-Marquardt for small least-squares problems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["LMResult", "ConvergenceError", "complex_step_jacobian", "least_squares_lm"]

_COMPLEX_STEP = 1e-30


class ConvergenceError(RuntimeError):
    """Optimizer stopped without meeting its tolerances.

    ``result`` carries the best iterate found.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class LMResult:
    x: np.ndarray
    residuals: np.ndarray
    cost: float
    n_iter: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def complex_step_jacobian(fun, x):
    """Residuals and Jacobian of ``fun`` at ``x`` by complex-step differentiation.

    ``fun`` must be analytic in each coordinate and accept complex arrays.
    The derivative is exact to rounding, with no subtractive cancellation.
    """
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fun(x.astype(complex)))
    jac = np.empty((r0.size, x.size))
    xc = x.astype(complex)
    for i in range(x.size):
        xc[i] = x[i] + 1j * _COMPLEX_STEP
        jac[:, i] = np.asarray(fun(xc)).imag / _COMPLEX_STEP
        xc[i] = x[i]
    return r0.real.copy(), jac


def least_squares_lm(fun, x0, lower, upper, *, jac=None, max_iter=2000,
                     ftol=1e-12, xtol=1e-12, damping=1e-3, raise_on_failure=True):
    """Minimise ``||fun(x)||^2`` subject to ``lower <= x <= upper``.

    Marquardt-scaled damped Gauss-Newton steps are projected onto the box.
    Variables sitting at a bound with the gradient pushing outwards are held
    fixed for that step. A step is taken only if it lowers the cost, so the
    recorded cost history is nonincreasing.

    Stops when an accepted step reduces the cost by a relative amount below
    ``ftol``, when the step norm falls below ``xtol * (||x|| + xtol)``, or when
    no damping level yields a decrease (a stationary point of the projected
    problem). Hitting ``max_iter`` raises :class:`ConvergenceError`, unless
    ``raise_on_failure`` is false.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0))
    if np.any(lower > upper):
        raise ValueError("infeasible bounds: lower > upper")
    if jac is None:
        def evaluate(z):
            return complex_step_jacobian(fun, z)
    else:
        def evaluate(z):
            return np.asarray(fun(z), dtype=float), np.asarray(jac(z), dtype=float)

    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r, J = evaluate(x)
    cost = float(r @ r)
    history = [cost]
    lam = damping

    def result(n_iter, ok, msg):
        return LMResult(x.copy(), r.copy(), cost, n_iter, ok, msg, history)

    if cost == 0.0:
        return result(0, True, "zero residual")
    for it in range(1, max_iter + 1):
        g = J.T @ r
        held = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        free = ~held
        if not np.any(free):
            return result(it - 1, True, "all variables held at bounds")
        Jf = J[:, free]
        H = Jf.T @ Jf
        scale = np.diag(H).copy()
        scale[scale < 1e-300] = 1e-300
        accepted = False
        while lam < 1e16:
            step = np.zeros_like(x)
            try:
                step[free] = np.linalg.solve(H + lam * np.diag(scale), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lower, upper)
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            return result(it - 1, True, "no further decrease")
        dx = float(np.linalg.norm(x_new - x))
        rel = (cost - cost_new) / cost
        x = x_new
        r, J = evaluate(x)
        cost = float(r @ r)
        history.append(cost)
        lam = max(lam / 5.0, 1e-12)
        if cost == 0.0:
            return result(it, True, "zero residual")
        if rel < ftol:
            return result(it, True, "relative cost decrease below ftol")
        if dx < xtol * (float(np.linalg.norm(x)) + xtol):
            return result(it, True, "step below xtol")
    res = result(max_iter, False, f"no convergence in {max_iter} iterations")
    if raise_on_failure:
        raise ConvergenceError(res.message, res)
    return res
