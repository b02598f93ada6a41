"""Damped Gauss-Newton (Levenberg-Marquardt) least squares."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LMResult", "FitError", "NumericalError", "lm_minimize", "numeric_jacobian"]


class FitError(RuntimeError):
    """The minimizer did not converge."""

    def __init__(self, message: str, residual_norm: float = float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


class NumericalError(FloatingPointError):
    """The residual function returned non-finite values."""

    def __init__(self, params: np.ndarray):
        super().__init__(f"non-finite residual at parameters {np.array2string(np.asarray(params), precision=17)}")
        self.params = np.asarray(params)


@dataclass
class LMResult:
    params: np.ndarray
    covariance: np.ndarray
    iterations: int
    cost: float
    residual: np.ndarray
    jacobian: np.ndarray
    converged: bool
    singular: bool
    message: str
    nfev: int

    @property
    def residual_norm(self) -> float:
        return float(np.sqrt(2 * self.cost))

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, r0: np.ndarray | None = None,
                     rel_step: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.stack(cols, axis=-1)


def lm_minimize(fun: Callable[[np.ndarray], np.ndarray], x0, jac: Callable | None = None, *,
                max_iter: int = 200, ftol: float = 1e-15, xtol: float = 1e-13, gtol: float = 1e-15,
                lambda0: float = 1e-4, lambda_max: float = 1e16) -> LMResult:
    """Minimize ``0.5 * |fun(x)|**2``.

    Parameters
    ----------
    fun : callable
        Residual vector as a function of the parameter vector.
    x0 : array_like
        Starting point; ``fun(x0)`` must be finite.
    jac : callable, optional
        Analytic Jacobian ``d fun / d x`` (shape ``(m, n)``); central
        differences are used otherwise.
    max_iter : int
        Maximum number of Jacobian evaluations (outer iterations).
    ftol, xtol, gtol : float
        Stop when the relative cost reduction, the relative step, or the
        scaled gradient drop below these values.
    lambda0 : float
        Initial damping relative to ``diag(J^T J)``.

    Returns
    -------
    LMResult
        ``covariance`` is ``s^2 (J^T J)^+`` with ``s^2 = |r|^2 / (m - n)``;
        ``singular`` flags a rank-deficient ``J``.

    Raises
    ------
    NumericalError
        If the residual at ``x0`` is not finite, or every trial step around
        some iterate produces non-finite residuals.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    nfev = 1
    if not np.all(np.isfinite(r)):
        raise NumericalError(x)
    cost = 0.5 * r @ r
    jacf = jac if jac is not None else (lambda p: numeric_jacobian(fun, p))
    lam = lambda0
    converged = False
    message = "maximum number of iterations reached"
    it = 0
    J = np.asarray(jacf(x), dtype=float)

    while it < max_iter:
        it += 1
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        floor = max(diag.max(initial=0.0), 1.0) * 1e-14
        diag = np.where(diag > floor, diag, floor)
        if np.max(np.abs(g) / np.sqrt(diag)) <= gtol * max(np.sqrt(2 * cost), 1e-300) or cost == 0.0:
            converged, message = True, "gradient tolerance reached"
            break

        accepted = False
        bad_x = None
        while lam <= lambda_max:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            nfev += 1
            if not np.all(np.isfinite(r_new)):
                bad_x = x_new
                lam *= 10
                continue
            cost_new = 0.5 * r_new @ r_new
            if cost_new < cost:
                accepted = True
                break
            if cost_new == cost and np.all(step == 0):
                break
            lam *= 10
        if not accepted:
            if bad_x is not None and lam > lambda_max:
                raise NumericalError(bad_x)
            converged, message = True, "no further decrease possible"
            break

        reduction = (cost - cost_new) / cost
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10, 1e-15)
        J = np.asarray(jacf(x), dtype=float)
        if reduction <= ftol:
            converged, message = True, "relative cost reduction below ftol"
            break
        if small_step:
            converged, message = True, "step size below xtol"
            break

    m, n = J.shape
    A = J.T @ J
    rank = np.linalg.matrix_rank(J)
    singular = rank < n
    s2 = 2 * cost / (m - n) if m > n else 1.0
    cov = s2 * np.linalg.pinv(A)
    return LMResult(x, cov, it, float(cost), r, J, converged, bool(singular), message, nfev)
