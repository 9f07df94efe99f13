"""Adaptive Runge-Kutta propagation helpers for linear systems."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

RTOL_FLOOR = 1e-13


def _tols(rtol):
    rtol = max(float(rtol), RTOL_FLOOR)
    return rtol, max(1e-14, 1e-2 * rtol)


def propagate_matrix(Afun, s0: float, s1: float, M0: np.ndarray, rtol: float = 1e-10,
                     dense: bool = False):
    """Solve dM/ds = A(s) M from s0 to s1 (either direction)."""
    if s1 == s0:
        return (M0.copy(), None) if dense else M0.copy()
    n, m = M0.shape
    rtol, atol = _tols(rtol)

    def rhs(s, y):
        return (np.asarray(Afun(s)) @ y.reshape(n, m)).ravel()

    sol = solve_ivp(rhs, (s0, s1), np.asarray(M0, dtype=M0.dtype).ravel(),
                    method="RK45", rtol=rtol, atol=atol, dense_output=dense)
    if not sol.success:
        raise RuntimeError(f"matrix propagation failed: {sol.message}")
    M = sol.y[:, -1].reshape(n, m)
    return (M, sol.sol) if dense else M


def propagate_affine(Afun, gfun, s0: float, s1: float, x0: np.ndarray,
                     rtol: float = 1e-10, dense: bool = False):
    """Solve dx/ds = A(s) x + g(s) from s0 to s1."""
    if s1 == s0:
        return (np.asarray(x0).copy(), None) if dense else np.asarray(x0).copy()
    rtol, atol = _tols(rtol)
    x0 = np.asarray(x0)

    def rhs(s, y):
        return np.asarray(Afun(s)) @ y + np.asarray(gfun(s))

    sol = solve_ivp(rhs, (s0, s1), x0, method="RK45", rtol=rtol, atol=atol,
                    dense_output=dense)
    if not sol.success:
        raise RuntimeError(f"affine propagation failed: {sol.message}")
    x = sol.y[:, -1]
    return (x, sol.sol) if dense else x


def affine_step_constant(B: np.ndarray, g: np.ndarray | None, L: float):
    """Exact flow of dx/ds = B x + g over length L (constant coefficients).

    Returns (Phi, r) with x(L) = Phi @ x(0) + r, using the augmented
    exponential so singular B needs no special casing.
    """
    n = B.shape[0]
    if g is None or not np.any(g):
        return sla.expm(B * L), np.zeros(n, dtype=B.dtype)
    dtype = np.promote_types(B.dtype, np.asarray(g).dtype)
    M = np.zeros((n + 1, n + 1), dtype=dtype)
    M[:n, :n] = B
    M[:n, n] = g
    E = sla.expm(M * L)
    return E[:n, :n], E[:n, n]
