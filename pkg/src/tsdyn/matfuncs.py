"""Matrix functions of jump factors E + mu*A.

log_one_plus computes a matrix M with exp(M) = E + mu*A; log_ratio divides by
log(1 + mu); phi_fun computes A^{-1} log(E + mu*A), extended to singular A
through the scalar function h(x) = log(1 + mu*x)/x, which is holomorphic near
zero (h(0) = mu).

Branch handling is fail-loud: in "real" mode an eigenvalue of E + mu*A on
(-inf, 0] raises BranchError; in "complex" mode the principal branch is taken,
which assigns negative reals imaginary part +pi (the limit from the upper
half-plane).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .errors import BranchError, RegressivityError

SERIES_RADIUS = 0.9     # mu*||A||_2 below this: Taylor route by default
SERIES_TOL = 1e-16
SERIES_CAP = 200
COND_CAP = 1e8          # above this, phi_fun avoids solving with A


def _as_square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=complex if np.iscomplexobj(A) else float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    return A


def _jump_factor_eigs(mu: float, A: np.ndarray):
    if mu <= 0:
        raise ValueError("mu must be positive")
    M = np.eye(A.shape[0]) + mu * A
    eigs = np.linalg.eigvals(M)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    if np.min(np.abs(eigs)) <= 1e-14 * scale:
        raise RegressivityError(
            f"E + mu*A singular (mu={mu}); system not regressive here")
    return M, eigs


def _on_negative_axis(eigs) -> bool:
    return bool(np.any((eigs.real < 0) & (np.abs(eigs.imag) <= 1e-12 * (1 + np.abs(eigs)))))


def _log_series(X: np.ndarray) -> np.ndarray:
    """log(E + X) by the classical Taylor series sum (-1)^(k+1) X^k / k."""
    term = X.copy()
    out = X.copy()
    for k in range(2, SERIES_CAP + 1):
        term = term @ X
        contrib = ((-1) ** (k + 1) / k) * term
        out = out + contrib
        if np.linalg.norm(contrib, 2) < SERIES_TOL:
            break
    return out


def log_one_plus(mu: float, A, mode: str = "real", method: str = "auto") -> np.ndarray:
    """Matrix M with exp(M) = E + mu*A (principal branch).

    method: "auto" picks the Taylor series when mu*||A||_2 < 0.9 and the
    Schur-based inverse-scaling-and-squaring logarithm otherwise; "series" and
    "schur" force a route (series diverges outside its radius).
    """
    A = _as_square(A)
    M, eigs = _jump_factor_eigs(mu, A)
    negative = _on_negative_axis(eigs)
    if negative and mode != "complex":
        raise BranchError(
            "spectrum of E + mu*A touches (-inf, 0]; rerun with mode='complex'")

    if method == "auto":
        method = "series" if mu * np.linalg.norm(A, 2) < SERIES_RADIUS else "schur"
    if method == "series":
        out = _log_series(mu * A)
    elif method == "schur":
        out = sla.logm(M)
    else:
        raise ValueError(f"unknown method {method!r}")

    if mode != "complex" and np.iscomplexobj(out):
        out = np.real_if_close(out, tol=1e6)
        if np.iscomplexobj(out):
            raise BranchError("matrix logarithm came out complex in real mode")
    return out


def log_ratio(mu: float, A, mode: str = "real", method: str = "auto") -> np.ndarray:
    """log(E + mu*A) / log(1 + mu): the gap coefficient of the embedding."""
    return log_one_plus(mu, A, mode=mode, method=method) / math.log1p(mu)


def _h_scalar(x: complex, mu: float) -> complex:
    y = mu * x
    if abs(y) < 1e-4:
        # truncated series of log(1+y)/y, error < |y|^5/6
        return mu * (1 - y / 2 + y ** 2 / 3 - y ** 3 / 4 + y ** 4 / 5)
    return np.log(complex(1.0 + y)) / x


def _phi_series(mu: float, A: np.ndarray) -> np.ndarray:
    """sum_k (-1)^k A^k mu^(k+1) / (k+1); terminates exactly on nilpotent A."""
    n = A.shape[0]
    out = mu * np.eye(n, dtype=A.dtype)
    power = np.eye(n, dtype=A.dtype)
    for k in range(1, SERIES_CAP + 1):
        power = power @ A
        if not np.any(power):
            break
        contrib = ((-1) ** k * mu ** (k + 1) / (k + 1)) * power
        out = out + contrib
        if np.linalg.norm(contrib, 2) < SERIES_TOL:
            break
    return out


def phi_fun(mu: float, A, mode: str = "real", method: str = "auto") -> np.ndarray:
    """A^{-1} log(E + mu*A), extended to non-invertible A.

    Well-conditioned invertible A: direct solve against log_one_plus.
    Otherwise: the terminating series for (quasi-)nilpotent A, the convergent
    series inside its radius, or a Schur-form evaluation of the primary
    function h(x) = log(1 + mu*x)/x.
    """
    A = _as_square(A)
    _, eigs = _jump_factor_eigs(mu, A)     # regressivity / branch screening
    if _on_negative_axis(eigs) and mode != "complex":
        raise BranchError(
            "spectrum of E + mu*A touches (-inf, 0]; rerun with mode='complex'")

    n = A.shape[0]
    sv = np.linalg.svd(A, compute_uv=False)
    invertible = sv[-1] > 0 and sv[0] / max(sv[-1], 1e-300) < COND_CAP

    if method == "auto":
        if invertible:
            method = "solve"
        elif np.linalg.norm(np.linalg.matrix_power(A, n), 2) == 0.0:
            method = "series"          # nilpotent: series terminates
        elif mu * np.linalg.norm(A, 2) < SERIES_RADIUS:
            method = "series"
        else:
            method = "schur"

    if method == "solve":
        out = np.linalg.solve(A, log_one_plus(mu, A, mode=mode))
    elif method == "series":
        out = _phi_series(mu, A)
    elif method == "schur":
        out = sla.funm(A, np.vectorize(lambda x: _h_scalar(x, mu)))
        L = log_one_plus(mu, A, mode="complex")
        defect = np.linalg.norm(out @ A - L, 2) / max(1.0, np.linalg.norm(L, 2))
        if defect > 1e-6:
            raise ArithmeticError(
                f"Schur evaluation of phi failed its identity check ({defect:.2e})")
    else:
        raise ValueError(f"unknown method {method!r}")

    if mode != "complex" and np.iscomplexobj(out):
        out = np.real_if_close(out, tol=1e6)
        if np.iscomplexobj(out):
            raise BranchError("phi came out complex in real mode")
    return out
