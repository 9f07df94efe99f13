"""Embedding of time-scale linear systems into ODEs on the renormalized line.

On the image of the scale the embedded coefficients copy the originals
through the time substitution: B(s(t)) = A(t), g(s(t)) = f(t).  Each gap
(t1, t2) of graininess mu becomes an interval of length L = log(1 + mu)
carrying constant coefficients

    B_gap = log(E + mu*A(t1)) / L,
    g_gap = phi(A(t1), mu) f(t1) / L,   phi(A, mu) = A^{-1} log(E + mu*A),

so that the constant flow over the image gap reproduces the jump update
x -> (E + mu*A) x + mu*f exactly.  The forcing constant is the one forced by
that propagation identity; the gap-propagation oracle in the test suite is
its defining contract.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import CertificationError, DomainError, RegressivityError
from .linear import ScaleTrajectory, TimeScaleLinearSystem, TransitionMatrix, solve_forced
from .matfuncs import log_one_plus, phi_fun
from .odes import affine_step_constant, propagate_affine, propagate_matrix
from .renormalization import RenormalizationMap, build_renormalization
from .timescale import GridFunction, TimeScaleWindow

_GAP_EXP_TOL = 1e-9     # enforced identity exp(B_gap * L) = E + mu*A


@dataclass
class GapConstants:
    t1: float               # left scale point of the gap
    mu: float
    s_lo: float
    s_hi: float             # s_hi - s_lo = log(1 + mu)
    B: np.ndarray
    F: np.ndarray           # forcing transfer: g_gap = F @ f(t1)
    g: np.ndarray | None = None


@dataclass
class ConditionReport:
    """Boundedness/invertibility data behind the embedding's boundedness
    guarantee: reported, not enforced."""
    sup_A: float
    sup_jump_inverse: float
    sup_mu: float
    min_singular_A: float
    A_invertible: bool
    sup_A_inverse: float | None
    sup_B: float = 0.0
    sup_g: float = 0.0

    def as_dict(self):
        return {
            "sup_A": self.sup_A,
            "sup_jump_inverse": self.sup_jump_inverse,
            "sup_mu": self.sup_mu,
            "min_singular_A": self.min_singular_A,
            "A_invertible": self.A_invertible,
            "sup_A_inverse": self.sup_A_inverse,
            "sup_B": self.sup_B,
            "sup_g": self.sup_g,
        }


class EmbeddedSystem:
    """Piecewise description of (B, g) on the renormalized window."""

    def __init__(self, sys: TimeScaleLinearSystem, rmap: RenormalizationMap,
                 mode: str, gaps: list[GapConstants], report: ConditionReport,
                 f_scale: GridFunction | None, trans_cache: dict | None = None):
        self.sys = sys
        self.map = rmap
        self.mode = mode
        self.gaps = gaps
        self.report = report
        self.f_scale = f_scale
        self.dim = sys.dim
        self.s_lo = rmap.apply(sys.window.min_point)
        self.s_hi = rmap.apply(sys.window.max_point)
        self._gap_starts = [g.s_lo for g in gaps]
        self.has_complex = any(np.iscomplexobj(g.B) for g in gaps)
        # homogeneous transition factors depend on B only, so forcing swaps
        # share the cache
        self._trans_cache = trans_cache if trans_cache is not None else {}
        self._cache_lock = threading.Lock()

    # -- lookup ---------------------------------------------------------------

    def _gap_at(self, s: float) -> GapConstants | None:
        i = bisect.bisect_right(self._gap_starts, s) - 1
        if 0 <= i < len(self.gaps):
            g = self.gaps[i]
            if g.s_lo + 1e-12 < s < g.s_hi - 1e-12:
                return g
        return None

    def B(self, s: float) -> np.ndarray:
        """Coefficient at renormalized time s (gap constant inside gaps)."""
        gap = self._gap_at(s)
        if gap is not None:
            return gap.B
        return self.sys.A(self.map.invert(s))

    def g(self, s: float) -> np.ndarray:
        gap = self._gap_at(s)
        if gap is not None:
            if gap.g is None:
                return np.zeros(self.dim)
            return gap.g
        if self.f_scale is None:
            return np.zeros(self.dim)
        return np.asarray(self.f_scale(self.map.invert(s)), dtype=float).reshape(self.dim)

    def with_forcing(self, f: GridFunction | None) -> "EmbeddedSystem":
        """Same B-structure with the forcing swapped (gap transfer matrices
        are reused, no matrix functions are recomputed)."""
        new_gaps = []
        for gap in self.gaps:
            gv = None
            if f is not None:
                fv = np.asarray(f(gap.t1), dtype=float).reshape(self.dim)
                gv = gap.F @ fv
            new_gaps.append(GapConstants(gap.t1, gap.mu, gap.s_lo, gap.s_hi,
                                         gap.B, gap.F, gv))
        return EmbeddedSystem(self.sys.with_forcing(f), self.map, self.mode,
                              new_gaps, self.report, f,
                              trans_cache=self._trans_cache)

    # -- propagation ----------------------------------------------------------

    def _segments(self, s_from: float, s_to: float):
        """Split [s_from, s_to] at the structural breakpoints of the map."""
        brk = [float(v) for v in self.map.s_break
               if s_from + 1e-12 < v < s_to - 1e-12]
        pts = [s_from] + brk + [s_to]
        return list(zip(pts[:-1], pts[1:]))

    def transition(self, s_to: float, s_from: float, method: str = "auto") -> np.ndarray:
        """Phi_B(s_to, s_from) of the embedded homogeneous ODE.

        Gap stretches use the exact constant-coefficient flow expm(B_gap * ds)
        unless method="rk45" forces numerical integration everywhere.
        """
        if s_to == s_from:
            return np.eye(self.dim)
        if s_to < s_from:
            return np.linalg.solve(self.transition(s_from, s_to, method=method),
                                   np.eye(self.dim))
        key = (round(s_from, 12), round(s_to, 12), method)
        with self._cache_lock:
            cached = self._trans_cache.get(key)
        if cached is not None:
            return cached
        Phi = np.eye(self.dim, dtype=complex if self.has_complex else float)
        for a, b in self._segments(s_from, s_to):
            gap = self._gap_at(0.5 * (a + b))
            if gap is not None and method != "rk45":
                Phi = sla.expm(gap.B * (b - a)) @ Phi
            elif gap is not None:
                Phi = _rk_matrix_const(gap.B, b - a) @ Phi
            else:
                Phi = propagate_matrix(lambda s: self.B(s), a, b,
                                       np.eye(self.dim), rtol=self.sys.ode_tol) @ Phi
        if np.iscomplexobj(Phi) and np.max(np.abs(Phi.imag)) < 1e-9 * (1 + np.max(np.abs(Phi.real))):
            Phi = Phi.real
        with self._cache_lock:
            self._trans_cache[key] = Phi
        return Phi

    def propagate_forced(self, s_from: float, s_to: float, x0,
                         collect: "PsiTrajectory | None" = None) -> np.ndarray:
        """Flow x' = B x + g from s_from to s_to (forward only)."""
        if s_to < s_from:
            raise DomainError("propagate_forced requires s_from <= s_to")
        x = np.asarray(x0, dtype=complex if self.has_complex else float).reshape(self.dim)
        if collect is not None:
            collect._record(s_from, x)
        for a, b in self._segments(s_from, s_to):
            gap = self._gap_at(0.5 * (a + b))
            if gap is not None:
                Phi, r = affine_step_constant(gap.B, gap.g, b - a)
                if collect is not None:
                    collect._gap_piece(a, b, gap, x)
                x = Phi @ x + r
            else:
                x, sol = propagate_affine(lambda s: self.B(s), lambda s: self.g(s),
                                          a, b, x, rtol=self.sys.ode_tol, dense=True)
                if collect is not None:
                    collect._dense_piece(a, b, sol)
            if collect is not None:
                collect._record(b, x)
        return x

    def bounds(self) -> tuple[float, float]:
        """sup ||B|| and sup |g| over gap constants and the dense image grid."""
        sup_B = 0.0
        sup_g = 0.0
        for gap in self.gaps:
            sup_B = max(sup_B, float(np.linalg.norm(gap.B, 2)))
            if gap.g is not None:
                sup_g = max(sup_g, float(np.linalg.norm(gap.g)))
        for t in self.sys.window.grid:
            sup_B = max(sup_B, float(np.linalg.norm(self.sys.A(t), 2)))
            if self.f_scale is not None:
                sup_g = max(sup_g, float(np.linalg.norm(self.f_scale(t))))
        return sup_B, sup_g


def _rk_matrix_const(B, L):
    return propagate_matrix(lambda s: B, 0.0, L, np.eye(B.shape[0], dtype=B.dtype),
                            rtol=1e-12)


class PsiTrajectory:
    """Dense-output solution of the embedded ODE on [s_from, s_to]."""

    def __init__(self, emb: EmbeddedSystem, s_from: float, s_to: float):
        self.emb = emb
        self.s_from = s_from
        self.s_to = s_to
        self._pieces = []       # ("dense", a, b, sol) | ("gap", a, b, gap, x_at_a)
        self._node_s = []
        self._node_x = []

    def _record(self, s, x):
        self._node_s.append(float(s))
        self._node_x.append(np.array(x))

    def _dense_piece(self, a, b, sol):
        self._pieces.append(("dense", a, b, sol))

    def _gap_piece(self, a, b, gap, x_at_a):
        self._pieces.append(("gap", a, b, gap, np.array(x_at_a)))

    def __call__(self, s: float) -> np.ndarray:
        for piece in self._pieces:
            if piece[1] - 1e-12 <= s <= piece[2] + 1e-12:
                s = min(max(s, piece[1]), piece[2])
                if piece[0] == "dense":
                    return piece[3](s)
                _, a, _, gap, xa = piece
                Phi, r = affine_step_constant(gap.B, gap.g, s - a)
                return Phi @ xa + r
        i = bisect.bisect_left(self._node_s, s - 1e-9)
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self._node_s) and abs(self._node_s[j] - s) <= 1e-9 * max(1.0, abs(s)):
                return self._node_x[j]
        raise DomainError(f"embedded trajectory not defined at s={s}")


def embed(sys: TimeScaleLinearSystem, rmap: RenormalizationMap | None = None,
          mode: str = "real") -> EmbeddedSystem:
    """Construct the embedded ODE system (B, g) for a time-scale system.

    Raises RegressivityError for non-regressive systems and BranchError in
    real mode when a gap factor E + mu*A has spectrum on (-inf, 0].  The
    boundedness prerequisites (syndetic scale or invertible A) are evaluated
    and reported, not enforced.
    """
    if not sys.jump_margin > 1e-14:
        raise RegressivityError("cannot embed: E + mu*A singular at some jump")
    rmap = rmap or build_renormalization(sys.window)

    E = np.eye(sys.dim)
    gaps = []
    for t1, t2, mu in sys.window.gaps():
        L = math.log1p(mu)
        A1 = sys.A(t1)
        B_gap = log_one_plus(mu, A1, mode=mode) / L
        F_gap = phi_fun(mu, A1, mode=mode) / L
        defect = np.linalg.norm(sla.expm(B_gap * L) - (E + mu * A1), 2)
        if defect > _GAP_EXP_TOL * (1.0 + np.linalg.norm(E + mu * A1, 2)):
            raise CertificationError(
                f"gap exponential identity failed at t1={t1} (defect {defect:.2e})")
        gv = None
        if sys.f is not None:
            gv = F_gap @ np.asarray(sys.f(t1), dtype=float).reshape(sys.dim)
        gaps.append(GapConstants(t1, mu, rmap.apply(t1), rmap.apply(t2),
                                 B_gap, F_gap, gv))

    sup_A = 0.0
    min_sv = math.inf
    for t in sys.window.grid:
        At = sys.A(t)
        sup_A = max(sup_A, float(np.linalg.norm(At, 2)))
        min_sv = min(min_sv, float(np.linalg.svd(At, compute_uv=False)[-1]))
    invertible = min_sv > 1e-12
    report = ConditionReport(
        sup_A=sup_A,
        sup_jump_inverse=sys.sup_jump_inverse,
        sup_mu=sys.window.sup_mu,
        min_singular_A=min_sv,
        A_invertible=invertible,
        sup_A_inverse=(1.0 / min_sv) if invertible else None,
    )
    emb = EmbeddedSystem(sys, rmap, mode, gaps, report, sys.f)
    report.sup_B, report.sup_g = emb.bounds()
    return emb


@dataclass
class EmbeddingReport:
    max_deviation: float
    n_pairs: int
    solution_deviation: float | None
    pair_worst: tuple | None = None

    def as_dict(self):
        return {"max_deviation": self.max_deviation, "n_pairs": self.n_pairs,
                "solution_deviation": self.solution_deviation,
                "pair_worst": list(self.pair_worst) if self.pair_worst else None}


def verify_embedding(sys: TimeScaleLinearSystem, emb: EmbeddedSystem,
                     n_pairs: int = 50, seed: int = 0,
                     check_solution: bool = True) -> EmbeddingReport:
    """Sample scale-point pairs and compare Phi_A(t, tau) against
    Phi_B(s(t), s(tau)); optionally check the solution correspondence
    phi(t) = psi(s(t)) for one random forcing and initial condition."""
    rng = np.random.default_rng(seed)
    grid = sys.window.grid
    tm = TransitionMatrix(sys)

    worst = 0.0
    worst_pair = None
    for _ in range(n_pairs):
        i, j = rng.integers(0, len(grid), size=2)
        tau, t = float(grid[min(i, j)]), float(grid[max(i, j)])
        Phi_A = tm(t, tau)
        Phi_B = emb.transition(emb.map.apply(t), emb.map.apply(tau))
        dev = np.linalg.norm(Phi_A - np.real_if_close(Phi_B), 2) / max(
            np.linalg.norm(Phi_A, 2), 1e-300)
        if dev > worst:
            worst, worst_pair = float(dev), (tau, t)

    sol_dev = None
    if check_solution:
        x0 = rng.standard_normal(sys.dim)
        fvals = rng.uniform(-1, 1, size=(len(grid), sys.dim))
        f = GridFunction.from_table(sys.window, grid, fvals, kind="linear")
        forced = sys.with_forcing(f)
        t_min, t_max = sys.window.min_point, sys.window.max_point
        phi = solve_forced(forced, x0, t_min, t_max)
        emb_f = emb.with_forcing(f)
        traj = PsiTrajectory(emb_f, emb.map.apply(t_min), emb.map.apply(t_max))
        emb_f.propagate_forced(emb.map.apply(t_min), emb.map.apply(t_max), x0,
                               collect=traj)
        sol_dev = 0.0
        for t in phi.grid:
            d = np.linalg.norm(phi(t) - np.real_if_close(traj(emb.map.apply(t))))
            sol_dev = max(sol_dev, float(d / max(1.0, np.linalg.norm(phi(t)))))

    return EmbeddingReport(worst, n_pairs, sol_dev, worst_pair)


def pull_back(emb: EmbeddedSystem, ode_solution) -> GridFunction:
    """Restriction of an ODE-side solution through the map:
    phi(t) = psi(s(t)) at scale points."""
    def phi(t):
        return np.real_if_close(np.asarray(ode_solution(emb.map.apply(t))))

    probe = np.asarray(phi(emb.sys.window.grid[0]))
    return GridFunction(emb.sys.window, phi, shape=probe.shape)
