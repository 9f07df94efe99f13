"""Linear systems x^Delta = A(t) x (+ f(t)) directly on a time-scale window.

Transition matrices march along the scale: a jump at a right-scattered point
r contributes the exact factor E + mu(r) A(r); dense stretches integrate the
matrix ODE with adaptive RK45.  The generalized scalar exponential, forced
solves and a window-honest stability classifier live here too.
"""

from __future__ import annotations

import bisect
import cmath
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RegressivityError
from .odes import propagate_affine, propagate_matrix
from .timescale import GridFunction, TimeScaleWindow, _trapezoid_adaptive


class TimeScaleLinearSystem:
    """Coefficient A (matrix GridFunction), optional forcing f, host window.

    A regressivity certificate (min over right-scattered grid points of the
    smallest singular value of E + mu*A) is computed at construction.
    """

    def __init__(self, window: TimeScaleWindow, A: GridFunction,
                 f: GridFunction | None = None, ode_tol: float = 1e-10):
        self.window = window
        if A.shape == ():
            inner = A
            A = GridFunction(window, lambda t: np.atleast_2d(inner(t)), shape=(1, 1))
        if len(A.shape) != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square-matrix valued, got shape {A.shape}")
        self.A = A
        self.dim = A.shape[0]
        if f is not None and f.shape == () and self.dim == 1:
            inner_f = f
            f = GridFunction(window, lambda t: np.atleast_1d(inner_f(t)), shape=(1,))
        if f is not None and f.shape != (self.dim,):
            raise ValueError(f"f must be vector valued of length {self.dim}")
        self.f = f
        self.ode_tol = float(ode_tol)
        self.jump_margin, self.sup_jump_inverse = self._regressivity_certificate()

    def _regressivity_certificate(self):
        margin = math.inf
        sup_inv = 0.0
        E = np.eye(self.dim)
        for t1, _, mu in self.window.gaps():
            smin = float(np.linalg.svd(E + mu * self.A(t1), compute_uv=False)[-1])
            margin = min(margin, smin)
            sup_inv = max(sup_inv, 1.0 / smin if smin > 0 else math.inf)
        if math.isinf(margin):          # no jumps at all
            margin, sup_inv = math.inf, 1.0
        return margin, sup_inv

    def jump_factor(self, t1: float, mu: float) -> np.ndarray:
        return np.eye(self.dim) + mu * self.A(t1)

    def with_forcing(self, f: GridFunction | None) -> "TimeScaleLinearSystem":
        return TimeScaleLinearSystem(self.window, self.A, f, ode_tol=self.ode_tol)

    @classmethod
    def from_spec(cls, window: TimeScaleWindow, spec: dict,
                  ode_tol: float = 1e-10) -> "TimeScaleLinearSystem":
        """System from JSON: {"dim": n, "A": {...}, "f": {...}}.

        Coefficient kinds: "constant" (value), "piecewise_constant"
        (breaks/values, right-continuous), "table" (t/values, linear).
        """
        from .errors import SpecInputError

        dim = int(spec.get("dim", 1))
        if "A" not in spec:
            raise SpecInputError("system spec needs 'A'")
        A = _coeff_from_spec(window, spec["A"], (dim, dim))
        f = None
        if spec.get("f") is not None:
            f = _coeff_from_spec(window, spec["f"], (dim,))
        return cls(window, A, f, ode_tol=ode_tol)


def _coeff_from_spec(window, cspec, shape):
    from .errors import SpecInputError

    kind = cspec.get("kind", "constant")
    if kind == "constant":
        v = np.asarray(cspec["value"], dtype=float)
        if v.shape == () and shape == (1, 1):
            v = v.reshape(1, 1)
        if v.shape == () and shape == (1,):
            v = v.reshape(1)
        if v.shape != shape:
            raise SpecInputError(f"constant value has shape {v.shape}, wanted {shape}")
        return GridFunction.constant(window, v)
    if kind == "piecewise_constant":
        breaks = [float(b) for b in cspec["breaks"]]
        values = np.asarray(cspec["values"], dtype=float)
        if values.shape[1:] != shape or len(values) != len(breaks):
            raise SpecInputError("piecewise_constant breaks/values mismatch")
        return GridFunction.from_table(window, breaks, values, kind="previous")
    if kind == "table":
        ts = cspec["t"]
        values = np.asarray(cspec["values"], dtype=float)
        if values.shape[1:] != shape:
            raise SpecInputError("table values have the wrong shape")
        return GridFunction.from_table(window, ts, values, kind="linear")
    raise SpecInputError(f"unknown coefficient kind {kind!r}")


@dataclass
class RegressivityReport:
    regressive: bool
    uniformly_regressive: bool
    positively_regressive: bool | None      # scalar systems only
    margin: float                           # min singular value of E + mu*A
    sup_inverse_norm: float

    def as_dict(self):
        return {
            "regressive": self.regressive,
            "uniformly_regressive": self.uniformly_regressive,
            "positively_regressive": self.positively_regressive,
            "margin": None if math.isinf(self.margin) else self.margin,
            "sup_inverse_norm": self.sup_inverse_norm,
        }


def check_regressive(sys: TimeScaleLinearSystem,
                     uniform_tol: float = 1e-6) -> RegressivityReport:
    """Grid-evaluated regressivity flags and margin."""
    margin = sys.jump_margin
    regressive = margin > 1e-14
    uniform = regressive and margin >= uniform_tol
    positive = None
    if sys.dim == 1:
        positive = True
        for t1, _, mu in sys.window.gaps():
            if 1.0 + mu * float(sys.A(t1)[0, 0]) <= 0.0:
                positive = False
                break
    return RegressivityReport(regressive, uniform, positive, margin,
                              sys.sup_jump_inverse)


class TransitionMatrix:
    """Query interface Phi(t, tau) with cached per-grid-step factors.

    The sampling grid contains every component endpoint, so consecutive grid
    nodes are joined either by a dense stretch inside one component (RK45
    factor) or by a gap (exact jump factor).  Arbitrary on-scale query points
    fall back to direct marching.
    """

    def __init__(self, sys: TimeScaleLinearSystem):
        self.sys = sys
        self.nodes = sys.window.grid
        self._factors: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def _node_index(self, t: float):
        i = bisect.bisect_left(self.nodes, t - 1e-12)
        if i < len(self.nodes) and abs(self.nodes[i] - t) <= 1e-9 * max(1.0, abs(t)):
            return i
        return None

    def _step_factor(self, i: int) -> np.ndarray:
        with self._lock:
            cached = self._factors.get(i)
        if cached is not None:
            return cached
        a, b = float(self.nodes[i]), float(self.nodes[i + 1])
        if self.sys.window.contains(0.5 * (a + b), tol=0.0):
            F = propagate_matrix(self.sys.A, a, b, np.eye(self.sys.dim),
                                 rtol=self.sys.ode_tol)
        else:
            F = self.sys.jump_factor(a, b - a)
        with self._lock:
            self._factors[i] = F
        return F

    def _march(self, tau: float, t: float) -> np.ndarray:
        """Forward product of factors from tau up to t (tau <= t)."""
        Phi = np.eye(self.sys.dim)
        i, j = self._node_index(tau), self._node_index(t)
        if i is not None and j is not None:
            for k in range(i, j):
                Phi = self._step_factor(k) @ Phi
            return Phi
        for kind, x, y in self.sys.window.structure_steps(tau, t):
            if kind == "jump":
                Phi = self.sys.jump_factor(x, y) @ Phi
            else:
                Phi = propagate_matrix(self.sys.A, x, y, np.eye(self.sys.dim),
                                       rtol=self.sys.ode_tol) @ Phi
        return Phi

    def __call__(self, t: float, tau: float) -> np.ndarray:
        t, tau = self.sys.window.snap(t), self.sys.window.snap(tau)
        if t >= tau:
            return self._march(tau, t)
        if not self.sys.jump_margin > 1e-14:
            raise RegressivityError(
                "backward transition requested but the system is not regressive")
        forward = self._march(t, tau)
        return np.linalg.solve(forward, np.eye(self.sys.dim))


def transition_matrix(sys: TimeScaleLinearSystem, t: float, tau: float) -> np.ndarray:
    return TransitionMatrix(sys)(t, tau)


def generalized_exp(p: GridFunction, t: float, s: float,
                    quad_tol: float = 1e-10):
    """Generalized exponential e_p(t, s) of a scalar coefficient.

    Evaluates the cylinder-transformed delta integral with its dense and jump
    parts split: quadrature of p over interval stretches plus the exact terms
    log(1 + mu*p) at right-scattered points (this is what the cylinder
    transformation contributes there).  Returns a float unless a factor
    1 + mu*p is negative, in which case the principal complex branch is used
    and a complex value may be returned.
    """
    window = p.window
    if p.shape not in ((), (1,), (1, 1)):
        raise ValueError("generalized_exp needs a scalar coefficient")

    def scalar_p(tau):
        return float(np.asarray(p(tau)).reshape(()))

    lo, hi = min(t, s), max(t, s)
    acc = 0.0 + 0.0j
    has_negative = False
    for kind, x, y in window.structure_steps(lo, hi):
        if kind == "dense":
            acc += complex(_trapezoid_adaptive(scalar_p, x, y, window.h_grid, quad_tol))
        else:
            v = 1.0 + y * scalar_p(x)
            if abs(v) <= 1e-14:
                raise RegressivityError(f"1 + mu*p vanishes at t={x}")
            if v < 0:
                has_negative = True
            acc += cmath.log(complex(v))
    val = cmath.exp(acc)
    if t < s:
        val = 1.0 / val
    if not has_negative or abs(val.imag) <= 1e-12 * (1.0 + abs(val)):
        return float(val.real)
    return val


class ScaleTrajectory:
    """A solution sampled along the scale: exact at jumps, dense RK output
    inside intervals.  Callable at any scale point of [t_from, t_to]."""

    def __init__(self, window: TimeScaleWindow, t_from: float, t_to: float):
        self.window = window
        self.t_from = t_from
        self.t_to = t_to
        self._dense = []            # (c, d, OdeSolution)
        self._node_t = []
        self._node_x = []

    def _record(self, t, x):
        self._node_t.append(float(t))
        self._node_x.append(np.array(x))

    @property
    def grid(self) -> np.ndarray:
        g = self.window.grid
        return g[(g >= self.t_from - 1e-12) & (g <= self.t_to + 1e-12)]

    @property
    def values(self) -> np.ndarray:
        return np.stack([self(t) for t in self.grid])

    def __call__(self, t: float) -> np.ndarray:
        for c, d, sol in self._dense:
            if c - 1e-12 <= t <= d + 1e-12:
                return sol(min(max(t, c), d))
        i = bisect.bisect_left(self._node_t, t - 1e-9)
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self._node_t) and abs(self._node_t[j] - t) <= 1e-9 * max(1.0, abs(t)):
                return self._node_x[j]
        raise DomainError(f"trajectory not defined at t={t}")

    def sup_norm(self) -> float:
        return max(float(np.linalg.norm(self(t))) for t in self.grid)


def solve_forced(sys: TimeScaleLinearSystem, x0, t_from: float, t_to: float) -> ScaleTrajectory:
    """Forward solution of x^Delta = A x + f: jump update
    x(sigma) = (E + mu*A) x + mu*f, RK45 with forcing on dense stretches."""
    t_from, t_to = sys.window.snap(t_from), sys.window.snap(t_to)
    if t_to < t_from:
        raise DomainError("solve_forced requires t_from <= t_to")
    x = np.asarray(x0, dtype=float).reshape(sys.dim)
    f = sys.f

    traj = ScaleTrajectory(sys.window, t_from, t_to)
    traj._record(t_from, x)
    for kind, a, b in sys.window.structure_steps(t_from, t_to):
        if kind == "dense":
            gfun = (lambda t: f(t)) if f is not None else (lambda t: np.zeros(sys.dim))
            x, sol = propagate_affine(sys.A, gfun, a, b, x, rtol=sys.ode_tol,
                                      dense=True)
            traj._dense.append((a, b, sol))
            traj._record(b, x)
        else:
            mu = b
            x = sys.jump_factor(a, mu) @ x
            if f is not None:
                x = x + mu * f(a)
            traj._record(a + mu, x)
    return traj


@dataclass
class StabilityOptions:
    unstable_norm: float = 1e3      # growth past this with a rising tail: unstable
    bounded_norm: float = 50.0      # sup ||Phi(t, t0)|| below this: stable
    gamma_cap: float = 10.0         # pairwise sup below this: uniformly stable
    tail_fraction: float = 0.25


@dataclass
class StabilityVerdict:
    verdict: str                    # stable | uniformly_stable | unstable | inconclusive
    sup_norm: float                 # sup over t >= t0 of ||Phi(t, t0)||
    gamma: float                    # sup over pairs t >= tau of ||Phi(t, tau)||
    tail_increasing: bool
    evidence: dict = field(default_factory=dict)

    def as_dict(self):
        return {"verdict": self.verdict, "sup_norm": self.sup_norm,
                "gamma": self.gamma, "tail_increasing": self.tail_increasing,
                **self.evidence}


def classify_stability(sys: TimeScaleLinearSystem,
                       opts: StabilityOptions | None = None) -> StabilityVerdict:
    """Window-honest verdict from transition-norm growth.

    Stability is equated with boundedness of ||Phi(t, t0)|| over the window
    and uniform stability with a pairwise bound ||Phi(t, tau)|| <= gamma;
    ambiguous growth at the window edge yields "inconclusive".
    """
    opts = opts or StabilityOptions()
    tm = TransitionMatrix(sys)
    nodes = tm.nodes
    N = len(nodes)
    factors = [tm._step_factor(i) for i in range(N - 1)]

    norms_from = np.zeros((N, N))       # norms_from[j, i] = ||Phi(t_i, t_j)||, i >= j
    gamma = 1.0
    for j in range(N):
        Phi = np.eye(sys.dim)
        norms_from[j, j] = 1.0
        for i in range(j, N - 1):
            Phi = factors[i] @ Phi
            nrm = float(np.linalg.norm(Phi, 2))
            norms_from[j, i + 1] = nrm
            gamma = max(gamma, nrm)

    g = norms_from[0]
    sup_norm = float(np.max(g))
    tail_n = max(3, int(opts.tail_fraction * N))
    tail = g[-tail_n:]
    tail_increasing = bool(np.all(np.diff(tail) >= -1e-12) and tail[-1] > tail[0])

    if tail_increasing and g[-1] >= opts.unstable_norm:
        verdict = "unstable"
    elif sup_norm <= opts.bounded_norm:
        verdict = "uniformly_stable" if gamma <= opts.gamma_cap else "stable"
    else:
        verdict = "inconclusive"
    return StabilityVerdict(verdict, sup_norm, gamma, tail_increasing,
                            evidence={"n_nodes": N, "final_norm": float(g[-1])})
