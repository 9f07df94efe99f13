"""Finite windows of time scales.

A time scale is a closed subset of the real line.  A window truncates it to
[window_lo, window_hi] and stores the truncation as an ordered list of
components, each either a closed interval [a, b] or an isolated point.  The
forward jump sigma, the graininess mu, delta integration and the Hausdorff
distance between windows all live here.

Conventions: sigma at the window's maximal scale point returns that point
(callers needing data beyond the window must widen it); components separated
by a gap below ``MERGE_TOL`` are merged at construction.
"""

from __future__ import annotations

import bisect
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DomainError, SpecInputError

MERGE_TOL = 1e-12   # gaps below this are closed at construction
MEMBER_TOL = 1e-9   # tolerance for "t lies on the scale"


class TimeScaleWindow:
    """Ordered, disjoint components of a time scale inside a window.

    Parameters
    ----------
    components : sequence of floats (isolated points) or (a, b) pairs.
    window : optional (lo, hi); defaults to the hull of the components.
    h_grid : maximum spacing of sampling-grid points inside intervals;
        defaults to 1e-2 * (window length).
    """

    def __init__(self, components, window=None, h_grid=None):
        comps = []
        for c in components:
            if np.isscalar(c):
                a = b = float(c)
            else:
                a, b = float(c[0]), float(c[1])
            if not (math.isfinite(a) and math.isfinite(b)):
                raise SpecInputError("component endpoints must be finite")
            if b < a:
                raise SpecInputError(f"interval [{a}, {b}] reversed")
            comps.append([a, b])
        if not comps:
            raise SpecInputError("window needs at least one component")
        comps.sort(key=lambda p: p[0])

        merged = [comps[0]]
        for lo, hi in comps[1:]:
            plo, phi = merged[-1]
            if lo < phi - MERGE_TOL:
                raise SpecInputError(
                    f"components overlap near t={lo} (previous ends at {phi})")
            if lo - phi < MERGE_TOL:
                merged[-1][1] = max(phi, hi)
            else:
                merged.append([lo, hi])
        self.comps = np.asarray(merged, dtype=float)

        if window is None:
            window = (self.comps[0, 0], self.comps[-1, 1])
        self.window_lo, self.window_hi = float(window[0]), float(window[1])
        if not self.window_lo < self.window_hi:
            raise SpecInputError("window_lo must be < window_hi")
        if self.comps[0, 0] < self.window_lo - MERGE_TOL or \
                self.comps[-1, 1] > self.window_hi + MERGE_TOL:
            raise SpecInputError("components stick out of the window")

        self.h_grid = float(h_grid) if h_grid is not None else \
            1e-2 * (self.window_hi - self.window_lo)
        if self.h_grid <= 0:
            raise SpecInputError("h_grid must be positive")

        self._lows = self.comps[:, 0].tolist()
        self._grid = self._build_grid()

    # -- construction helpers ------------------------------------------------

    @classmethod
    def uniform(cls, lo, hi, h=1.0, offset=0.0, window=None, h_grid=None):
        """Isolated points offset + k*h inside [lo, hi] (h-Z grids)."""
        k0 = math.ceil((lo - offset) / h - 1e-12)
        k1 = math.floor((hi - offset) / h + 1e-12)
        if k1 < k0:
            raise SpecInputError("uniform generator produced no points")
        pts = offset + h * np.arange(k0, k1 + 1)
        return cls(pts, window=window or (lo, hi), h_grid=h_grid)

    @classmethod
    def real_interval(cls, lo, hi, h_grid=None):
        return cls([(lo, hi)], h_grid=h_grid)

    @classmethod
    def power(cls, base, n_min, n_max, window=None, h_grid=None):
        """Isolated points base**n for n in [n_min, n_max]."""
        pts = [float(base) ** n for n in range(int(n_min), int(n_max) + 1)]
        return cls(pts, window=window, h_grid=h_grid)

    @classmethod
    def from_spec(cls, spec: dict) -> "TimeScaleWindow":
        """Build a window from its JSON form.

        ``{"window": [lo, hi], "components": [{"interval": [a, b]},
        {"point": a}, ...]}``; each entry (or the whole spec) may instead be a
        generator: ``{"generator": "uniform", "h": 1.0}``,
        ``{"generator": "power", "base": 2.0, "n_min": 0, "n_max": 8}`` or
        ``{"generator": "union", "parts": [...]}``.
        """
        window = spec.get("window")
        h_grid = spec.get("h_grid")
        comps = cls._expand_entries(spec, window)
        return cls(comps, window=window, h_grid=h_grid)

    @staticmethod
    def _expand_entries(spec, window):
        if "components" in spec:
            entries = spec["components"]
        elif "generator" in spec:
            entries = [spec]
        else:
            raise SpecInputError("window spec needs 'components' or 'generator'")
        comps = []
        for e in entries:
            if "interval" in e:
                comps.append(tuple(e["interval"]))
            elif "point" in e:
                comps.append(float(e["point"]))
            elif "generator" in e:
                comps.extend(TimeScaleWindow._expand_generator(e, window))
            else:
                raise SpecInputError(f"unknown component entry {e!r}")
        return comps

    @staticmethod
    def _expand_generator(e, window):
        kind = e["generator"]
        if kind == "uniform":
            if window is None:
                raise SpecInputError("uniform generator needs a window")
            h = float(e.get("h", 1.0))
            off = float(e.get("offset", 0.0))
            k0 = math.ceil((window[0] - off) / h - 1e-12)
            k1 = math.floor((window[1] - off) / h + 1e-12)
            return [off + h * k for k in range(k0, k1 + 1)]
        if kind == "power":
            base = float(e["base"])
            pts = [base ** n for n in range(int(e["n_min"]), int(e["n_max"]) + 1)]
            if window is not None:
                pts = [p for p in pts if window[0] - MERGE_TOL <= p <= window[1] + MERGE_TOL]
            return pts
        if kind == "union":
            out = []
            for part in e["parts"]:
                out.extend(TimeScaleWindow._expand_entries(part, window))
            return out
        raise SpecInputError(f"unknown generator {kind!r}")

    # -- basic queries -------------------------------------------------------

    @property
    def min_point(self) -> float:
        return float(self.comps[0, 0])

    @property
    def max_point(self) -> float:
        return float(self.comps[-1, 1])

    @property
    def grid(self) -> np.ndarray:
        """Sampling grid: all endpoints, isolated points, and interval
        interior points at spacing <= h_grid."""
        return self._grid

    def _build_grid(self):
        pts = []
        for lo, hi in self.comps:
            if hi > lo:
                n = max(1, math.ceil((hi - lo) / self.h_grid))
                pts.append(np.linspace(lo, hi, n + 1))
            else:
                pts.append(np.array([lo]))
        return np.concatenate(pts)

    def component_of(self, t: float, tol: float = MEMBER_TOL):
        """Index of the component containing t, or None."""
        i = bisect.bisect_right(self._lows, t) - 1
        for j in (i, i + 1):
            if 0 <= j < len(self.comps):
                lo, hi = self.comps[j]
                if lo - tol <= t <= hi + tol:
                    return j
        return None

    def contains(self, t: float, tol: float = MEMBER_TOL) -> bool:
        return self.component_of(t, tol) is not None

    def snap(self, t: float) -> float:
        """Clamp t onto the scale; raise DomainError if it is not on it."""
        i = self.component_of(t)
        if i is None:
            raise DomainError(f"t={t} is not on the scale")
        lo, hi = self.comps[i]
        return float(min(max(t, lo), hi))

    def sigma(self, t: float) -> float:
        """Forward jump: next scale point strictly after t, or t itself at
        right-dense points and at the window's maximal point."""
        i = self.component_of(t)
        if i is None:
            raise DomainError(f"t={t} is not on the scale")
        lo, hi = self.comps[i]
        t = min(max(t, lo), hi)
        if t < hi - MERGE_TOL:
            return t          # scale points accumulate from the right
        if i + 1 < len(self.comps):
            return float(self.comps[i + 1, 0])
        return float(hi)      # maximal point: truncation convention

    def mu(self, t: float) -> float:
        """Graininess sigma(t) - t."""
        return self.sigma(t) - self.snap(t)

    def right_scattered_points(self) -> np.ndarray:
        """Points with mu > 0: right ends of components with a successor."""
        return self.comps[:-1, 1].copy()

    def gaps(self):
        """(t1, t2, mu) for each gap between consecutive components."""
        out = []
        for i in range(len(self.comps) - 1):
            t1 = float(self.comps[i, 1])
            t2 = float(self.comps[i + 1, 0])
            out.append((t1, t2, t2 - t1))
        return out

    @property
    def sup_mu(self) -> float:
        g = [mu for _, _, mu in self.gaps()]
        return max(g) if g else 0.0

    @property
    def measure(self) -> float:
        """Lebesgue measure of the component union."""
        return float(np.sum(self.comps[:, 1] - self.comps[:, 0]))

    def structure_steps(self, a: float, b: float) -> Iterator[tuple]:
        """Decompose the scale between points a <= b into ("dense", c, d)
        stretches and ("jump", t1, mu) gap crossings."""
        a, b = self.snap(a), self.snap(b)
        if b < a:
            raise DomainError("structure_steps requires a <= b")
        i = self.component_of(a)
        t = a
        while t < b - MERGE_TOL:
            lo, hi = self.comps[i]
            if t < hi - MERGE_TOL:
                d = min(hi, b)
                yield ("dense", t, float(d))
                t = float(d)
                continue
            # t is the right end of component i; cross the gap
            t2 = float(self.comps[i + 1, 0])
            yield ("jump", float(hi), t2 - float(hi))
            t = t2
            i += 1

    def describe(self) -> dict:
        return {
            "window": [self.window_lo, self.window_hi],
            "n_components": int(len(self.comps)),
            "n_isolated": int(np.sum(self.comps[:, 0] == self.comps[:, 1])),
            "measure": self.measure,
            "sup_mu": self.sup_mu,
            "n_jumps": len(self.gaps()),
            "h_grid": self.h_grid,
        }

    def __repr__(self):
        return (f"TimeScaleWindow([{self.window_lo}, {self.window_hi}], "
                f"{len(self.comps)} components)")


class GridFunction:
    """A function defined on (at least) the scale points of a window.

    Wraps an evaluable callable together with the window's sampling grid;
    values are scalars, vectors or matrices of a fixed shape.
    """

    def __init__(self, window: TimeScaleWindow, func: Callable[[float], np.ndarray],
                 shape=None):
        self.window = window
        self.func = func
        if shape is None:
            probe = np.asarray(func(float(window.grid[0])), dtype=float)
            shape = probe.shape
        self.shape = tuple(shape)

    @property
    def grid(self) -> np.ndarray:
        return self.window.grid

    def __call__(self, t: float) -> np.ndarray:
        v = np.asarray(self.func(float(t)))
        if v.shape != self.shape:
            raise ValueError(f"GridFunction value at t={t} has shape {v.shape}, "
                             f"expected {self.shape}")
        return v

    @classmethod
    def constant(cls, window, value):
        v = np.asarray(value, dtype=float)
        return cls(window, lambda t: v, shape=v.shape)

    @classmethod
    def zero(cls, window, shape=()):
        v = np.zeros(shape)
        return cls(window, lambda t: v, shape=v.shape)

    @classmethod
    def from_table(cls, window, ts, values, kind="linear"):
        """Interpolating table: "linear" within components, or "previous"
        (right-continuous step function)."""
        ts = np.asarray(ts, dtype=float)
        values = np.asarray(values, dtype=float)
        if len(ts) != len(values):
            raise SpecInputError("table lengths differ")
        order = np.argsort(ts)
        ts, values = ts[order], values[order]
        shape = values.shape[1:]

        if kind == "previous":
            def f(t):
                i = np.searchsorted(ts, t + 1e-15, side="right") - 1
                return values[max(i, 0)]
        elif kind == "linear":
            flat = values.reshape(len(ts), -1)

            def f(t):
                cols = [np.interp(t, ts, flat[:, j]) for j in range(flat.shape[1])]
                return np.asarray(cols).reshape(shape)
        else:
            raise SpecInputError(f"unknown table kind {kind!r}")
        return cls(window, f, shape=shape)

    def sup_norm(self) -> float:
        """Max over the sampling grid of the pointwise 2-norm."""
        worst = 0.0
        for t in self.grid:
            v = self(t)
            nrm = np.linalg.norm(v, 2) if v.ndim else abs(float(v))
            worst = max(worst, float(nrm))
        return worst


# -- module-level operations -------------------------------------------------

def sigma(ts: TimeScaleWindow, t: float) -> float:
    return ts.sigma(t)


def graininess(ts: TimeScaleWindow, t: float) -> float:
    return ts.mu(t)


def _trapezoid_adaptive(f, c, d, h0, tol, max_refine=20):
    """Composite trapezoid with doubling refinement; returns the Richardson
    extrapolation of the last two estimates.  f maps float -> ndarray."""
    n = max(1, math.ceil((d - c) / h0))
    xs = np.linspace(c, d, n + 1)
    vals = np.stack([np.asarray(f(x), dtype=float) for x in xs])
    h = (d - c) / n
    prev = h * (np.sum(vals, axis=0) - 0.5 * (vals[0] + vals[-1]))
    for _ in range(max_refine):
        mids = (xs[:-1] + xs[1:]) / 2.0
        mid_vals = np.stack([np.asarray(f(x), dtype=float) for x in mids])
        cur = prev / 2.0 + (h / 2.0) * np.sum(mid_vals, axis=0)
        if np.max(np.abs(cur - prev)) < tol:
            return (4.0 * cur - prev) / 3.0
        xs = np.sort(np.concatenate([xs, mids]))
        vals = None  # not reused; midpoint recursion carries the sums
        h /= 2.0
        prev = cur
    return (4.0 * cur - prev) / 3.0


def delta_integral(ts: TimeScaleWindow, f, a: float, b: float,
                   quad_tol: float = 1e-10) -> np.ndarray:
    """Delta integral of f over [a, b] on the scale.

    Lebesgue part: adaptive composite trapezoid over the interval components
    intersected with [a, b]; jump part: exact sum f(t_i) * mu(t_i) over scale
    points t_i in [a, b) with positive graininess.
    """
    a, b = ts.snap(a), ts.snap(b)
    if b < a:
        raise DomainError("delta_integral requires a <= b")
    total = np.zeros(np.shape(np.asarray(f(a), dtype=float)))
    pieces = [s for s in ts.structure_steps(a, b)]
    n_dense = sum(1 for s in pieces if s[0] == "dense") or 1
    for kind, x, y in pieces:
        if kind == "dense":
            total = total + _trapezoid_adaptive(f, x, y, ts.h_grid,
                                                quad_tol / n_dense)
        else:  # jump at x with graininess y
            total = total + np.asarray(f(x), dtype=float) * y
    return total


def _dist_to_window(ts: TimeScaleWindow, x: float) -> float:
    i = bisect.bisect_right(ts._lows, x) - 1
    best = math.inf
    for j in (i, i + 1):
        if 0 <= j < len(ts.comps):
            lo, hi = ts.comps[j]
            if lo <= x <= hi:
                return 0.0
            best = min(best, abs(x - lo), abs(x - hi))
    if i < 0:
        best = min(best, abs(x - ts.comps[0, 0]))
    return best


def hausdorff_distance(ts1: TimeScaleWindow, ts2: TimeScaleWindow) -> float:
    """Two-sided Hausdorff distance between the component unions.

    Exact: the directed sup over a union of intervals/points is attained at a
    component endpoint or at a gap midpoint of the other set lying inside an
    interval, so a finite candidate set suffices.
    """
    def directed(src: TimeScaleWindow, dst: TimeScaleWindow) -> float:
        cands = list(src.comps[:, 0]) + list(src.comps[:, 1])
        for i in range(len(dst.comps) - 1):
            m = 0.5 * (dst.comps[i, 1] + dst.comps[i + 1, 0])
            if src.contains(m, tol=0.0):
                cands.append(m)
        return max(_dist_to_window(dst, x) for x in cands)

    return max(directed(ts1, ts2), directed(ts2, ts1))
