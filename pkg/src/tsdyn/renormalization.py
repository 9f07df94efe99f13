"""Renormalization of a time scale onto the real line.

The map s anchors at t0 = inf of the scale's nonnegative part, advances with
slope 1 through the dense parts (in the measure of the scale), and compresses
every gap of length mu to an image gap of length log(1 + mu).  Inside a gap
the map is logarithmic: left-anchored right of t0, right-anchored left of it,
which makes s strictly increasing, continuous and |s(t)| <= |t - t0|.
"""

from __future__ import annotations

import bisect
import math

import numpy as np

from .errors import DomainError
from .timescale import MERGE_TOL, TimeScaleWindow

_DENSE, _GAP = 0, 1


class RenormalizationMap:
    """Piecewise representation of s and its inverse for one window."""

    def __init__(self, window: TimeScaleWindow, t0: float,
                 t_break: np.ndarray, s_break: np.ndarray, kinds: np.ndarray):
        self.window = window
        self.t0 = float(t0)
        self.t_break = t_break
        self.s_break = s_break
        self.kinds = kinds          # per segment between consecutive breaks
        self.s_lo = float(s_break[0])
        self.s_hi = float(s_break[-1])

    @property
    def breakpoints(self):
        """(t, s(t)) pairs at component endpoints (and the anchor t0)."""
        keep = []
        endpoints = set()
        for lo, hi in self.window.comps:
            endpoints.add(float(lo))
            endpoints.add(float(hi))
        endpoints.add(self.t0)
        for t, s in zip(self.t_break, self.s_break):
            if float(t) in endpoints:
                keep.append((float(t), float(s)))
        return keep

    @property
    def jump_count(self) -> int:
        return len(self.window.gaps())

    def _range_tol(self):
        return 1e-9 * max(1.0, abs(self.window.window_lo), abs(self.window.window_hi))

    def apply(self, t: float) -> float:
        """Evaluate s(t) for t anywhere in the mapped window."""
        tol = self._range_tol()
        if t < self.window.window_lo - tol or t > self.window.window_hi + tol:
            raise DomainError(f"t={t} outside the mapped window")
        t = min(max(t, float(self.t_break[0])), float(self.t_break[-1]))
        j = bisect.bisect_right(self.t_break, t) - 1
        j = min(max(j, 0), len(self.kinds) - 1)
        tl, tr = self.t_break[j], self.t_break[j + 1]
        if self.kinds[j] == _DENSE:
            return float(self.s_break[j] + (t - tl))
        if tl >= self.t0 - MERGE_TOL:       # gap right of the anchor
            return float(self.s_break[j] + math.log1p(t - tl))
        return float(self.s_break[j + 1] - math.log1p(tr - t))

    def invert(self, s_val: float) -> float:
        """Inverse of apply; closed form on the logarithmic segments."""
        tol = 1e-9 * max(1.0, abs(self.s_lo), abs(self.s_hi))
        if s_val < self.s_lo - tol or s_val > self.s_hi + tol:
            raise DomainError(f"s={s_val} outside the mapped image")
        s_val = min(max(s_val, self.s_lo), self.s_hi)
        j = bisect.bisect_right(self.s_break, s_val) - 1
        j = min(max(j, 0), len(self.kinds) - 1)
        tl, tr = self.t_break[j], self.t_break[j + 1]
        if self.kinds[j] == _DENSE:
            return float(tl + (s_val - self.s_break[j]))
        if tl >= self.t0 - MERGE_TOL:
            return float(tl + math.expm1(s_val - self.s_break[j]))
        return float(tr - math.expm1(self.s_break[j + 1] - s_val))

    def __call__(self, t: float) -> float:
        return self.apply(t)


def build_renormalization(ts: TimeScaleWindow) -> RenormalizationMap:
    """Construct the renormalizing map for a window.

    Anchors at the smallest scale point >= 0; if the window has no such point
    the maximal scale point is used instead (truncation fallback).
    """
    t0 = None
    for lo, hi in ts.comps:
        if hi >= 0.0:
            t0 = max(float(lo), 0.0)
            break
    if t0 is None:
        t0 = ts.max_point

    breaks = set()
    for lo, hi in ts.comps:
        breaks.add(float(lo))
        breaks.add(float(hi))
    breaks.add(float(t0))
    if ts.window_lo < min(breaks) - MERGE_TOL:
        breaks.add(ts.window_lo)
    if ts.window_hi > max(breaks) + MERGE_TOL:
        breaks.add(ts.window_hi)
    t_break = np.array(sorted(breaks))

    kinds = np.empty(len(t_break) - 1, dtype=np.int8)
    for j in range(len(kinds)):
        mid = 0.5 * (t_break[j] + t_break[j + 1])
        kinds[j] = _DENSE if ts.contains(mid, tol=0.0) else _GAP

    s_break = np.zeros_like(t_break)
    i0 = int(np.searchsorted(t_break, t0))
    # cumulative construction keeps s(t0) exactly 0 and image gap lengths
    # exactly log1p(mu)
    for j in range(i0, len(kinds)):
        dt = t_break[j + 1] - t_break[j]
        ds = dt if kinds[j] == _DENSE else math.log1p(dt)
        s_break[j + 1] = s_break[j] + ds
    for j in range(i0 - 1, -1, -1):
        dt = t_break[j + 1] - t_break[j]
        ds = dt if kinds[j] == _DENSE else math.log1p(dt)
        s_break[j] = s_break[j + 1] - ds

    return RenormalizationMap(ts, t0, t_break, s_break, kinds)


def renormalized_scale(rmap: RenormalizationMap,
                       ts: TimeScaleWindow | None = None) -> TimeScaleWindow:
    """Image window s(T): intervals keep their measure, a gap of length mu
    becomes a gap of length log(1 + mu)."""
    ts = ts or rmap.window
    lookup = {float(t): float(s) for t, s in zip(rmap.t_break, rmap.s_break)}
    comps = [(lookup[float(lo)], lookup[float(hi)]) for lo, hi in ts.comps]
    span_src = ts.window_hi - ts.window_lo
    span_img = rmap.apply(ts.window_hi) - rmap.apply(ts.window_lo)
    h_grid = ts.h_grid * span_img / span_src
    return TimeScaleWindow(
        comps,
        window=(rmap.apply(ts.window_lo), rmap.apply(ts.window_hi)),
        h_grid=h_grid,
    )
