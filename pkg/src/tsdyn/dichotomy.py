"""Exponential dichotomies of embedded systems on segments.

A segment estimate produces stable/unstable subspace bases at sample times,
the split dimension, and certified constants (a, lambda): lambda is the
largest decay rate for which the two-sided inequalities

    |Phi(t, tau) x0| <= a exp(-lambda (t - tau)) |x0|,  t >= tau, x0 stable,
    |Phi(t, tau) x0| <= a exp(+lambda (t - tau)) |x0|,  t <= tau, x0 unstable,

hold at every sampled pair with a prefactor a below a_cap, and a is the
smallest prefactor realizing that rate on the samples.  Constant coefficient
segments split exactly by the sign of eigenvalue real parts; otherwise the
splitting comes from the singular value gap of the end-to-end transition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConditionError, NotHyperbolicError
from .embedding import EmbeddedSystem
from .linear import TimeScaleLinearSystem
from .timescale import TimeScaleWindow


@dataclass
class DichotomyOptions:
    gap_tol: float = 10.0           # required singular value ratio at the split
    a_cap: float = 1e3              # admissible prefactor budget
    n_samples: int = 17
    zero_re_tol: float = 1e-9       # |Re eig| below this: not hyperbolic
    const_tol: float = 1e-11        # B variation below this: constant route
    angle_floor: float = 1e-6       # transversality angles below this fail IV
    lambda_max: float = 50.0
    nonsyndetic_mu: float = 4.0     # graininess beyond this flags the caveat


DEFAULT_OPTIONS = DichotomyOptions()


def _orth(M: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(M)
    # fix signs for determinism
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def subspace_angle(U: np.ndarray, V: np.ndarray) -> float:
    """Smallest principal angle between span(U) and span(V), in (0, pi/2].

    Returns ~0 for subspaces with a nontrivial intersection (coincident
    directions); callers treat that as non-transversal.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[0] == 1:
        U = U.T
    if V.shape[0] == 1:
        V = V.T
    if U.size == 0 or V.size == 0 or U.shape[1] == 0 or V.shape[1] == 0:
        raise ValueError("subspace_angle needs nontrivial bases")
    Qu, Qv = _orth(U), _orth(V)
    svals = np.linalg.svd(Qu.T @ Qv, compute_uv=False)
    return float(np.arccos(min(1.0, float(svals[0]))))


def _complement(Q: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(Q)."""
    n, k = Q.shape
    if k >= n:
        return np.zeros((n, 0))
    full, _ = np.linalg.qr(Q, mode="complete")
    return full[:, k:]


def transversality_angle(U: np.ndarray, V: np.ndarray) -> float:
    """Angle margin for span(U) + span(V) = R^n.

    Measured as the smallest principal angle between the orthogonal
    complements (pi/2 when one complement is trivial, 0 when the sum fails to
    span).  For complementary dimensions this equals the smallest principal
    angle between U and V themselves.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[0] == 1:
        U = U.T
    if V.shape[0] == 1:
        V = V.T
    Up, Vp = _complement(_orth(U)), _complement(_orth(V))
    if Up.shape[1] == 0 or Vp.shape[1] == 0:
        return math.pi / 2.0
    svals = np.linalg.svd(Up.T @ Vp, compute_uv=False)
    return float(np.arccos(min(1.0, float(svals[0]))))


@dataclass
class DichotomySegment:
    s_lo: float
    s_hi: float
    dim_stable: int
    samples: np.ndarray                     # sample times, ascending
    stable_bases: list                      # orthonormal n x dim_stable per sample
    unstable_bases: list
    a: float
    lam: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim_unstable(self) -> int:
        return (self.stable_bases[0].shape[0] if self.stable_bases else
                self.unstable_bases[0].shape[0]) - self.dim_stable

    def _idx(self, s: float) -> int:
        return int(np.argmin(np.abs(self.samples - s)))

    def stable_basis(self, s: float) -> np.ndarray:
        return self.stable_bases[self._idx(s)]

    def unstable_basis(self, s: float) -> np.ndarray:
        return self.unstable_bases[self._idx(s)]

    def _projectors(self, s: float):
        n = self.dim_stable + self.dim_unstable
        Qs, Qu = self.stable_basis(s), self.unstable_basis(s)
        F = np.column_stack([Qs, Qu]) if Qs.shape[1] and Qu.shape[1] else \
            (Qs if Qu.shape[1] == 0 else Qu)
        if Qs.shape[1] == 0:
            return np.zeros((n, n)), np.eye(n)
        if Qu.shape[1] == 0:
            return np.eye(n), np.zeros((n, n))
        Finv = np.linalg.inv(np.column_stack([Qs, Qu]))
        Ps = Qs @ Finv[:self.dim_stable, :]
        return Ps, np.eye(n) - Ps

    def projector_stable(self, s: float) -> np.ndarray:
        return self._projectors(s)[0]

    def projector_unstable(self, s: float) -> np.ndarray:
        return self._projectors(s)[1]

    def as_dict(self):
        return {"s_lo": self.s_lo, "s_hi": self.s_hi,
                "dim_stable": self.dim_stable, "dim_unstable": self.dim_unstable,
                "a": self.a, "lambda": self.lam,
                "diagnostics": {k: v for k, v in self.diagnostics.items()
                                if np.isscalar(v) or isinstance(v, (list, str, bool))}}


def _split_constant(B: np.ndarray, zero_re_tol: float):
    """Exact eigensplit of a constant matrix by sign of real parts.

    Returns (Qs, Qu, lambda_spectral) or raises NotHyperbolicError when the
    spectrum touches the imaginary axis.
    """
    n = B.shape[0]
    eigs = np.linalg.eigvals(B)
    if np.any(np.abs(eigs.real) < zero_re_tol):
        raise NotHyperbolicError(
            "constant coefficient has an eigenvalue with zero real part",
            diagnostics={"eigenvalues": [complex(e) for e in eigs]})
    lam = float(np.min(np.abs(eigs.real)))
    k_s = int(np.sum(eigs.real < 0))
    Qs = _schur_basis(B, stable=True)[0] if k_s else np.zeros((n, 0))
    Qu = _schur_basis(B, stable=False)[0] if k_s < n else np.zeros((n, 0))
    return Qs, Qu, lam


def _schur_basis(B: np.ndarray, stable: bool):
    """Orthonormal basis of the invariant subspace for Re < 0 (or > 0)."""
    sort = (lambda re, im: re < 0) if stable else (lambda re, im: re > 0)
    T, Q, sdim = sla.schur(B, output="real", sort=sort)
    return Q[:, :sdim], sdim


def estimate_dichotomy(emb: EmbeddedSystem, s_lo: float, s_hi: float,
                       lambda_hint: float | None = None,
                       opts: DichotomyOptions | None = None) -> DichotomySegment:
    """Estimate an exponential dichotomy of the embedded system on
    [s_lo, s_hi]; raises NotHyperbolicError when none is certifiable."""
    opts = opts or DEFAULT_OPTIONS
    if s_hi - s_lo < 10 * emb.sys.window.h_grid * _image_scale(emb):
        raise ValueError("segment too short relative to the sampling grid")
    n = emb.dim
    samples = np.linspace(s_lo, s_hi, opts.n_samples)

    # route selection: constant B?  Probe at generic interior offsets so the
    # measure-zero values at isolated-point images (where B(s(t)) = A(t)
    # rather than the gap constant) do not defeat the detection.
    m_probe = 2 * opts.n_samples + 1
    fracs = (np.arange(1, m_probe + 1) - 0.4180339887) / m_probe
    probe = s_lo + (s_hi - s_lo) * fracs
    Bs = [emb.B(float(s)) for s in probe]
    B0 = Bs[0]
    const = all(np.max(np.abs(b - B0)) <= opts.const_tol * (1 + np.max(np.abs(B0)))
                for b in Bs)

    diagnostics = {"route": "constant" if const else "svd", "n_samples": opts.n_samples}

    if const:
        Qs0, Qu0, lam_spec = _split_constant(np.real_if_close(B0), opts.zero_re_tol)
        k_s = Qs0.shape[1]
        stable_bases = [Qs0 for _ in samples]
        unstable_bases = [Qu0 for _ in samples]
        diagnostics["lambda_spectral"] = lam_spec
    else:
        M = np.real_if_close(emb.transition(s_hi, s_lo))
        U, S, Vt = np.linalg.svd(M)
        k_u = int(np.sum(S > 1.0))
        ok = False
        if 1 <= k_u <= n - 1 and S[k_u - 1] / max(S[k_u], 1e-300) >= opts.gap_tol:
            ok = True
        elif k_u == 0 and S[0] <= 1.0 / opts.gap_tol:
            ok = True
        elif k_u == n and S[-1] >= opts.gap_tol:
            ok = True
        if not ok:
            raise NotHyperbolicError(
                "no usable singular-value gap in the end-to-end transition",
                diagnostics={"singular_values": S.tolist(), "split": k_u})
        k_s = n - k_u
        diagnostics["singular_values"] = S.tolist()

        Qu_hi = U[:, :k_u] if k_u else np.zeros((n, 0))
        Qs_lo = Vt[k_u:, :].T if k_s else np.zeros((n, 0))
        stable_bases, unstable_bases = [], []
        for s in samples:
            Fwd = np.real_if_close(emb.transition(float(s), s_lo))
            Qs = _orth(Fwd @ Qs_lo) if k_s else np.zeros((n, 0))
            if k_u:
                Bwd = np.real_if_close(emb.transition(s_hi, float(s)))
                Qu = _orth(np.linalg.solve(Bwd, Qu_hi))
            else:
                Qu = np.zeros((n, 0))
            if k_s and k_u:
                split_angle = subspace_angle(Qs, Qu)
                if split_angle <= opts.angle_floor:
                    raise NotHyperbolicError(
                        "stable/unstable estimates nearly coincide",
                        diagnostics={"angle": split_angle, "at": float(s)})
            stable_bases.append(Qs)
            unstable_bases.append(Qu)
        lam_spec = None

    # transition factors between consecutive samples
    steps = [np.real_if_close(emb.transition(float(samples[j + 1]), float(samples[j])))
             for j in range(len(samples) - 1)]

    def chain(j, i):
        out = np.eye(n)
        for k in range(j, i):
            out = steps[k] @ out
        return out

    # exponentially spaced pair set
    pairs = []
    m = len(samples) - 1
    gap = m
    while gap >= 1:
        for j in range(0, m - gap + 1, max(1, gap // 2)):
            pairs.append((j, j + gap))
        gap //= 2

    ratios = []     # (delta, norm_ratio) entries that must satisfy <= a e^{-lam delta}
    for j, i in pairs:
        delta = float(samples[i] - samples[j])
        M_ji = chain(j, i)
        if k_s:
            ratios.append((delta, float(np.linalg.norm(M_ji @ stable_bases[j], 2))))
        if n - k_s:
            back = np.linalg.solve(M_ji, unstable_bases[i])
            ratios.append((delta, float(np.linalg.norm(back, 2))))

    def a_of(lam):
        worst = 1.0
        for delta, r in ratios:
            worst = max(worst, r * math.exp(lam * delta))
        return worst

    if a_of(0.0) > opts.a_cap:
        raise NotHyperbolicError(
            "required prefactor exceeds a_cap already at rate zero",
            diagnostics={"a_at_zero": a_of(0.0)})

    if const and lam_spec is not None and a_of(lam_spec) <= opts.a_cap:
        lam = lam_spec
    else:
        lo_l, hi_l = 0.0, opts.lambda_max if lambda_hint is None else max(
            opts.lambda_max, 2 * lambda_hint)
        for _ in range(80):
            mid = 0.5 * (lo_l + hi_l)
            if a_of(mid) <= opts.a_cap:
                lo_l = mid
            else:
                hi_l = mid
        lam = lo_l
    if lam <= 1e-9:
        raise NotHyperbolicError("no positive decay rate certifiable",
                                 diagnostics=diagnostics)
    a = a_of(lam)

    return DichotomySegment(float(s_lo), float(s_hi), int(k_s), samples,
                            stable_bases, unstable_bases, float(a), float(lam),
                            diagnostics)


def _image_scale(emb: EmbeddedSystem) -> float:
    src = emb.sys.window.window_hi - emb.sys.window.window_lo
    img = emb.s_hi - emb.s_lo
    return img / src if src > 0 else 1.0


@dataclass
class DichotomyProfile:
    break_times: list                       # window-clamped tau_0 < ... < tau_k
    segments: list                          # DichotomySegment or None per piece
    failures: list                          # diagnostics for failed pieces
    angles: list                            # transversality angle at interior breaks
    cond_segments_hyperbolic: bool          # every piece certified
    cond_dims_increase: bool                # dim E^s strictly increases at breaks
    cond_angles_positive: bool
    min_angle: float | None
    a: float | None                         # max over segments
    lam: float | None                       # min over segments

    @property
    def passes(self) -> bool:
        return (self.cond_segments_hyperbolic and self.cond_dims_increase
                and self.cond_angles_positive)

    def as_dict(self):
        return {
            "break_times": list(self.break_times),
            "segments": [s.as_dict() if s is not None else None for s in self.segments],
            "failures": self.failures,
            "angles": list(self.angles),
            "cond_segments_hyperbolic": self.cond_segments_hyperbolic,
            "cond_dims_increase": self.cond_dims_increase,
            "cond_angles_positive": self.cond_angles_positive,
            "min_angle": self.min_angle,
            "a": self.a,
            "lambda": self.lam,
            "passes": self.passes,
        }


def build_profile(emb: EmbeddedSystem, break_times, lambda_hint=None,
                  opts: DichotomyOptions | None = None) -> DichotomyProfile:
    """Estimate dichotomies on consecutive segments split at break_times
    (renormalized time), then evaluate the junction conditions: strictly
    increasing stable dimensions and transversality angles bounded away from
    zero at every junction."""
    opts = opts or DEFAULT_OPTIONS
    inner = sorted(float(b) for b in break_times)
    for b in inner:
        if not emb.s_lo < b < emb.s_hi:
            raise ValueError(f"break time {b} outside renormalized window "
                             f"[{emb.s_lo}, {emb.s_hi}]")
    taus = [emb.s_lo] + inner + [emb.s_hi]

    segments, failures = [], []
    for j in range(len(taus) - 1):
        try:
            segments.append(estimate_dichotomy(emb, taus[j], taus[j + 1],
                                               lambda_hint, opts))
        except NotHyperbolicError as err:
            segments.append(None)
            failures.append({"segment": j, "message": str(err),
                             **{k: v for k, v in err.diagnostics.items()
                                if isinstance(v, (int, float, str, list, bool))}})

    angles = []
    dims_ok = True
    for j in range(len(segments) - 1):
        left, right = segments[j], segments[j + 1]
        if left is None or right is None:
            continue
        tau = taus[j + 1]
        if left.dim_stable >= right.dim_stable:
            dims_ok = False
        U = left.unstable_basis(tau)
        V = right.stable_basis(tau)
        if U.shape[1] == 0 or V.shape[1] == 0:
            angles.append(math.pi / 2.0 if U.shape[1] or V.shape[1] else 0.0)
        else:
            angles.append(transversality_angle(U, V))

    hyperbolic = all(s is not None for s in segments)
    min_angle = min(angles) if angles else None
    angles_ok = (min_angle is None) or (min_angle >= opts.angle_floor)
    a = max((s.a for s in segments if s is not None), default=None)
    lam = min((s.lam for s in segments if s is not None), default=None)
    return DichotomyProfile(taus, segments, failures, angles, hyperbolic,
                            dims_ok, angles_ok, min_angle, a, lam)


def threshold_T(a: float, lam: float, alpha: float) -> float:
    """Minimal segment length T for which both transversality-margin
    inequalities hold strictly:

        36 a^2 exp(-lam T / 3) < (alpha / 8) sin(alpha / 4)
        3 a (2 / sin(alpha / 2) + 1) exp(-lam T / 3) < 1

    Returned as the larger of the two closed-form solutions (nudged up by a
    relative 1e-12 so both inequalities are strict at the returned value).
    """
    if a <= 0 or lam <= 0:
        raise ValueError("a and lambda must be positive")
    if not 0 < alpha <= math.pi / 2 + 1e-12:
        raise ValueError("alpha must lie in (0, pi/2]")
    T1 = (3.0 / lam) * math.log(288.0 * a * a / (alpha * math.sin(alpha / 4.0)))
    T2 = (3.0 / lam) * math.log(3.0 * a * (2.0 / math.sin(alpha / 2.0) + 1.0))
    T = max(T1, T2, 0.0)
    return T * (1.0 + 1e-12)


@dataclass
class ParameterFamily:
    """Finite sampling of a parameterized family of systems on one window."""
    window: TimeScaleWindow
    dim: int
    system_fn: object                       # nu -> TimeScaleLinearSystem
    samples: list

    def system(self, nu) -> TimeScaleLinearSystem:
        return self.system_fn(nu)


@dataclass
class FamilyReport:
    per_nu: list
    errors: list
    worst_a: float | None
    worst_lambda: float | None
    min_angle: float | None
    min_segment_length: float | None
    threshold: float | None
    meets_threshold: bool | None
    caveats: list

    def as_dict(self):
        return {"per_nu": self.per_nu, "errors": self.errors,
                "worst_a": self.worst_a, "worst_lambda": self.worst_lambda,
                "min_angle": self.min_angle,
                "min_segment_length": self.min_segment_length,
                "threshold": self.threshold,
                "meets_threshold": self.meets_threshold,
                "caveats": self.caveats}


def check_family(fam: ParameterFamily, rmap=None, break_time_fn=None,
                 n_samples: int | None = None,
                 opts: DichotomyOptions | None = None) -> FamilyReport:
    """Embed and profile each sampled parameter value; report worst-case
    constants across the family and whether segment lengths clear the
    threshold at those constants."""
    from .embedding import embed
    from .renormalization import build_renormalization

    opts = opts or DEFAULT_OPTIONS
    rmap = rmap or build_renormalization(fam.window)
    break_time_fn = break_time_fn or (lambda nu: [])
    samples = fam.samples if n_samples is None else fam.samples[:n_samples]

    per_nu, errors = [], []
    worst_a, worst_lam, min_angle, min_len = None, None, None, None
    any_stable_dim = False
    for nu in samples:
        try:
            sys_nu = fam.system(nu)
            emb = embed(sys_nu, rmap)
            profile = build_profile(emb, break_time_fn(nu), opts=opts)
        except Exception as err:   # per-nu failures aggregate, not fatal
            errors.append({"nu": _nu_key(nu), "error": f"{type(err).__name__}: {err}"})
            continue
        entry = {"nu": _nu_key(nu), **profile.as_dict()}
        per_nu.append(entry)
        if profile.passes and profile.a is not None:
            worst_a = profile.a if worst_a is None else max(worst_a, profile.a)
            worst_lam = profile.lam if worst_lam is None else min(worst_lam, profile.lam)
            if profile.min_angle is not None:
                min_angle = (profile.min_angle if min_angle is None
                             else min(min_angle, profile.min_angle))
            seg_len = min(b - a for a, b in zip(profile.break_times[:-1],
                                                profile.break_times[1:]))
            min_len = seg_len if min_len is None else min(min_len, seg_len)
        if any(s is not None and s.dim_stable > 0 for s in profile.segments):
            any_stable_dim = True

    threshold = None
    meets = None
    if worst_a is not None and worst_lam is not None:
        alpha_for_T = min_angle if min_angle is not None else math.pi / 2
        threshold = threshold_T(worst_a, worst_lam, alpha_for_T)
        meets = (min_len is not None) and (min_len > threshold)

    caveats = []
    if fam.window.sup_mu >= opts.nonsyndetic_mu and any_stable_dim:
        caveats.append(
            "scale has large graininess (non-syndetic regime): the segment "
            "conditions cannot hold uniformly unless every system is "
            "uniformly unstable, so stable dimensions found here will not "
            "survive window growth")
    return FamilyReport(per_nu, errors, worst_a, worst_lam, min_angle,
                        min_len, threshold, meets, caveats)


def _nu_key(nu):
    arr = np.atleast_1d(np.asarray(nu, dtype=float))
    return arr.tolist() if arr.size > 1 else float(arr[0])
