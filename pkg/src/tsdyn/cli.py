"""Command-line front end: JSON specs in, CSV/JSON artifacts out.

Exit codes: 0 success, 2 input error, 3 numeric certification failure,
4 structural condition violation (non-regressive system, branch problem,
missing hyperbolicity).
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import (BranchError, CertificationError, ConditionError, DomainError,
               GridFunction, NotHyperbolicError, RegressivityError,
               SpecInputError, TimeScaleLinearSystem, TimeScaleWindow,
               build_profile, build_renormalization, check_regressive,
               classify_stability, embed, generalized_exp, log_one_plus,
               log_ratio, phi_fun, pull_back_and_certify, renormalized_scale,
               solve_bounded_profile, solve_forced, threshold_T,
               transition_matrix, verify_embedding)
from .dichotomy import DichotomyOptions, ParameterFamily, check_family

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CERT = 3
EXIT_CONDITION = 4


@dataclass
class RunConfig:
    """Parsed invocation: subcommand, inputs, numeric options, outputs."""
    command: str
    scale: str | None = None
    system: str | None = None
    forcing: str | None = None
    out: str | None = None
    csv: str | None = None
    h_grid: float | None = None
    ode_tol: float = 1e-10
    quad_tol: float = 1e-10
    gap_tol: float = 10.0
    a_cap: float = 1e3
    lambda_hint: float | None = None
    mode: str = "real"
    seed: int = 0
    extra: dict | None = None


def _fmt(x):
    if isinstance(x, float):
        return float(f"{x:.17g}")
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return _fmt(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": _fmt(obj.real), "im": _fmt(obj.imag)}
    if isinstance(obj, float):
        return _fmt(obj)
    return obj


def _write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tsdyn-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit_json(obj, path: str | None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"
    if path:
        _write_atomic(path, text)
    print(text, end="")


def _emit_csv(header, rows, path: str | None):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row))
    text = "\n".join(lines) + "\n"
    if path:
        _write_atomic(path, text)
    else:
        print(text, end="")


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise SpecInputError(f"cannot read JSON {path}: {err}") from err


def _load_window(cfg: RunConfig) -> TimeScaleWindow:
    if not cfg.scale:
        raise SpecInputError("this subcommand needs --scale")
    spec = _load_json(cfg.scale)
    if cfg.h_grid is not None:
        spec = {**spec, "h_grid": cfg.h_grid}
    return TimeScaleWindow.from_spec(spec)


def _load_system(cfg: RunConfig, window: TimeScaleWindow) -> TimeScaleLinearSystem:
    if not cfg.system:
        raise SpecInputError("this subcommand needs --system")
    spec = _load_json(cfg.system)
    return TimeScaleLinearSystem.from_spec(window, spec, ode_tol=cfg.ode_tol)


def _load_forcing(cfg: RunConfig, window, dim) -> GridFunction | None:
    if not cfg.forcing:
        return None
    spec = _load_json(cfg.forcing)
    from .linear import _coeff_from_spec
    return _coeff_from_spec(window, spec, (dim,))


def _parse_vector(text: str) -> np.ndarray:
    return np.asarray([float(v) for v in text.split(",")], dtype=float)


# -- subcommand handlers -------------------------------------------------------

def _cmd_info(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    out = {"scale": window.describe()}
    if cfg.system:
        sys_ = _load_system(cfg, window)
        out["system"] = {"dim": sys_.dim,
                         "regressivity": check_regressive(sys_).as_dict()}
    _emit_json(out, cfg.out)
    return EXIT_OK


def _cmd_renorm(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    rmap = build_renormalization(window)
    image = renormalized_scale(rmap)
    rows = [(float(t), rmap.apply(float(t))) for t in window.grid]
    _emit_csv(("t", "s"), rows, cfg.csv)
    _emit_json({"t0": rmap.t0, "jump_count": rmap.jump_count,
                "image_window": [image.window_lo, image.window_hi],
                "image_components": image.comps.tolist()}, cfg.out)
    return EXIT_OK


def _cmd_matlog(cfg: RunConfig) -> int:
    extra = cfg.extra or {}
    spec = _load_json(extra["matrix"])
    A = np.asarray(spec["matrix"] if isinstance(spec, dict) else spec, dtype=float)
    mu = float(extra["mu"])
    L = log_one_plus(mu, A, mode=cfg.mode)
    out = {"mu": mu, "log": _complex_matrix(L),
           "log_ratio": _complex_matrix(log_ratio(mu, A, mode=cfg.mode)),
           "phi": _complex_matrix(phi_fun(mu, A, mode=cfg.mode))}
    _emit_json(out, cfg.out)
    return EXIT_OK


def _complex_matrix(M):
    M = np.asarray(M)
    if np.iscomplexobj(M):
        return {"re": M.real.tolist(), "im": M.imag.tolist()}
    return M.tolist()


def _cmd_phi(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    extra = cfg.extra or {}
    t, tau = float(extra["t"]), float(extra["tau"])
    Phi = transition_matrix(sys_, t, tau)
    _emit_json({"t": t, "tau": tau, "Phi": Phi.tolist()}, cfg.out)
    return EXIT_OK


def _cmd_exp(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    extra = cfg.extra or {}
    if extra.get("p") is not None:
        p = GridFunction.constant(window, float(extra["p"]))
    else:
        sys_ = _load_system(cfg, window)
        if sys_.dim != 1:
            raise SpecInputError("exp needs a scalar coefficient")
        p = GridFunction(window, lambda t: float(sys_.A(t)[0, 0]), shape=())
    t, s = float(extra["t"]), float(extra["s"])
    val = generalized_exp(p, t, s, quad_tol=cfg.quad_tol)
    out = {"t": t, "s": s, "value": val if not isinstance(val, complex)
           else {"re": val.real, "im": val.imag}}
    _emit_json(out, cfg.out)
    return EXIT_OK


def _cmd_solve(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    extra = cfg.extra or {}
    if cfg.forcing:
        sys_ = sys_.with_forcing(_load_forcing(cfg, window, sys_.dim))
    x0 = _parse_vector(extra["x0"])
    t_from = float(extra.get("t_from", window.min_point))
    t_to = float(extra.get("t_to", window.max_point))
    traj = solve_forced(sys_, x0, t_from, t_to)
    rows = [(float(t), *[float(v) for v in np.atleast_1d(traj(t))])
            for t in traj.grid]
    _emit_csv(("t", *[f"x{i}" for i in range(sys_.dim)]), rows, cfg.csv)
    _emit_json({"t_from": t_from, "t_to": t_to,
                "final": traj(t_to).tolist(),
                "sup_norm": traj.sup_norm()}, cfg.out)
    return EXIT_OK


def _cmd_stability(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    verdict = classify_stability(sys_)
    _emit_json(verdict.as_dict(), cfg.out)
    return EXIT_OK


def _cmd_embed(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    emb = embed(sys_, mode=cfg.mode)
    gaps = [{"t1": g.t1, "mu": g.mu, "s": [g.s_lo, g.s_hi],
             "B": _complex_matrix(g.B),
             "g": None if g.g is None else _complex_matrix(np.asarray(g.g))}
            for g in emb.gaps]
    image = renormalized_scale(emb.map)
    rows = []
    for s in image.grid:
        B = np.atleast_2d(np.asarray(emb.B(float(s))))
        rows.append((float(s), *[float(v) for v in np.real(B).ravel()]))
    _emit_csv(("s", *[f"B{i}{j}" for i in range(sys_.dim) for j in range(sys_.dim)]),
              rows, cfg.csv)
    _emit_json({"mode": cfg.mode, "t0": emb.map.t0,
                "s_window": [emb.s_lo, emb.s_hi], "gaps": gaps,
                "condition_report": emb.report.as_dict()}, cfg.out)
    return EXIT_OK


def _cmd_verify_embedding(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    emb = embed(sys_, mode=cfg.mode)
    extra = cfg.extra or {}
    n_pairs = int(extra.get("pairs") or 50)
    report = verify_embedding(sys_, emb, n_pairs=n_pairs, seed=cfg.seed)
    _emit_json(report.as_dict(), cfg.out)
    fail_above = extra.get("fail_above")
    if fail_above is not None and report.max_deviation > float(fail_above):
        raise CertificationError(
            f"embedding deviation {report.max_deviation:.3e} above "
            f"{fail_above}")
    return EXIT_OK


def _breaks_to_s(emb, text: str | None):
    if not text:
        return []
    return [emb.map.apply(float(b)) for b in text.split(",")]


def _cmd_dichotomy(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    emb = embed(sys_, mode=cfg.mode)
    extra = cfg.extra or {}
    opts = DichotomyOptions(gap_tol=cfg.gap_tol, a_cap=cfg.a_cap)
    profile = build_profile(emb, _breaks_to_s(emb, extra.get("breaks")),
                            lambda_hint=cfg.lambda_hint, opts=opts)
    _emit_json(profile.as_dict(), cfg.out)
    return EXIT_OK


def _cmd_threshold(cfg: RunConfig) -> int:
    extra = cfg.extra or {}
    T = threshold_T(float(extra["a"]), float(extra["lambda"]), float(extra["alpha"]))
    _emit_json({"a": float(extra["a"]), "lambda": float(extra["lambda"]),
                "alpha": float(extra["alpha"]), "T": T}, cfg.out)
    return EXIT_OK


def _cmd_solve_bounded(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    sys_ = _load_system(cfg, window)
    if cfg.forcing:
        sys_ = sys_.with_forcing(_load_forcing(cfg, window, sys_.dim))
    emb = embed(sys_, mode=cfg.mode)
    extra = cfg.extra or {}
    opts = DichotomyOptions(gap_tol=cfg.gap_tol, a_cap=cfg.a_cap)
    profile = build_profile(emb, _breaks_to_s(emb, extra.get("breaks")),
                            lambda_hint=cfg.lambda_hint, opts=opts)
    result = solve_bounded_profile(emb, profile)
    result = pull_back_and_certify(result, emb, sys_)
    rows = [(float(t), *[float(v) for v in result.phi(t)]) for t in window.grid]
    csv_path = cfg.out
    cert_path = None
    if cfg.out:
        base = cfg.out[:-4] if cfg.out.endswith(".csv") else cfg.out
        csv_path = base + ".csv" if not cfg.out.endswith(".csv") else cfg.out
        cert_path = base + ".json"
    _emit_csv(("t", *[f"phi{i}" for i in range(sys_.dim)]), rows, csv_path)
    _emit_json(result.as_dict(), cert_path)
    return EXIT_OK


def _cmd_check_family(cfg: RunConfig) -> int:
    window = _load_window(cfg)
    extra = cfg.extra or {}
    fam_spec = _load_json(extra["family"])
    entries = fam_spec.get("samples")
    if not entries:
        raise SpecInputError("family spec needs a 'samples' list")
    dim = int(fam_spec.get("dim", 1))
    systems = {}
    for e in entries:
        nu = float(e["nu"])
        systems[nu] = TimeScaleLinearSystem.from_spec(window, e["system"],
                                                      ode_tol=cfg.ode_tol)

    fam = ParameterFamily(window, dim, lambda nu: systems[float(np.atleast_1d(nu)[0])],
                          sorted(systems))
    rmap = build_renormalization(window)
    emb0 = embed(fam.system(fam.samples[0]), rmap)
    s_breaks = _breaks_to_s(emb0, extra.get("breaks"))
    opts = DichotomyOptions(gap_tol=cfg.gap_tol, a_cap=cfg.a_cap)
    report = check_family(fam, rmap, lambda nu: s_breaks, opts=opts)
    _emit_json(report.as_dict(), cfg.out)
    return EXIT_OK


_HANDLERS = {
    "info": _cmd_info,
    "renorm": _cmd_renorm,
    "matlog": _cmd_matlog,
    "phi": _cmd_phi,
    "exp": _cmd_exp,
    "solve": _cmd_solve,
    "stability": _cmd_stability,
    "embed": _cmd_embed,
    "verify-embedding": _cmd_verify_embedding,
    "dichotomy": _cmd_dichotomy,
    "threshold": _cmd_threshold,
    "solve-bounded": _cmd_solve_bounded,
    "check-family": _cmd_check_family,
}


def _add_common(p):
    p.add_argument("--scale", help="window spec JSON")
    p.add_argument("--system", help="system spec JSON")
    p.add_argument("--forcing", help="forcing spec JSON (vector coefficient)")
    p.add_argument("--out", help="output JSON path (default: stdout only)")
    p.add_argument("--csv", help="output CSV path where applicable")
    p.add_argument("--h-grid", type=float, dest="h_grid")
    p.add_argument("--ode-tol", type=float, dest="ode_tol", default=1e-10)
    p.add_argument("--quad-tol", type=float, dest="quad_tol", default=1e-10)
    p.add_argument("--gap-tol", type=float, dest="gap_tol", default=10.0)
    p.add_argument("--a-cap", type=float, dest="a_cap", default=1e3)
    p.add_argument("--lambda-hint", type=float, dest="lambda_hint")
    p.add_argument("--mode", choices=("real", "complex"), default="real")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tsdyn",
        description="linear dynamics on time scales: renormalization, ODE "
                    "embedding, dichotomies, bounded solutions")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, helptext in [
            ("info", "summarize a window (and a system's regressivity)"),
            ("renorm", "emit (t, s(t)) CSV and a map summary"),
            ("stability", "window-based stability verdict"),
            ("embed", "emit the embedded piecewise (B, g) description"),
            ("verify-embedding", "compare scale and embedded transitions")]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "verify-embedding":
            p.add_argument("--pairs", type=int, default=50)
            p.add_argument("--fail-above", type=float, dest="fail_above")

    p = sub.add_parser("matlog", help="matrix log of E + mu*A and derived maps")
    _add_common(p)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--matrix", required=True, help="JSON file with {\"matrix\": [[...]]}")

    p = sub.add_parser("phi", help="transition matrix Phi(t, tau)")
    _add_common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)

    p = sub.add_parser("exp", help="generalized exponential e_p(t, s)")
    _add_common(p)
    p.add_argument("--p", type=float, help="constant scalar coefficient")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--s", type=float, required=True)

    p = sub.add_parser("solve", help="forward solve of x^Delta = A x + f")
    _add_common(p)
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--t-from", type=float, dest="t_from")
    p.add_argument("--t-to", type=float, dest="t_to")

    p = sub.add_parser("dichotomy", help="dichotomy profile on the embedding")
    _add_common(p)
    p.add_argument("--breaks", help="comma-separated break times (scale time)")

    p = sub.add_parser("threshold", help="segment-length threshold T(a, lambda, alpha)")
    _add_common(p)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--lambda", type=float, required=True, dest="lam")
    p.add_argument("--alpha", type=float, required=True)

    p = sub.add_parser("solve-bounded", help="bounded solution of the forced system")
    _add_common(p)
    p.add_argument("--breaks", help="comma-separated break times (scale time)")

    p = sub.add_parser("check-family", help="uniformity report over a parameter family")
    _add_common(p)
    p.add_argument("--family", required=True, help="family spec JSON")
    p.add_argument("--breaks", help="comma-separated break times (scale time)")

    return ap


def _config_from_args(args) -> RunConfig:
    known = {"command", "scale", "system", "forcing", "out", "csv", "h_grid",
             "ode_tol", "quad_tol", "gap_tol", "a_cap", "lambda_hint", "mode",
             "seed"}
    extra = {}
    for key, value in vars(args).items():
        if key not in known and value is not None:
            extra[key if key != "lam" else "lambda"] = value
    cfg = RunConfig(
        command=args.command,
        scale=getattr(args, "scale", None),
        system=getattr(args, "system", None),
        forcing=getattr(args, "forcing", None),
        out=getattr(args, "out", None),
        csv=getattr(args, "csv", None),
        h_grid=getattr(args, "h_grid", None),
        ode_tol=getattr(args, "ode_tol", 1e-10),
        quad_tol=getattr(args, "quad_tol", 1e-10),
        gap_tol=getattr(args, "gap_tol", 10.0),
        a_cap=getattr(args, "a_cap", 1e3),
        lambda_hint=getattr(args, "lambda_hint", None),
        mode=getattr(args, "mode", "real"),
        seed=getattr(args, "seed", 0),
        extra=extra,
    )
    for name, val in (("ode_tol", cfg.ode_tol), ("quad_tol", cfg.quad_tol),
                      ("gap_tol", cfg.gap_tol), ("a_cap", cfg.a_cap)):
        if val is not None and val <= 0:
            raise SpecInputError(f"--{name.replace('_', '-')} must be positive")
    return cfg


def run(cfg: RunConfig) -> int:
    """Dispatch a parsed configuration; returns the process exit code."""
    try:
        return _HANDLERS[cfg.command](cfg)
    except (SpecInputError, DomainError, KeyError, ValueError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}))
        return EXIT_INPUT
    except CertificationError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}))
        return EXIT_CERT
    except (RegressivityError, BranchError, NotHyperbolicError,
            ConditionError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}))
        return EXIT_CONDITION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except SpecInputError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}))
        return EXIT_INPUT
    return run(cfg)


if __name__ == "__main__":
    _sys.exit(main())
