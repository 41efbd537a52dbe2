"""Command-line front end.

Commands
--------
solve      locate the maximal intervals, print them, write value_function.csv
verify     run the variational-inequality and invariant checks; exit 0 iff all pass
mc         Monte Carlo estimate of the payoff under the computed rule vs V(x0)
hitprob    two-barrier hitting probability: formula vs simulation
plot-data  CSVs sampling the payoff, the value function and candidate curves

Problem configuration is a JSON document:

    {
      "interval": {"m": 0, "M": "inf"},
      "gbm": {"d1": -2, "d2": -1, "sigma": 1.0},        # or {"alpha","sigma","r"}
      "coefficients": {
        "pi": [ {"from": 0, "to": 1, "terms": [{"c": -1, "p": 0}]}, ... ],
        "alpha": [...], "sigma": [...], "r": [...]       # unless "gbm" given
      },
      "solver": {"ode_rtol": ..., "ode_atol": ..., "root_tol": ...,
                 "nonneg_tol": ..., "hjb_tol": ..., "mode": "auto"},
      "mc": {"dt": 1e-3, "horizon": 200, "n_paths": 200000, "seed": 7,
             "scheme": "exact_gbm"}
    }

"inf"/"-inf" are accepted as interval sentinels.  Unknown keys are rejected
with a JSON-pointer path.  Exit codes: 0 success, 1 verification failure,
2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import numpy as np

from . import intervals, mc, value
from .errors import ConfigError, StopflowError
from .intervals import Kind
from .problem import (
    PiecewiseExpr,
    ProblemSpec,
    Segment,
    Tolerances,
    ValidatedProblem,
    gbm_coefficients,
    single_power,
    constant,
    validate,
)

_SOLVER_KEYS = {"ode_rtol", "ode_atol", "root_tol", "nonneg_tol", "hjb_tol", "mode"}
_MC_KEYS = {"dt", "horizon", "n_paths", "seed", "scheme", "stop_eps"}
_CSV_PRECISION = 12


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _num(value, path: str) -> float:
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"{path}: expected a number or 'inf'/'-inf', got {value!r}")


def _expr(items, path: str, m: float, M: float) -> PiecewiseExpr:
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}: expected a non-empty list of segments")
    segs = []
    for i, raw in enumerate(items):
        p = f"{path}/{i}"
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: expected an object")
        unknown = set(raw) - {"from", "to", "terms"}
        if unknown:
            raise ConfigError(f"{p}/{sorted(unknown)[0]}: unknown key")
        for key in ("from", "to", "terms"):
            if key not in raw:
                raise ConfigError(f"{p}/{key}: missing")
        terms = []
        if not isinstance(raw["terms"], list) or not raw["terms"]:
            raise ConfigError(f"{p}/terms: expected a non-empty list")
        for j, t in enumerate(raw["terms"]):
            tp = f"{p}/terms/{j}"
            if not isinstance(t, dict):
                raise ConfigError(f"{tp}: expected an object")
            unknown = set(t) - {"c", "p"}
            if unknown:
                raise ConfigError(f"{tp}/{sorted(unknown)[0]}: unknown key")
            if "c" not in t or "p" not in t:
                raise ConfigError(f"{tp}: needs 'c' and 'p'")
            terms.append((_num(t["c"], f"{tp}/c"), _num(t["p"], f"{tp}/p")))
        segs.append(Segment(_num(raw["from"], f"{p}/from"),
                            _num(raw["to"], f"{p}/to"), tuple(terms)))
    try:
        return PiecewiseExpr(tuple(segs))
    except StopflowError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(path: str) -> tuple[ProblemSpec, mc.PathConfig, str]:
    """Read a JSON problem file; returns (spec, mc config, solver mode)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config_dict(doc)


def parse_config_dict(doc: dict) -> tuple[ProblemSpec, mc.PathConfig, str]:
    if not isinstance(doc, dict):
        raise ConfigError("/: expected a JSON object")
    unknown = set(doc) - {"interval", "gbm", "coefficients", "solver", "mc"}
    if unknown:
        raise ConfigError(f"/{sorted(unknown)[0]}: unknown key")

    interval = doc.get("interval")
    if not isinstance(interval, dict) or "m" not in interval or "M" not in interval:
        raise ConfigError("/interval: needs 'm' and 'M'")
    unknown = set(interval) - {"m", "M"}
    if unknown:
        raise ConfigError(f"/interval/{sorted(unknown)[0]}: unknown key")
    m = _num(interval["m"], "/interval/m")
    M = _num(interval["M"], "/interval/M")

    coeffs = doc.get("coefficients", {})
    if not isinstance(coeffs, dict):
        raise ConfigError("/coefficients: expected an object")
    unknown = set(coeffs) - {"alpha", "sigma", "r", "pi"}
    if unknown:
        raise ConfigError(f"/coefficients/{sorted(unknown)[0]}: unknown key")
    if "pi" not in coeffs:
        raise ConfigError("/coefficients/pi: missing")
    pi = _expr(coeffs["pi"], "/coefficients/pi", m, M)

    gbm = doc.get("gbm")
    if gbm is not None:
        if not isinstance(gbm, dict):
            raise ConfigError("/gbm: expected an object")
        if any(k in coeffs for k in ("alpha", "sigma", "r")):
            raise ConfigError("/gbm: conflicts with explicit coefficients")
        if set(gbm) == {"d1", "d2", "sigma"}:
            d1 = _num(gbm["d1"], "/gbm/d1")
            d2 = _num(gbm["d2"], "/gbm/d2")
            sig = _num(gbm["sigma"], "/gbm/sigma")
            al, rr = gbm_coefficients(d1, d2, sig)
        elif set(gbm) == {"alpha", "sigma", "r"}:
            al = _num(gbm["alpha"], "/gbm/alpha")
            sig = _num(gbm["sigma"], "/gbm/sigma")
            rr = _num(gbm["r"], "/gbm/r")
        else:
            raise ConfigError("/gbm: expected keys {d1,d2,sigma} or {alpha,sigma,r}")
        if sig <= 0:
            raise ConfigError("/gbm/sigma: must be positive")
        alpha_expr = single_power(al, 1.0, lo=min(0.0, m), hi=M)
        sigma_expr = single_power(sig, 1.0, lo=min(0.0, m), hi=M)
        r_expr = constant(rr, lo=min(0.0, m), hi=M)
    else:
        for key in ("alpha", "sigma", "r"):
            if key not in coeffs:
                raise ConfigError(f"/coefficients/{key}: missing (no gbm shortcut given)")
        alpha_expr = _expr(coeffs["alpha"], "/coefficients/alpha", m, M)
        sigma_expr = _expr(coeffs["sigma"], "/coefficients/sigma", m, M)
        r_expr = _expr(coeffs["r"], "/coefficients/r", m, M)

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("/solver: expected an object")
    unknown = set(solver) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"/solver/{sorted(unknown)[0]}: unknown key")
    mode = solver.get("mode", "auto")
    if mode not in ("auto", "closed_form", "numerical"):
        raise ConfigError(f"/solver/mode: unknown mode {mode!r}")
    tol_kwargs = {k: _num(v, f"/solver/{k}") for k, v in solver.items() if k != "mode"}
    try:
        tol = Tolerances(**tol_kwargs)
    except StopflowError as exc:
        raise ConfigError(f"/solver: {exc}") from exc

    mc_doc = doc.get("mc", {})
    if not isinstance(mc_doc, dict):
        raise ConfigError("/mc: expected an object")
    unknown = set(mc_doc) - _MC_KEYS
    if unknown:
        raise ConfigError(f"/mc/{sorted(unknown)[0]}: unknown key")
    mc_kwargs = dict(mc_doc)
    if "scheme" in mc_kwargs and mc_kwargs["scheme"] not in ("exact_gbm", "euler"):
        raise ConfigError(f"/mc/scheme: unknown scheme {mc_kwargs['scheme']!r}")
    for key in ("dt", "horizon", "stop_eps"):
        if key in mc_kwargs:
            mc_kwargs[key] = _num(mc_kwargs[key], f"/mc/{key}")
    for key in ("n_paths", "seed"):
        if key in mc_kwargs:
            if not isinstance(mc_kwargs[key], int) or isinstance(mc_kwargs[key], bool):
                raise ConfigError(f"/mc/{key}: expected an integer")
    try:
        path_cfg = mc.PathConfig(**mc_kwargs)
    except (StopflowError, TypeError) as exc:
        raise ConfigError(f"/mc: {exc}") from exc

    try:
        spec = ProblemSpec(m=m, M=M, alpha=alpha_expr, sigma=sigma_expr,
                           r=r_expr, pi=pi, tolerances=tol)
    except StopflowError as exc:
        raise ConfigError(f"/: {exc}") from exc
    return spec, path_cfg, mode


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply --set dotted.path=value entries onto the raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not an object")
        node[parts[-1]] = val
    return doc


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"%.{_CSV_PRECISION}g" % x


def _write_csv(path: str, header: list[str], rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _echo_config(args, spec: ProblemSpec, cfg: mc.PathConfig, mode: str) -> None:
    print(f"# config: {args.config}")
    print(f"# interval: ({spec.m}, {spec.M})  mode: {mode}")
    print(f"# tolerances: root_tol={spec.tolerances.root_tol:g} "
          f"nonneg_tol={spec.tolerances.nonneg_tol:g} hjb_tol={spec.tolerances.hjb_tol:g}")
    print(f"# mc: scheme={cfg.scheme} dt={cfg.dt:g} horizon={cfg.horizon:g} "
          f"n_paths={cfg.n_paths} seed={cfg.seed}")


def _load(args) -> tuple[ValidatedProblem, mc.PathConfig]:
    with open(args.config) as fh:
        doc = json.load(fh)
    doc = _apply_overrides(doc, args.set or [])
    spec, cfg, mode = parse_config_dict(doc)
    if getattr(args, "seed", None) is not None:
        cfg = mc.PathConfig(dt=cfg.dt, horizon=cfg.horizon, scheme=cfg.scheme,
                            seed=args.seed, n_paths=cfg.n_paths, stop_eps=cfg.stop_eps)
    if getattr(args, "paths", None) is not None:
        cfg = mc.PathConfig(dt=cfg.dt, horizon=cfg.horizon, scheme=cfg.scheme,
                            seed=cfg.seed, n_paths=args.paths, stop_eps=cfg.stop_eps)
    prob = validate(spec, mode=mode)
    _echo_config(args, spec, cfg, prob.mode)
    return prob, cfg


def _interval_lines(res: list[intervals.MaximalInterval]) -> list[str]:
    lines = []
    for mi in res:
        cert = mi.certificate
        lines.append(
            f"  ({mi.a:.9g}, {mi.b:.9g})  kinds=({mi.a_kind.value}, {mi.b_kind.value})  "
            f"min={cert.global_min:.3e}  residuals=({cert.residuals.r1:.3e}, "
            f"{cert.residuals.r2:.3e})"
        )
    return lines


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_solve(args) -> int:
    prob, _ = _load(args)
    res = intervals.maximal_intervals(prob)
    vf = value.assemble(prob, res)
    print(f"maximal intervals ({len(res)}):")
    for line in _interval_lines(res):
        print(line)
    xs = _sample_grid(vf, args.grid)
    v, dv = vf.evaluate_batch(xs)
    out = os.path.join(args.out, "value_function.csv")
    _write_csv(out, ["x", "V", "dV"], zip(xs.tolist(), v.tolist(), dv.tolist()))
    print(f"wrote {out}")
    return 0


def _cmd_verify(args) -> int:
    prob, _ = _load(args)
    res = intervals.maximal_intervals(prob)
    vf = value.assemble(prob, res)
    rep = value.hjb_residual(vf, n_grid=args.grid or 4096)
    tol = prob.tol

    checks: list[tuple[str, bool, str]] = []
    ordered = sorted(res, key=lambda mi: mi.a)
    disjoint = all(l.b <= r.a + tol.root_tol * max(1.0, abs(r.a))
                   for l, r in zip(ordered, ordered[1:]))
    checks.append(("intervals pairwise disjoint", disjoint, f"count={len(res)}"))

    covered = True
    for seg in prob.pi.segments:
        if seg.value(np.array([0.5 * (seg.lo + min(seg.hi, vf.window[1]))]))[0] > 0:
            mid = 0.5 * (max(seg.lo, vf.window[0]) + min(seg.hi, vf.window[1]))
            covered &= any(mi.a <= mid <= mi.b for mi in res)
    checks.append(("positive payoff covered", covered, ""))

    worst_min = min((mi.certificate.global_min for mi in res), default=0.0)
    scale = max(mi.curve.scale() for mi in res) if res else 1.0
    checks.append(("curves globally nonnegative", worst_min >= -tol.nonneg_tol * scale,
                   f"min={worst_min:.3e}"))

    worst_fit = 0.0
    for mi in res:
        for x, kind in ((mi.a, mi.a_kind), (mi.b, mi.b_kind)):
            if kind is Kind.INTERIOR:
                v, dv = mi.curve.eval(x)
                worst_fit = max(worst_fit, abs(v), abs(dv))
    checks.append(("smooth fit at interior boundaries", worst_fit <= 1e-6,
                   f"worst={worst_fit:.3e}"))

    hjb_scale = max(1.0, float(np.max(np.abs(prob.pi.eval(rep.grid)))))
    checks.append(("equation residual on continuation",
                   rep.max_violation_continue <= tol.hjb_tol * hjb_scale,
                   f"max={rep.max_violation_continue:.3e}"))
    checks.append(("payoff nonpositive on stopping set",
                   rep.max_violation_stop <= tol.hjb_tol * hjb_scale,
                   f"max={rep.max_violation_stop:.3e}"))
    checks.append(("value nonnegative", rep.min_v >= -tol.nonneg_tol * max(1.0, scale),
                   f"min V={rep.min_v:.3e}"))

    if prob.gbm is not None and prob.mode == "closed_form":
        ok, worst = _check_sigma_scaling(prob)
        checks.append(("volatility scaling law", ok, f"worst rel={worst:.3e}"))

    print("verification report:")
    all_ok = True
    for name, ok, info in checks:
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({info})" if info else ""))
        all_ok &= ok
    print(f"intervals: {len(res)}")
    for line in _interval_lines(res):
        print(line)
    return 0 if all_ok else 1


def _check_sigma_scaling(prob: ValidatedProblem) -> tuple[bool, float]:
    """Doubling sigma^2 at fixed roots halves the value function."""
    g = prob.gbm
    sig2 = g.sigma * math.sqrt(2.0)
    al2, r2 = gbm_coefficients(g.d1, g.d2, sig2)
    spec2 = ProblemSpec(
        m=prob.m, M=prob.M,
        alpha=single_power(al2, 1.0, lo=min(0.0, prob.m), hi=prob.M),
        sigma=single_power(sig2, 1.0, lo=min(0.0, prob.m), hi=prob.M),
        r=constant(r2, lo=min(0.0, prob.m), hi=prob.M),
        pi=prob.pi, tolerances=prob.spec.tolerances,
    )
    prob2 = validate(spec2)
    vf1 = value.solve(prob)
    vf2 = value.solve(prob2)
    # sample interval interiors: next to a free boundary the ratio is
    # ill-conditioned because both solves carry their own boundary rounding
    xs = []
    for mi in vf1.intervals:
        a = max(mi.a, vf1.window[0], vf2.window[0])
        b = min(mi.b, vf1.window[1], vf2.window[1])
        w = b - a
        xs.extend(np.linspace(a + 0.15 * w, b - 0.15 * w, 10))
    xs = np.array(xs)
    v1, _ = vf1.evaluate_batch(xs)
    v2, _ = vf2.evaluate_batch(xs)
    ref = np.maximum(np.abs(v1), 1e-12)
    worst = float(np.max(np.abs(v1 - 2.0 * v2) / ref))
    return worst <= 1e-8, worst


def _cmd_mc(args) -> int:
    prob, cfg = _load(args)
    vf = value.solve(prob)
    rule = vf.stopping_region()
    x0 = args.x0
    if x0 is None:
        raise ConfigError("--x0 is required for mc")
    v0 = vf.evaluate(x0)[0]
    est = mc.simulate_payoff(prob, rule, x0, cfg)
    z = (est.mean - v0) / est.std_error if est.std_error > 0 else 0.0
    print(f"V({x0:g}) = {v0:.6f}")
    print(f"estimate = {est.mean:.6f} +- {est.std_error:.6f}  "
          f"(n={est.n_paths}, truncated={est.truncated_fraction:.2e})")
    print(f"z-score = {z:+.2f}")
    if est.truncated_fraction >= 1e-3:
        print("warning: more than 0.1% of paths hit the horizon")
    return 0


def _cmd_hitprob(args) -> int:
    prob, cfg = _load(args)
    if args.a is None or args.b is None or args.x0 is None:
        raise ConfigError("hitprob needs --a, --b and --x0")
    p = mc.hitting_probability(prob, args.a, args.b, args.x0)
    freq, se = mc.estimate_hit_prob(prob, args.a, args.b, args.x0, cfg)
    z = (freq - p) / se if se > 0 else 0.0
    print(f"formula  = {p:.6f}")
    print(f"simulated = {freq:.6f} +- {se:.6f}  (z = {z:+.2f})")
    return 0


def _cmd_plot_data(args) -> int:
    prob, _ = _load(args)
    res = intervals.maximal_intervals(prob)
    vf = value.assemble(prob, res)
    xs = _sample_grid(vf, args.grid)
    v, dv = vf.evaluate_batch(xs)
    out_v = os.path.join(args.out, "value_function.csv")
    _write_csv(out_v, ["x", "V", "dV"], zip(xs.tolist(), v.tolist(), dv.tolist()))

    rows = []
    pi_vals = prob.pi.eval(xs)
    for x, p in zip(xs.tolist(), pi_vals.tolist()):
        rows.append((x, "pi", p, 0.0))
    for mi in res:
        anchor = mi.curve.anchor
        cid = f"v0@{anchor:.6g}"
        cv, cdv = mi.curve.eval_batch(xs)
        rows.extend((x, cid, float(a), float(b))
                    for x, a, b in zip(xs.tolist(), cv, cdv))
    out_c = os.path.join(args.out, "curves.csv")
    _write_csv(out_c, ["x", "curve_id", "v", "dv"], rows)

    rep = value.hjb_residual(vf, n_grid=args.grid or 2048)
    out_h = os.path.join(args.out, "hjb.csv")
    _write_csv(out_h, ["x", "residual", "region"],
               zip(rep.grid.tolist(), rep.residual.tolist(),
                   ["continue" if r else "stop" for r in rep.region]))
    print(f"wrote {out_v}, {out_c}, {out_h}")
    return 0


def _sample_grid(vf: value.ValueFunction, n: int | None) -> np.ndarray:
    n = n or 1024
    lo, hi = vf.problem.scale_region(vf.window)
    return np.geomspace(lo, hi, n) if lo > 0 else np.linspace(lo, hi, n)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stopflow",
        description="Free-boundary solver for optimal stopping with running rewards",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to a JSON problem file")
        p.add_argument("--set", action="append", metavar="KEY=VAL",
                       help="override a config entry, e.g. solver.mode=numerical")
        p.add_argument("--grid", type=int, default=None, help="output grid size")
        p.add_argument("--out", default=".", help="output directory for CSV files")
        p.add_argument("--seed", type=int, default=None, help="override mc.seed")
        p.add_argument("--paths", type=int, default=None, help="override mc.n_paths")

    p = sub.add_parser("solve", help="compute the free boundary and value function")
    common(p)
    p = sub.add_parser("verify", help="run the invariant and residual checks")
    common(p)
    p = sub.add_parser("mc", help="Monte Carlo check of the computed rule")
    common(p)
    p.add_argument("--x0", type=float, default=None, help="starting state")
    p = sub.add_parser("hitprob", help="two-barrier hitting probability check")
    common(p)
    p.add_argument("--x0", type=float, default=None, help="starting state")
    p.add_argument("--a", type=float, default=None, help="lower barrier")
    p.add_argument("--b", type=float, default=None, help="upper barrier")
    p = sub.add_parser("plot-data", help="write CSVs for external plotting")
    common(p)
    return ap


_COMMANDS = {
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "mc": _cmd_mc,
    "hitprob": _cmd_hitprob,
    "plot-data": _cmd_plot_data,
}


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StopflowError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())
