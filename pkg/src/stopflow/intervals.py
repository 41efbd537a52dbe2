"""Search for all maximal intervals of the continuation region.

An open interval ]a, b[ is maximal when the two-point boundary solution
v^{[a,b]} is strictly positive inside and the interval is not contained in
any larger interval with that property.  The continuation region of the
stopping problem is exactly the union of the maximal intervals, and the
complement A = { c : v_{c,0} >= 0 on the whole interval } is the stopping
region.  The solver therefore scans the nonnegativity predicate

    P(c)  =  "the curve with v(c) = 0, v'(c) = 0 stays nonnegative"

over anchors in the closure of { pi < 0 }: the connected components of
{ P false } are the maximal intervals, their endpoints are located by
bisection on P, and interior endpoints additionally satisfy the smooth-fit
pair v(b) = v'(b) = 0, recorded as the boundary-residual certificate.

Unbounded state intervals are handled on expanding compact windows; a
domain-edge boundary is accepted once its per-window estimates settle
(linear convergence is accelerated by Richardson extrapolation), and is
declared absent when the stopping region keeps touching the window edge.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import odesol
from .errors import (
    DegenerateRoot,
    OutOfRange,
    OverlappingIntervals,
    ScanTooCoarse,
    TruncationNotConverged,
)
from .odesol import SolutionCurve, Window, first_zero_after, min_over, v_boundary, v_curve
from .problem import ValidatedProblem

_N_ANCHORS = 512
_MAX_RESTARTS = 8
_EDGE_CONFIRM = 2      # consecutive windows with A touching an edge => no edge interval
_ALLFALSE_CONFIRM = 3  # consecutive all-continuation windows => whole line maximal


class Kind(enum.Enum):
    INTERIOR = "interior"
    DOMAIN_EDGE = "domain_edge"


@dataclass(frozen=True)
class BoundaryResidual:
    """The two boundary integrals int (pi/sigma^2) phi_12(z,b) dz and the
    phi_22 analogue, equal to -v(b)/2 and -v'(b)/2 for the anchored curve."""

    r1: float
    r2: float


@dataclass(frozen=True)
class Certificate:
    global_min: float
    residuals: BoundaryResidual
    window: Window


@dataclass(frozen=True)
class MaximalInterval:
    a: float
    b: float
    a_kind: Kind
    b_kind: Kind
    curve: SolutionCurve
    certificate: Certificate

    def contains(self, x: float) -> bool:
        return self.a <= x <= self.b


# ---------------------------------------------------------------------------
# Nonnegativity predicate
# ---------------------------------------------------------------------------

def _nonneg(problem: ValidatedProblem, a: float, window: Window) -> tuple[bool, float]:
    """Refined predicate: does v_{a,0} stay nonnegative over the window?

    Negative grid values settle the question immediately; otherwise grid
    local minima close to zero are polished by bisection on v' so that
    shallow dips near tangency are resolved.
    """
    curve = v_curve(problem, a, 0.0, window)
    xs = curve.grid()
    v, _ = curve.eval_batch(xs)
    scale = curve.scale()
    floor = problem.tol.nonneg_tol * scale
    vmin = float(np.min(v))
    if vmin < -3.0 * floor:
        return False, vmin
    rtol = problem.tol.root_tol
    interior = np.where((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]))[0] + 1
    for i in interior:
        if v[i] > 0.02 * scale:
            continue
        _, val = odesol._refine_local_min(curve, float(xs[i - 1]), float(xs[i + 1]), rtol)
        vmin = min(vmin, val)
        if vmin < -floor:
            return False, vmin
    return vmin >= -floor, vmin


def _anchor_grid(problem: ValidatedProblem, window: Window) -> np.ndarray:
    """Anchors: payoff breakpoints plus a grid restricted to { pi <= 0 }."""
    lo, hi = window
    if lo > 0:
        base = np.geomspace(lo, hi, _N_ANCHORS)
        edge_lo, edge_hi = lo * 1.000001, hi * 0.999999
        eps = 1e-7
        def nudge(p, s):
            return p * (1.0 + s * eps)
    else:
        base = np.linspace(lo, hi, _N_ANCHORS)
        h = (hi - lo) * 1e-7
        edge_lo, edge_hi = lo + h, hi - h
        def nudge(p, s):
            return p + s * h
    pts = set(base.tolist())
    pts.update((edge_lo, edge_hi))
    for bp in problem.pi_breakpoints:
        if lo < bp < hi:
            pts.update((bp, nudge(bp, -1.0), nudge(bp, +1.0)))
    xs = np.array(sorted(pts))
    xs = xs[(xs >= edge_lo) & (xs <= edge_hi)]
    keep = problem.pi.eval(xs) <= 0.0
    return xs[keep]


def _bisect_pred(problem: ValidatedProblem, window: Window,
                 x_true: float, x_false: float) -> float:
    """Locate the predicate boundary between a True and a False anchor.

    The boundary is resolved three digits below the root tolerance: the
    extra bisection steps are logarithmically cheap and keep stopping gaps
    of width comparable to root_tol separable from boundary jitter.
    """
    width_tol = max(1e-3 * problem.tol.root_tol, 1e-14)
    lo, hi = (x_true, x_false) if x_true < x_false else (x_false, x_true)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= width_tol * max(1.0, abs(mid)):
            break
        ok, _ = _nonneg(problem, mid, window)
        if ok == (x_true < x_false):
            # mid behaves like the left bracket end
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# One-window structure scan
# ---------------------------------------------------------------------------

@dataclass
class _Component:
    a: float
    b: float
    a_kind: Kind
    b_kind: Kind


@dataclass
class _Scan:
    window: Window
    components: list[_Component]
    all_false: bool
    touches_lo: bool
    touches_hi: bool


def _coarse_predicate(problem: ValidatedProblem, anchors: np.ndarray,
                      window: Window) -> np.ndarray:
    """Grid-only nonnegativity screen for all anchors at once."""
    grid = odesol._default_grid(window[0], window[1], 1024)
    rlo, rhi = problem.scale_region(window)
    in_region = (grid >= rlo) & (grid <= rhi)
    if not np.any(in_region):
        in_region = np.ones_like(grid, dtype=bool)
    eng = odesol.get_engine(problem)
    if problem.mode == "closed_form":
        vmin = np.empty(anchors.size)
        scale = np.empty(anchors.size)
        for i, a in enumerate(anchors):
            v, _ = eng.batch_fn(float(a), 0.0, window)(grid)
            vmin[i] = v.min()
            scale[i] = np.max(np.abs(v[in_region])) or 1.0
    else:
        flow = eng.flow(window)
        states = flow.propagate_many(anchors, np.zeros_like(anchors))
        v, _ = flow.eval_states_many(states, grid)
        vmin = v.min(axis=1)
        scale = np.maximum(np.max(np.abs(v[:, in_region]), axis=1), 1e-300)
    return vmin >= -problem.tol.nonneg_tol * scale


def _walk(problem: ValidatedProblem, window: Window,
          xs: np.ndarray, P: np.ndarray) -> list[_Component]:
    """Turn the predicate sequence into components of { P false }."""
    lo, hi = window
    components: list[_Component] = []
    open_a: tuple[float, Kind] | None = None
    if not P[0]:
        open_a = (lo, Kind.DOMAIN_EDGE)
    for i in range(xs.size - 1):
        if P[i] == P[i + 1]:
            continue
        boundary = _bisect_pred(problem, window, float(xs[i]), float(xs[i + 1])) \
            if P[i] else _bisect_pred(problem, window, float(xs[i + 1]), float(xs[i]))
        if P[i]:  # True -> False: a component opens
            open_a = (boundary, Kind.INTERIOR)
        else:     # False -> True: the open component closes
            start = open_a if open_a is not None else (lo, Kind.DOMAIN_EDGE)
            components.append(_Component(start[0], boundary, start[1], Kind.INTERIOR))
            open_a = None
    if open_a is not None:
        components.append(_Component(open_a[0], hi, open_a[1], Kind.DOMAIN_EDGE))
    return components


def _scan_window(problem: ValidatedProblem, window: Window) -> _Scan:
    lo, hi = window
    anchors = _anchor_grid(problem, window)
    if anchors.size < 2:
        raise OutOfRange("anchor grid degenerate; payoff negative set too small")

    extra: list[float] = []
    for _ in range(_MAX_RESTARTS):
        xs = np.array(sorted(set(anchors.tolist()) | set(extra)))
        P = _coarse_predicate(problem, xs, window)

        # refine near flips and at the extremes
        refine_idx = {0, xs.size - 1}
        for i in range(xs.size - 1):
            if P[i] != P[i + 1]:
                refine_idx.update((i, i + 1))
        for i in sorted(refine_idx):
            P[i], _ = _nonneg(problem, float(xs[i]), window)

        components = _walk(problem, window, xs, P)

        # verify each component's curve is positive inside; a grazing interior
        # touch with a stopping-set point beside it means the grid missed a gap
        new_probe = _verify_components(problem, window, components)
        if new_probe is None:
            return _Scan(
                window, components,
                all_false=bool(components) and len(components) == 1
                and components[0].a_kind is Kind.DOMAIN_EDGE
                and components[0].b_kind is Kind.DOMAIN_EDGE,
                touches_lo=bool(P[0]),
                touches_hi=bool(P[-1]),
            )
        warnings.warn(
            f"anchor grid missed a stopping gap near x={new_probe:.6g}; rescanning",
            ScanTooCoarse,
        )
        extra.append(new_probe)
    raise TruncationNotConverged("structure scan did not stabilise", extra)


def _verify_components(problem: ValidatedProblem, window: Window,
                       components: list[_Component]) -> float | None:
    """Check interior positivity of each component's curve.

    Returns a probe anchor to add when a hidden stopping gap is detected,
    else None.  Components are trusted once their curve has no interior
    touch, or when probing around a touch finds no nonnegative anchor (the
    touch is then an interior graze of a genuinely merged interval).

    When the left endpoint is interior, the hypothetical sub-pair
    (a, touch) is sharpened on the smooth-fit system first, so probing can
    step beyond the touch at the root-tolerance scale rather than at the
    coarser localization error of the predicate boundary.
    """
    rtol = problem.tol.root_tol
    for comp in components:
        curve = _component_curve(problem, comp, window)
        touch = _interior_touch(problem, curve, comp, window)
        if touch is None:
            continue
        base = touch
        if comp.a_kind is Kind.INTERIOR:
            _, b_ref = _newton_polish_pair(problem, comp.a, touch, window)
            if abs(b_ref - touch) <= 0.1 * max(1.0, abs(touch)):
                base = b_ref
        hi_gap = comp.b if comp.b_kind is Kind.INTERIOR else window[1]
        delta = max((hi_gap - base) / 3.0, 0.0)
        floor_delta = max(0.1 * rtol, 1e-11) * max(1.0, abs(base))
        while delta > floor_delta:
            probe = base + delta
            if probe < hi_gap and problem.pi(min(probe, window[1])) <= 0.0:
                ok, _ = _nonneg(problem, probe, window)
                if ok:
                    return probe
            delta /= 5.0
    return None


def _component_curve(problem: ValidatedProblem, comp: _Component,
                     window: Window) -> SolutionCurve:
    """The boundary curve attached to a component.

    Interior left endpoint: the curve anchored there.  Lower-edge
    components anchor at the interior right endpoint instead; components
    spanning the whole window use the two-point boundary solution.
    """
    if comp.a_kind is Kind.INTERIOR:
        return v_curve(problem, comp.a, 0.0, window)
    if comp.b_kind is Kind.INTERIOR:
        return v_curve(problem, comp.b, 0.0, window)
    return v_boundary(problem, comp.a, comp.b, window)


def _interior_touch(problem: ValidatedProblem, curve: SolutionCurve,
                    comp: _Component, window: Window) -> float | None:
    """First grazing zero strictly inside ]a, b[, if any.

    The detection floor allows for the localization error of the component
    endpoints: anchoring the curve at a boundary known only to root
    tolerance lifts a true tangency off zero proportionally.  A generous
    floor is safe because every candidate is cross-examined by probing for
    nonnegative anchors beside it.
    """
    lo, hi = comp.a, comp.b
    margin = 1e-6 * max(1.0, abs(lo), abs(hi))
    span_lo = lo + margin if comp.a_kind is Kind.INTERIOR else lo
    span_hi = hi - margin if comp.b_kind is Kind.INTERIOR else hi
    if not span_lo < span_hi:
        return None
    xs = odesol._default_grid(span_lo, span_hi, 1024)
    v, _ = curve.eval_batch(xs)
    scale = curve.scale()
    floor = scale * (10.0 * problem.tol.nonneg_tol + 100.0 * problem.tol.root_tol)
    interior = np.where((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]))[0] + 1
    anchor_guard = 10.0 * margin
    for i in interior:
        if v[i] > 0.02 * scale:
            continue
        x, val = odesol._refine_local_min(curve, float(xs[i - 1]), float(xs[i + 1]), 1e-12)
        if abs(x - curve.anchor) <= anchor_guard:
            continue
        if val <= floor:
            return x
    return None


# ---------------------------------------------------------------------------
# Truncation iteration
# ---------------------------------------------------------------------------

@dataclass
class Structure:
    """Converged interval structure on the final working window."""

    window: Window
    intervals: list[MaximalInterval]
    levels: list[int]
    edge_history: dict[str, list[float]]


def _match_pairs(prev: list[_Component], cur: list[_Component], match_tol: float) -> bool:
    """Same interior-pair structure on consecutive windows, up to jitter.

    The jitter allowance is far looser than the boundary accuracy itself:
    predicate boundaries carry an O(nonneg_tol * scale) bias that varies a
    little with the window, and this check only confirms stability.
    """
    prev_int = [c for c in prev if c.a_kind is Kind.INTERIOR and c.b_kind is Kind.INTERIOR]
    cur_int = [c for c in cur if c.a_kind is Kind.INTERIOR and c.b_kind is Kind.INTERIOR]
    if len(prev_int) != len(cur_int):
        return False
    for p, c in zip(prev_int, cur_int):
        tol_a = match_tol * max(1.0, abs(c.a))
        tol_b = match_tol * max(1.0, abs(c.b))
        if abs(p.a - c.a) > tol_a or abs(p.b - c.b) > tol_b:
            return False
    return True


def _edge_value(scan: _Scan, side: str) -> float | None:
    """Interior endpoint of the edge component on the given side, if present."""
    if not scan.components:
        return None
    if side == "lo":
        c = scan.components[0]
        if c.a_kind is Kind.DOMAIN_EDGE and c.b_kind is Kind.INTERIOR:
            return c.b
    else:
        c = scan.components[-1]
        if c.b_kind is Kind.DOMAIN_EDGE and c.a_kind is Kind.INTERIOR:
            return c.a
    return None


def _extrapolate(values: list[float]) -> float:
    """Accelerate a linearly converging sequence (Richardson on the tail)."""
    if len(values) < 3:
        return values[-1]
    d1 = values[-2] - values[-3]
    d2 = values[-1] - values[-2]
    if d1 == 0.0 or d2 == 0.0:
        return values[-1]
    rho = d2 / d1
    if not (0.02 < rho < 0.98):
        return values[-1]
    return values[-1] + d2 * rho / (1.0 - rho)


def _solve_structure(problem: ValidatedProblem) -> Structure:
    with problem._lock:
        cached = problem._cache.get(("structure",))
    if cached is not None:
        return cached

    pol = problem.spec.truncation
    rtol = problem.tol.root_tol
    n = problem.base_level()
    scans: list[_Scan] = []
    levels: list[int] = []
    lo_vals: list[float] = []
    hi_vals: list[float] = []
    lo_absent = hi_absent = 0
    all_false_run = 0

    while n <= pol.n_max:
        scan = _scan_window(problem, problem.truncation_window(n))
        scans.append(scan)
        levels.append(n)

        if scan.all_false:
            all_false_run += 1
            lo_vals.clear()
            hi_vals.clear()
            if all_false_run >= _ALLFALSE_CONFIRM:
                result = _finalize(problem, scan, None, None)
                break
            n += 1
            continue
        all_false_run = 0

        lv = _edge_value(scan, "lo")
        hv = _edge_value(scan, "hi")
        lo_absent = lo_absent + 1 if lv is None else 0
        hi_absent = hi_absent + 1 if hv is None else 0
        if lv is not None:
            lo_vals.append(lv)
        if hv is not None:
            hi_vals.append(hv)

        def edge_done(vals, absent):
            if absent >= _EDGE_CONFIRM:
                return True, None
            if len(vals) >= 2:
                est_prev = _extrapolate(vals[:-1])
                est = _extrapolate(vals)
                if abs(est - est_prev) <= 0.5 * rtol * max(1.0, abs(est)):
                    return True, est
            return False, None

        lo_done, lo_est = edge_done(lo_vals, lo_absent)
        hi_done, hi_est = edge_done(hi_vals, hi_absent)
        match_tol = 1e3 * max(rtol, problem.tol.nonneg_tol)
        pairs_done = len(scans) >= 2 and _match_pairs(
            scans[-2].components, scan.components, match_tol
        )
        if lo_done and hi_done and pairs_done:
            result = _finalize(problem, scan, lo_est, hi_est)
            break
        n += 1
    else:
        raise TruncationNotConverged(
            f"edge boundaries did not settle by window level {pol.n_max}",
            history=lo_vals or hi_vals,
        )

    with problem._lock:
        problem._cache[("structure",)] = Structure(
            scans[-1].window, result, levels,
            {"lo": lo_vals, "hi": hi_vals},
        )
        return problem._cache[("structure",)]


def _finalize(problem: ValidatedProblem, scan: _Scan,
              lo_est: float | None, hi_est: float | None) -> list[MaximalInterval]:
    window = scan.window
    rtol = problem.tol.root_tol
    out: list[MaximalInterval] = []
    comps = [
        _Component(c.a, c.b, c.a_kind, c.b_kind) for c in scan.components
    ]
    # replace edge-component boundaries by their extrapolated limits
    if lo_est is not None and comps and comps[0].a_kind is Kind.DOMAIN_EDGE:
        comps[0].b = lo_est
    if hi_est is not None and comps and comps[-1].b_kind is Kind.DOMAIN_EDGE:
        comps[-1].a = hi_est

    # merge components whose endpoints collide within the merge resolution,
    # unless the predicate certifies a stopping gap between them
    merged: list[_Component] = []
    for c in comps:
        if merged and c.a - merged[-1].b <= 10.0 * rtol * max(1.0, abs(c.a)) \
                and merged[-1].b_kind is Kind.INTERIOR and c.a_kind is Kind.INTERIOR \
                and not _nonneg(problem, 0.5 * (merged[-1].b + c.a), window)[0]:
            warnings.warn(
                f"boundary roots at {merged[-1].b:.9g} and {c.a:.9g} merged",
                DegenerateRoot,
            )
            merged[-1] = _Component(merged[-1].a, c.b, merged[-1].a_kind, c.b_kind)
        else:
            merged.append(c)

    # sharpen interior pairs on the smooth-fit system before certifying;
    # predicate bisection is robust but carries the nonnegativity-floor bias
    scan_endpoints = [(c.a, c.b) for c in merged]
    for comp in merged:
        if comp.a_kind is Kind.INTERIOR and comp.b_kind is Kind.INTERIOR:
            comp.a, comp.b = _newton_polish_pair(problem, comp.a, comp.b, window)
    # next to a degenerate (touching) configuration the Newton iteration can
    # hop across a gap of root-tolerance width; revert the larger mover
    for i in range(len(merged) - 1):
        if merged[i].b > merged[i + 1].a:
            move_left = abs(merged[i].b - scan_endpoints[i][1])
            move_right = abs(merged[i + 1].a - scan_endpoints[i + 1][0])
            j = i if move_left >= move_right else i + 1
            merged[j].a, merged[j].b = scan_endpoints[j]
            if merged[i].b > merged[i + 1].a:
                k = i + 1 if j == i else i
                merged[k].a, merged[k].b = scan_endpoints[k]

    for comp in merged:
        curve = _component_curve(problem, comp, window)
        if comp.a_kind is Kind.INTERIOR and comp.b_kind is Kind.INTERIOR:
            b_ref = _polish_touch(problem, curve, comp.b, window)
            if b_ref is not None:
                comp.b = b_ref
        gmin_window = _certification_window(problem, comp, window)
        _, gmin = min_over(curve, *gmin_window)
        res = _endpoint_residual(curve, comp)
        a_val = problem.m if comp.a_kind is Kind.DOMAIN_EDGE else comp.a
        b_val = problem.M if comp.b_kind is Kind.DOMAIN_EDGE else comp.b
        out.append(MaximalInterval(
            a_val, b_val, comp.a_kind, comp.b_kind, curve,
            Certificate(gmin, res, gmin_window),
        ))
    return out


def _newton_polish_pair(problem: ValidatedProblem, a: float, b: float,
                        window: Window) -> tuple[float, float]:
    """Newton steps on (v_{a,0}(b), v'_{a,0}(b)) = (0, 0).

    The bracketing search already isolated the pair; two or three Newton
    steps remove the tolerance bias of the predicate boundary.  The
    Jacobian is analytic: moving the anchor adds (2 pi(a)/sigma(a)^2) times
    the fundamental-matrix column, and the b-derivatives are v' and the
    curvature from the differential equation itself.
    """
    from . import fundmat as _fm

    fm = _fm.FundamentalMatrix(problem)
    span_guard = 0.1 * max(1.0, abs(b - a))
    a0, b0 = a, b
    for _ in range(3):
        try:
            curve = v_curve(problem, a, 0.0, window)
            v, dv = curve.eval(b)
            sig2b = problem.sigma(b) ** 2
            vpp = 2.0 * (problem.r(b) * v - problem.alpha(b) * dv - problem.pi(b)) / sig2b
            q = 2.0 * problem.pi(a) / problem.sigma(a) ** 2
            ph = fm.phi(a, b)
            j11, j12 = q * ph.phi12, dv
            j21, j22 = q * ph.phi22, vpp
            det = j11 * j22 - j12 * j21
            if det == 0.0 or not math.isfinite(det):
                break
            da = (v * j22 - dv * j12) / det
            db = (dv * j11 - v * j21) / det
            if abs(da) > span_guard or abs(db) > span_guard:
                return a0, b0
            a, b = a - da, b - db
            if max(abs(da), abs(db)) < 1e-14 * max(1.0, abs(a), abs(b)):
                break
        except Exception:
            return a0, b0
    if not (window[0] < a < b < window[1]):
        return a0, b0
    return a, b


def _certification_window(problem: ValidatedProblem, comp: _Component,
                          window: Window) -> Window:
    """Shrink the certification range away from unbounded domain edges.

    Edge components carry the extrapolated limit of an expanding-window
    sequence; exactly at the final window edge their curve can dip by the
    (second-order) extrapolation residue, which is not a defect of the
    interval itself.
    """
    lo, hi = window
    if comp.a_kind is Kind.DOMAIN_EDGE and (problem.m == 0.0 or problem.m == -math.inf):
        lo = lo * 2.0 if lo > 0 else lo + 0.25 * (hi - lo) / 8.0
    if comp.b_kind is Kind.DOMAIN_EDGE and problem.M == math.inf:
        hi = hi / 2.0 if lo > 0 else hi - 0.25 * (hi - lo) / 8.0
    return lo, hi


def _polish_touch(problem: ValidatedProblem, curve: SolutionCurve,
                  b_guess: float, window: Window) -> float | None:
    """Refine a tangential endpoint as the nearby stationary point of v."""
    lo, hi = window
    span = 0.05 * max(1.0, abs(b_guess))
    xl, xr = max(lo, b_guess - span), min(hi, b_guess + span)
    try:
        x, val = odesol._refine_local_min(curve, xl, xr, problem.tol.root_tol * 1e-3)
    except Exception:
        return None
    floor = 100.0 * problem.tol.nonneg_tol * curve.scale()
    if abs(val) <= floor and abs(x - b_guess) <= span:
        return x
    return None


def _endpoint_residual(curve: SolutionCurve, comp: _Component) -> BoundaryResidual:
    """Boundary integrals at the non-anchored interior endpoint."""
    if comp.b_kind is Kind.INTERIOR and comp.a_kind is Kind.INTERIOR:
        v, dv = curve.eval(comp.b)
    elif comp.a_kind is Kind.DOMAIN_EDGE and comp.b_kind is Kind.INTERIOR:
        v, dv = curve.eval(comp.b)   # anchored there: identically ~0
    elif comp.b_kind is Kind.DOMAIN_EDGE and comp.a_kind is Kind.INTERIOR:
        v, dv = curve.eval(comp.a)
    else:
        return BoundaryResidual(0.0, 0.0)
    return BoundaryResidual(-0.5 * v, -0.5 * dv)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def smooth_fit_residual(problem: ValidatedProblem, a: float,
                        window: Window | None = None) -> tuple[float, float] | None:
    """(b, psi) with b the first zero of v_{a,0} after a and psi = v'(b).

    The two-sided boundary equations reduce to psi = 0 with v(b) = 0, so a
    root of psi in the anchor solves the nonlinear boundary pair.  Absent
    when the curve stays positive to the right.
    """
    curve = v_curve(problem, a, 0.0, window)
    b = first_zero_after(curve)
    if b is None:
        return None
    return b, curve.eval(b)[1]


def find_two_sided(problem: ValidatedProblem) -> list[tuple[float, float]]:
    """All interior boundary pairs (a, b), each certified globally nonnegative."""
    structure = _solve_structure(problem)
    return [
        (mi.a, mi.b)
        for mi in structure.intervals
        if mi.a_kind is Kind.INTERIOR and mi.b_kind is Kind.INTERIOR
    ]


def find_one_sided(problem: ValidatedProblem) -> tuple[MaximalInterval | None, MaximalInterval | None]:
    """Domain-edge intervals ]m, a^[ and ]b^, M[ when they exist."""
    structure = _solve_structure(problem)
    lower = upper = None
    for mi in structure.intervals:
        if mi.a_kind is Kind.DOMAIN_EDGE and mi.b_kind is Kind.INTERIOR:
            lower = mi
        elif mi.b_kind is Kind.DOMAIN_EDGE and mi.a_kind is Kind.INTERIOR:
            upper = mi
    return lower, upper


def maximal_intervals(problem: ValidatedProblem) -> list[MaximalInterval]:
    """The full collection, sorted and pairwise disjoint, with certificates.

    When no anchor admits a globally nonnegative curve on any window, the
    whole state interval is the single maximal interval.
    """
    structure = _solve_structure(problem)
    ordered = sorted(structure.intervals, key=lambda mi: (mi.a, mi.b))
    for left, right in zip(ordered, ordered[1:]):
        if left.b > right.a + problem.tol.root_tol * max(1.0, abs(right.a)):
            raise OverlappingIntervals(
                f"maximal intervals overlap: ({left.a}, {left.b}) and ({right.a}, {right.b})"
            )
    return ordered


def solution_window(problem: ValidatedProblem) -> Window:
    """Final compact working window used by the converged structure."""
    return _solve_structure(problem).window
