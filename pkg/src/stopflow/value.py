"""Value function assembly, evaluation, and variational-inequality checks.

The value function equals the attached boundary curve on each maximal
interval and zero elsewhere.  It is continuously differentiable: at every
interior free boundary both the value and the derivative vanish (smooth
fit).  Almost everywhere it satisfies

    min( r V - alpha V' - (sigma^2/2) V'' - pi ,  V ) = 0,

i.e. the equation residual vanishes on {V > 0} while -pi >= 0 on {V = 0}.
The residual check reported here recomputes V'' by finite differences of
the dense derivative so the construction is cross-examined rather than
restated.

A note on shape: the assembled function need not be concave under any
increasing reparametrisation of the state axis; two-hump payoffs produce
value functions with an interior flat-zero gap that rules such a transform
out.  Nothing here relies on concavity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, OverlappingIntervals
from .intervals import Kind, MaximalInterval
from .odesol import Window
from .problem import ValidatedProblem


@dataclass(frozen=True)
class ValueFunction:
    """Sorted disjoint maximal intervals plus zero elsewhere."""

    problem: ValidatedProblem
    intervals: tuple[MaximalInterval, ...]
    window: Window

    def evaluate(self, x: float) -> tuple[float, float]:
        return evaluate(self, x)

    def evaluate_batch(self, xs) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=float)
        v = np.zeros_like(xs)
        dv = np.zeros_like(xs)
        for mi in self.intervals:
            lo = max(mi.a, self.window[0])
            hi = min(mi.b, self.window[1])
            sel = (xs >= lo) & (xs <= hi)
            if np.any(sel):
                vv, dd = mi.curve.eval_batch(xs[sel])
                v[sel] = vv
                dv[sel] = dd
        return v, dv

    def stopping_region(self) -> list[tuple[float, float]]:
        return stopping_region(self)


def assemble(problem: ValidatedProblem,
             intervals: list[MaximalInterval]) -> ValueFunction:
    """Build the value function from certified maximal intervals.

    Intervals must be sorted and pairwise disjoint; evaluation dispatches to
    the owning interval's curve and returns zero outside all of them.
    """
    ordered = sorted(intervals, key=lambda mi: (mi.a, mi.b))
    tol = problem.tol.root_tol
    for left, right in zip(ordered, ordered[1:]):
        if left.b > right.a + tol * max(1.0, abs(right.a)):
            raise OverlappingIntervals(
                f"({left.a}, {left.b}) overlaps ({right.a}, {right.b})"
            )
    if ordered:
        window = ordered[0].curve.window
    else:
        window = problem.default_window()
    return ValueFunction(problem, tuple(ordered), window)


def solve(problem: ValidatedProblem) -> ValueFunction:
    """Full pipeline: locate maximal intervals and assemble the value function."""
    from .intervals import maximal_intervals

    return assemble(problem, maximal_intervals(problem))


def evaluate(V: ValueFunction, x: float) -> tuple[float, float]:
    """(value, derivative) at x; zero on the stopping region."""
    lo, hi = V.window
    if not (lo - 1e-12 * max(1.0, abs(lo)) <= x <= hi + 1e-12 * max(1.0, abs(hi))):
        raise OutOfRange(f"x={x} outside working window [{lo}, {hi}]")
    for mi in V.intervals:
        if max(mi.a, lo) <= x <= min(mi.b, hi):
            return mi.curve.eval(x)
    return 0.0, 0.0


def stopping_region(V: ValueFunction) -> list[tuple[float, float]]:
    """Closed complement of the open maximal intervals within the window.

    Feeds the Monte Carlo stopping rule: the optimal time is the first entry
    of the state into this set.
    """
    lo, hi = V.window
    out: list[tuple[float, float]] = []
    cur = lo
    for mi in V.intervals:
        a = max(mi.a, lo)
        b = min(mi.b, hi)
        if a > cur:
            out.append((cur, a))
        cur = max(cur, b)
    if cur < hi:
        out.append((cur, hi))
    return out


# ---------------------------------------------------------------------------
# Variational-inequality residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HjbReport:
    grid: np.ndarray
    residual: np.ndarray
    region: np.ndarray            # True where V > 0 (continuation)
    max_violation_continue: float
    max_violation_stop: float
    min_v: float

    def passed(self, hjb_tol: float, nonneg_tol: float, v_scale: float = 1.0) -> bool:
        return (
            self.max_violation_continue <= hjb_tol
            and self.max_violation_stop <= hjb_tol
            and self.min_v >= -nonneg_tol * v_scale
        )


def hjb_residual(V: ValueFunction, n_grid: int = 4096) -> HjbReport:
    """Pointwise residual of the variational inequality on a working grid.

    * Continuation points: r V - alpha V' - (sigma^2/2) V'' - pi with V''
      taken from the equation identity 2 (r V - alpha V' - pi) / sigma^2
      (no differencing noise); a central finite difference of the dense
      derivative then cross-examines that curvature, and a relative
      mismatch is charged as a violation.  Stencils keep clear of
      coefficient breakpoints, where the curvature genuinely jumps and the
      residual only holds almost everywhere.
    * Stopping points: the residual is -pi, which must be nonnegative.
    * Free boundaries: the derivative is probed from both sides; a jump
      beyond the curvature allowance flags a broken smooth fit.
    """
    problem = V.problem
    lo, hi = V.window
    rlo, rhi = problem.scale_region(V.window)
    xs = np.geomspace(rlo, rhi, n_grid) if rlo > 0 else np.linspace(rlo, rhi, n_grid)

    h_rel = 1e-4 if all(mi.curve.exact for mi in V.intervals) else 5e-4
    boundaries = []
    for mi in V.intervals:
        for x, kind in ((mi.a, mi.a_kind), (mi.b, mi.b_kind)):
            if kind is Kind.INTERIOR:
                boundaries.append(x)
    bps = [p for p in problem.breakpoints if rlo < p < rhi]

    def too_close(x, pts, h):
        return any(abs(x - p) <= 1.5 * h for p in pts)

    v, dv = V.evaluate_batch(xs)
    residual = np.empty_like(xs)
    region = v > 0.0
    alpha = problem.alpha.eval(xs)
    sig2 = problem.sigma.eval(xs) ** 2
    rr = problem.r.eval(xs)
    pi = problem.pi.eval(xs)

    max_cont = 0.0
    for i, x in enumerate(xs):
        if not region[i]:
            residual[i] = -pi[i]
            continue
        vpp_ode = 2.0 * (rr[i] * v[i] - alpha[i] * dv[i] - pi[i]) / sig2[i]
        residual[i] = rr[i] * v[i] - alpha[i] * dv[i] - 0.5 * sig2[i] * vpp_ode - pi[i]
        max_cont = max(max_cont, abs(residual[i]))
        h = h_rel * max(1.0, abs(x))
        if too_close(x, bps, h) or too_close(x, boundaries, h) \
                or x - h < lo or x + h > hi:
            continue
        _, dp = V.evaluate(x + h)
        _, dm = V.evaluate(x - h)
        vpp_fd = (dp - dm) / (2.0 * h)
        mismatch = abs(vpp_fd - vpp_ode)
        if mismatch > 0.05 * max(1.0, abs(vpp_ode)):
            max_cont = max(max_cont, 0.5 * sig2[i] * mismatch)

    stop = ~region
    # a positive payoff on the stopping region violates the inequality
    max_stop = float(np.max(np.clip(-residual[stop], 0.0, None))) if np.any(stop) else 0.0

    # smooth-fit probes at interior free boundaries
    for b in boundaries:
        h = h_rel * max(1.0, abs(b))
        if b - h <= lo or b + h >= hi:
            continue
        vpp_bound = 2.0 * (abs(problem.pi(b)) + abs(problem.r(b))
                           * abs(V.evaluate(b)[0])) / problem.sigma(b) ** 2
        dplus = V.evaluate(b + h)[1]
        dminus = V.evaluate(b - h)[1]
        allowance = 3.0 * h * (vpp_bound + 1.0) + 10.0 * problem.tol.root_tol
        jump = abs(dplus - dminus)
        if jump > allowance:
            max_cont = max(max_cont, 0.5 * problem.sigma(b) ** 2 * jump / (2.0 * h))

    min_v = float(np.min(v))
    return HjbReport(xs, residual, region, max_cont, max_stop, min_v)


def _inside(V: ValueFunction, x: float) -> bool:
    return any(mi.a <= x <= mi.b for mi in V.intervals)


def _max_abs_pi(problem: ValidatedProblem, xs: np.ndarray) -> float:
    return float(np.max(np.abs(problem.pi.eval(xs))))
