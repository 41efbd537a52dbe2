"""Solution curves of r v - alpha v' - (sigma^2/2) v'' = pi.

Two families are constructed:

* ``v_curve(problem, a, d, window)``: the solution with v(a) = 0 and
  v'(a) = d, equal to d * phi12(a, x) - int_a^x (2 pi / sigma^2)
  phi12(z, x) dz.
* ``v_boundary(problem, a, b, window)``: the unique solution with
  v(a) = v(b) = 0, well defined because phi12(a, b) > 0.

Curves are immutable and carry a dense (v, v') evaluator over a compact
working window.  On GBM problems the evaluator is exact (closed-form
antiderivatives); otherwise it interpolates the dense output of the
adaptive integrator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import fundmat
from .errors import IntegratorFailure, NonPositivePhi12, OutOfRange, OutOfWindow
from .fundmat import PiecewiseFlow
from .problem import PowerWeightedIntegral, ValidatedProblem

Window = tuple[float, float]

_GRID_N = 2048
_GEOM_RATIO = 50.0  # windows wider than this ratio get geometric grids


def _default_grid(lo: float, hi: float, n: int = _GRID_N) -> np.ndarray:
    if lo > 0 and hi / lo > _GEOM_RATIO:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------------------
# Curve objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolutionCurve:
    """One solution (v, v') with a dense evaluator over a working window."""

    problem: ValidatedProblem
    anchor: float
    d: float
    window: Window
    provenance: str              # 'initial' or 'boundary'
    exact: bool                  # closed-form evaluator?
    _batch: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

    def eval_batch(self, xs) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=float)
        lo, hi = self.window
        if xs.size and (xs.min() < lo - 1e-12 * max(1.0, abs(lo)) or
                        xs.max() > hi + 1e-12 * max(1.0, abs(hi))):
            raise OutOfWindow(f"evaluation outside window [{lo}, {hi}]")
        return self._batch(np.clip(xs, lo, hi))

    def eval(self, x: float) -> tuple[float, float]:
        scalar = getattr(self, "_scalar", None)
        if scalar is not None:
            x = float(x)
            lo, hi = self.window
            if x < lo - 1e-12 * max(1.0, abs(lo)) or x > hi + 1e-12 * max(1.0, abs(hi)):
                raise OutOfWindow(f"evaluation outside window [{lo}, {hi}]")
            return scalar(min(max(x, lo), hi))
        v, dv = self.eval_batch(np.array([float(x)]))
        return float(v[0]), float(dv[0])

    def grid(self, n: int = _GRID_N) -> np.ndarray:
        return _default_grid(self.window[0], self.window[1], n)

    def scale(self) -> float:
        """max |v| over the payoff action region; reference for relative floors."""
        cached = getattr(self, "_scale_cache", None)
        if cached is None:
            rlo, rhi = self.problem.scale_region(self.window)
            v, _ = self.eval_batch(_default_grid(rlo, rhi, 512))
            cached = float(np.max(np.abs(v))) or 1.0
            object.__setattr__(self, "_scale_cache", cached)
        return cached


def eval(curve: SolutionCurve, x: float) -> tuple[float, float]:  # noqa: A001
    """Evaluate (v, v') at x within the curve's window."""
    return curve.eval(x)


# ---------------------------------------------------------------------------
# Closed-form engine (GBM)
# ---------------------------------------------------------------------------

class GbmCurveEngine:
    """Exact curves for GBM data via closed-form weighted antiderivatives.

    With roots d1 < d2 and tables F_i(x) = int z**(-d_i - 1) pi(z) dz,

        v_{a,0}(x) = -2 / (sigma^2 (d2 - d1)) *
                     (x**d2 (F2(x) - F2(a)) - x**d1 (F1(x) - F1(a))).

    The d * phi12(a, x) part of a general initial slope is added from the
    closed-form fundamental matrix.
    """

    def __init__(self, problem: ValidatedProblem):
        if problem.gbm is None:
            raise OutOfRange("closed-form engine requires GBM coefficients")
        self.problem = problem
        g = problem.gbm
        self.d1, self.d2 = g.d1, g.d2
        self.pref = -2.0 / (g.sigma**2 * (g.d2 - g.d1))

    def _tables(self, window: Window) -> tuple[PowerWeightedIntegral, PowerWeightedIntegral]:
        key = ("gbm_tables", window)
        with self.problem._lock:
            tabs = self.problem._cache.get(key)
            if tabs is None:
                lo, hi = window
                tabs = (
                    PowerWeightedIntegral(self.problem.pi, -self.d1 - 1.0, lo, hi),
                    PowerWeightedIntegral(self.problem.pi, -self.d2 - 1.0, lo, hi),
                )
                self.problem._cache[key] = tabs
        return tabs

    def batch_fn(self, a: float, d: float, window: Window):
        t1, t2 = self._tables(window)
        d1, d2, pref = self.d1, self.d2, self.pref

        def batch(xs: np.ndarray):
            f1 = t1.between(a, xs)
            f2 = t2.between(a, xs)
            x_d1 = np.power(xs, d1)
            x_d2 = np.power(xs, d2)
            v = pref * (x_d2 * f2 - x_d1 * f1)
            dv = pref * (d2 * x_d2 / xs * f2 - d1 * x_d1 / xs * f1)
            if d != 0.0:
                rho = xs / a
                r1 = np.power(rho, d1)
                r2 = np.power(rho, d2)
                v = v + d * a * (r2 - r1) / (d2 - d1)
                dv = dv + d * (d2 * np.power(rho, d2 - 1.0) - d1 * np.power(rho, d1 - 1.0)) / (d2 - d1)
            return v, dv

        return batch

    def scalar_fn(self, a: float, d: float, window: Window):
        t1, t2 = self._tables(window)
        d1, d2, pref = self.d1, self.d2, self.pref
        fa1 = t1.value_scalar(a)
        fa2 = t2.value_scalar(a)

        def scalar(x: float) -> tuple[float, float]:
            f1 = t1.value_scalar(x) - fa1
            f2 = t2.value_scalar(x) - fa2
            x_d1 = x**d1
            x_d2 = x**d2
            v = pref * (x_d2 * f2 - x_d1 * f1)
            dv = pref * (d2 * x_d2 / x * f2 - d1 * x_d1 / x * f1)
            if d != 0.0:
                rho = x / a
                r1 = rho**d1
                r2 = rho**d2
                v += d * a * (r2 - r1) / (d2 - d1)
                dv += d * (d2 * rho ** (d2 - 1.0) - d1 * rho ** (d1 - 1.0)) / (d2 - d1)
            return v, dv

        return scalar

    def curve(self, a: float, d: float, window: Window) -> SolutionCurve:
        curve = SolutionCurve(
            self.problem, a, d, window, "initial", True, self.batch_fn(a, d, window)
        )
        object.__setattr__(curve, "_scalar", self.scalar_fn(a, d, window))
        return curve


# ---------------------------------------------------------------------------
# Numerical engine
# ---------------------------------------------------------------------------

class FlowCurveEngine:
    """Curves interpolated from the piecewise dense fundamental solution."""

    def __init__(self, problem: ValidatedProblem):
        self.problem = problem

    def flow(self, window: Window) -> PiecewiseFlow:
        key = ("flow", window)
        with self.problem._lock:
            fl = self.problem._cache.get(key)
            if fl is None:
                fl = PiecewiseFlow(self.problem, window[0], window[1])
                self.problem._cache[key] = fl
        return fl

    def curve(self, a: float, d: float, window: Window) -> SolutionCurve:
        fl = self.flow(window)
        states = fl.propagate(a, np.array([0.0, float(d)]))

        def batch(xs: np.ndarray):
            return fl.eval_states(states, xs)

        return SolutionCurve(self.problem, a, d, window, "initial", False, batch)


def get_engine(problem: ValidatedProblem):
    key = ("curve_engine", problem.mode)
    with problem._lock:
        eng = problem._cache.get(key)
        if eng is None:
            eng = (
                GbmCurveEngine(problem)
                if problem.mode == "closed_form"
                else FlowCurveEngine(problem)
            )
            problem._cache[key] = eng
    return eng


# ---------------------------------------------------------------------------
# Public constructors
# ---------------------------------------------------------------------------

def _resolve_window(problem: ValidatedProblem, window: Window | None) -> Window:
    if window is None:
        return problem.default_window()
    lo, hi = window
    if not (lo < hi):
        raise OutOfRange("window bounds must increase")
    return float(lo), float(hi)


def v_curve(problem: ValidatedProblem, a: float, d: float,
            window: Window | None = None) -> SolutionCurve:
    """Solution with v(a) = 0 and v'(a) = d over the working window."""
    window = _resolve_window(problem, window)
    if not (window[0] <= a <= window[1]):
        raise OutOfRange(f"anchor {a} outside window {window}")
    return get_engine(problem).curve(float(a), float(d), window)


def v_boundary(problem: ValidatedProblem, a: float, b: float,
               window: Window | None = None) -> SolutionCurve:
    """The unique solution with v(a) = v(b) = 0.

    Its initial slope is d = -v_{a,0}(b) / phi12(a, b); positivity of
    phi12(a, b) for a < b guarantees uniqueness on validated problems.
    """
    window = _resolve_window(problem, window)
    if not (a < b):
        raise OutOfRange("need a < b")
    fm = fundmat.FundamentalMatrix(problem)
    p12 = fm.phi(a, b).phi12
    if not p12 > 0:
        raise NonPositivePhi12(f"phi12({a}, {b}) = {p12} <= 0")
    base = v_curve(problem, a, 0.0, window)
    d = -base.eval(b)[0] / p12
    curve = v_curve(problem, a, d, window)
    out = SolutionCurve(
        problem, curve.anchor, curve.d, curve.window, "boundary",
        curve.exact, curve._batch,
    )
    scalar = getattr(curve, "_scalar", None)
    if scalar is not None:
        object.__setattr__(out, "_scalar", scalar)
    return out


def reference_values(problem: ValidatedProblem, a: float, d: float,
                     xs) -> tuple[np.ndarray, np.ndarray]:
    """Single-shot re-integration of the augmented system from the anchor.

    Independent of the curve machinery above (no piecewise flow, no closed
    form): chains ``solve_ivp`` runs between breakpoints outward from ``a``.
    Used as a self-consistency oracle.
    """
    xs = np.asarray(xs, dtype=float)
    out_v = np.empty_like(xs)
    out_dv = np.empty_like(xs)

    def term_val(expr, x):
        return expr(float(x))

    def rhs(x, y):
        sig2 = term_val(problem.sigma, x) ** 2
        return np.array([
            y[1],
            (2.0 * term_val(problem.r, x) / sig2) * y[0]
            - (2.0 * term_val(problem.alpha, x) / sig2) * y[1]
            - 2.0 * term_val(problem.pi, x) / sig2,
        ])

    for side in (-1, 1):
        sel = (xs >= a) if side == 1 else (xs < a)
        pts = np.sort(xs[sel]) if side == 1 else np.sort(xs[sel])[::-1]
        if pts.size == 0:
            continue
        if side == 1:
            stops = [p for p in problem.breakpoints if a < p < pts[-1]]
        else:
            stops = [p for p in problem.breakpoints if pts[-1] < p < a]
        stops = sorted(stops, reverse=(side == -1))
        y = np.array([0.0, float(d)])
        cur = float(a)
        vals = {}
        targets = list(pts)
        for target in targets:
            # integrate piecewise to the next requested point
            while True:
                nxt = None
                for s in stops:
                    if (side == 1 and cur < s < target) or (side == -1 and target < s < cur):
                        nxt = s
                        break
                leg_end = nxt if nxt is not None else target
                if leg_end != cur:
                    res = solve_ivp(rhs, (cur, leg_end), y, method="RK45",
                                    rtol=problem.tol.ode_rtol, atol=problem.tol.ode_atol)
                    if not res.success:
                        raise IntegratorFailure(res.message)
                    y = res.y[:, -1]
                    cur = leg_end
                if nxt is None:
                    break
                stops.remove(nxt)
            vals[target] = (y[0], y[1])
        for i, x in enumerate(xs):
            if sel[i]:
                out_v[i], out_dv[i] = vals[float(x)]
    return out_v, out_dv


# ---------------------------------------------------------------------------
# Scans over curves
# ---------------------------------------------------------------------------

def _bisect(f: Callable[[float], float], lo: float, hi: float,
            f_lo: float, f_hi: float, rtol: float, maxiter: int = 200) -> float:
    """Plain bisection for a sign change; stops at a scale-aware width."""
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rtol * max(1.0, abs(mid)):
            return mid
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if (f_lo < 0) != (f_mid < 0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def _refine_local_min(curve: SolutionCurve, xl: float, xr: float,
                      rtol: float) -> tuple[float, float]:
    """Refine a bracketed local minimum by bisection on the derivative sign."""
    def slope(x):
        return curve.eval(x)[1]

    sl, sr = slope(xl), slope(xr)
    if sl >= 0.0:
        return xl, curve.eval(xl)[0]
    if sr <= 0.0:
        return xr, curve.eval(xr)[0]
    x = _bisect(slope, xl, xr, sl, sr, rtol)
    return x, curve.eval(x)[0]


def min_over(curve: SolutionCurve, lo: float, hi: float,
             n_grid: int = _GRID_N) -> tuple[float, float]:
    """Global minimum of v over [lo, hi]: grid scan plus local refinement.

    Every grid-local minimum is polished by bisection on the sign of v', so
    narrow dips between tangential zeros are resolved to root tolerance.
    """
    wlo, whi = curve.window
    if lo < wlo - 1e-12 * max(1.0, abs(wlo)) or hi > whi + 1e-12 * max(1.0, abs(whi)):
        raise OutOfWindow("scan range outside curve window")
    lo, hi = max(lo, wlo), min(hi, whi)
    xs = _default_grid(lo, hi, n_grid)
    v, _ = curve.eval_batch(xs)
    rtol = curve.problem.tol.root_tol
    best_x, best_v = float(xs[np.argmin(v)]), float(np.min(v))
    interior = np.where((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]))[0] + 1
    for i in interior:
        x, val = _refine_local_min(curve, float(xs[i - 1]), float(xs[i + 1]), rtol)
        if val < best_v:
            best_x, best_v = x, val
    return best_x, best_v


def first_zero_after(curve: SolutionCurve, a: float | None = None) -> float | None:
    """Smallest x > a with v(x) <= 0, or None when v stays positive.

    A transversal crossing is located by bisection on the sign of v; a
    tangential touch (the curve grazes zero) is located as the first local
    minimum whose refined value falls below the nonnegativity floor.
    """
    if a is None:
        a = curve.anchor
    lo, hi = curve.window
    if not (lo <= a < hi):
        raise OutOfWindow("anchor outside window")
    tol_floor = curve.problem.tol.nonneg_tol * curve.scale()
    rtol = curve.problem.tol.root_tol
    start = a + max(1e-12 * max(1.0, abs(a)), (hi - a) * 1e-9)
    xs = _default_grid(start, hi, _GRID_N)
    v, _ = curve.eval_batch(xs)

    neg = np.where(v < -tol_floor)[0]
    first_neg = int(neg[0]) if neg.size else None

    # candidate tangential touches left of (or absent) the first strict crossing
    interior = np.where((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]))[0] + 1
    for i in interior:
        if first_neg is not None and i >= first_neg:
            break
        x, val = _refine_local_min(curve, float(xs[i - 1]), float(xs[i + 1]), rtol)
        if val <= tol_floor:
            return x
    if first_neg is None:
        return None
    if first_neg == 0:
        return float(xs[0])
    xl, xr = float(xs[first_neg - 1]), float(xs[first_neg])
    f = lambda x: curve.eval(x)[0]
    return _bisect(f, xl, xr, f(xl), f(xr), rtol)
