"""Problem instances: piecewise power-sum coefficients, validation, GBM classification.

A stopping problem is described by four measurable coefficients on an open
interval ]m, M[: the drift alpha, the volatility sigma (> 0), the discount
rate r, and the running payoff pi.  Every coefficient is restricted to a
piecewise power sum

    f(x) = sum_k c_k * x**p_k        on each segment [lo, hi),

which covers all constant, linear and indicator-type data while keeping
closed-form antiderivatives available for the geometric-Brownian-motion
fast path.
"""

from __future__ import annotations

import bisect
import enum
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSign,
    IllPosedGbm,
    MalformedSegments,
    OutOfRange,
    SigmaNonPositive,
)

INF = float("inf")

_SIGN_SAMPLES = 65  # interior samples per segment for sign / positivity checks


# ---------------------------------------------------------------------------
# Piecewise power sums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """One half-open piece [lo, hi) carrying a power sum sum(c * x**p)."""

    lo: float
    hi: float
    terms: tuple[tuple[float, float], ...]

    def value(self, x):
        """Evaluate the power sum at x (scalar or ndarray)."""
        total = x * 0.0
        for c, p in self.terms:
            if p == 0.0:
                total = total + c
            elif p == 1.0:
                total = total + c * x
            else:
                total = total + c * np.power(x, p)
        return total


def _is_integerish(p: float) -> bool:
    return float(p).is_integer()


@dataclass(frozen=True)
class PiecewiseExpr:
    """Ordered segments tiling a closed range without gaps or overlaps.

    Segment bounds are half-open [lo, hi); the last segment also owns its
    upper bound.  The pointwise convention at breakpoints is free for the
    almost-everywhere quantities involved, and is fixed for determinism.
    """

    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise MalformedSegments("expression needs at least one segment")
        for s in segs:
            if not (s.lo < s.hi):
                raise MalformedSegments(f"segment bounds not increasing: [{s.lo}, {s.hi})")
            if not s.terms:
                raise MalformedSegments("segment with no terms")
            for c, p in s.terms:
                if not math.isfinite(c):
                    raise MalformedSegments(f"non-finite coefficient {c}")
                if not math.isfinite(p):
                    raise MalformedSegments(f"non-finite exponent {p}")
                if (p < 0 or not _is_integerish(p)) and s.lo < 0:
                    raise MalformedSegments(
                        f"exponent {p} needs a non-negative segment, got lo={s.lo}"
                    )
        for left, right in zip(segs, segs[1:]):
            if left.hi != right.lo:
                raise MalformedSegments(
                    f"segments do not tile: [{left.lo},{left.hi}) then [{right.lo},{right.hi})"
                )
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_los", np.array([s.lo for s in segs]))

    @property
    def lo(self) -> float:
        return self.segments[0].lo

    @property
    def hi(self) -> float:
        return self.segments[-1].hi

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior segment bounds (excludes the outer range ends)."""
        return tuple(s.lo for s in self.segments[1:])

    def _indices(self, xs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._los, xs, side="right") - 1
        # the last segment is closed on the right
        np.clip(idx, 0, len(self.segments) - 1, out=idx)
        return idx

    def eval(self, xs) -> np.ndarray:
        """Vectorised evaluation; raises OutOfRange outside the tiled range."""
        xs = np.asarray(xs, dtype=float)
        scalar = xs.ndim == 0
        xs = np.atleast_1d(xs)
        if xs.size and (xs.min() < self.lo or xs.max() > self.hi):
            raise OutOfRange(
                f"x outside tiled range [{self.lo}, {self.hi}]"
            )
        out = np.empty_like(xs)
        idx = self._indices(xs)
        for k, seg in enumerate(self.segments):
            sel = idx == k
            if np.any(sel):
                out[sel] = seg.value(xs[sel])
        return out[0] if scalar else out

    def __call__(self, x: float) -> float:
        return float(self.eval(x))

    def segment_at(self, x: float) -> Segment:
        if x < self.lo or x > self.hi:
            raise OutOfRange(f"x={x} outside tiled range [{self.lo}, {self.hi}]")
        k = int(np.searchsorted(self._los, x, side="right") - 1)
        return self.segments[min(max(k, 0), len(self.segments) - 1)]


def constant(c: float, lo: float = 0.0, hi: float = INF) -> PiecewiseExpr:
    return PiecewiseExpr((Segment(lo, hi, ((c, 0.0),)),))


def single_power(c: float, p: float, lo: float = 0.0, hi: float = INF) -> PiecewiseExpr:
    return PiecewiseExpr((Segment(lo, hi, ((c, p),)),))


def piecewise_constant(pieces, lo: float = 0.0, hi: float = INF) -> PiecewiseExpr:
    """Build a piecewise-constant expression from [(breakpoint-to-next, value)] pairs.

    ``pieces`` is a list of (lo, hi, value) triples that must tile [lo, hi].
    """
    segs = tuple(Segment(a, b, ((v, 0.0),)) for a, b, v in pieces)
    expr = PiecewiseExpr(segs)
    if expr.lo != lo or expr.hi != hi:
        raise MalformedSegments("pieces do not tile the requested range")
    return expr


def bump_payoff(x_pos: list[tuple[float, float]], inside: float = 1.0,
                outside: float = -1.0, lo: float = 0.0, hi: float = INF) -> PiecewiseExpr:
    """Payoff equal to ``inside`` on the given disjoint windows and ``outside`` elsewhere."""
    pieces = []
    cur = lo
    for a, b in sorted(x_pos):
        if a < cur:
            raise MalformedSegments("positive windows overlap")
        if a > cur:
            pieces.append((cur, a, outside))
        pieces.append((a, b, inside))
        cur = b
    if cur < hi:
        pieces.append((cur, hi, outside))
    return piecewise_constant(pieces, lo, hi)


# ---------------------------------------------------------------------------
# Exact integrals of weighted power sums
# ---------------------------------------------------------------------------

class PowerWeightedIntegral:
    """Exact cumulative integrals F(x) = int_ref^x z**w * f(z) dz.

    ``f`` is a piecewise power sum, so every term integrates to a power or a
    logarithm in closed form.  Segments are clipped to [lo, hi]; ``ref`` is
    the lower clip bound.
    """

    def __init__(self, f: PiecewiseExpr, w: float, lo: float, hi: float):
        if lo >= hi:
            raise MalformedSegments("empty integration range")
        if f.lo > lo or f.hi < hi:
            raise OutOfRange("integration range not covered by the expression")
        self.w = float(w)
        segs = []
        for s in f.segments:
            a, b = max(s.lo, lo), min(s.hi, hi)
            if a < b:
                segs.append(Segment(a, b, s.terms))
        self._segs = segs
        self._los = np.array([s.lo for s in segs])
        self._los_list = [s.lo for s in segs]
        self._anti_lo = [float(self._anti(s, s.lo)) for s in segs]
        # cumulative integral at each segment's lower bound
        cum = [0.0]
        for s in segs:
            cum.append(cum[-1] + float(self._anti(s, s.hi) - self._anti(s, s.lo)))
        self._cum = np.array(cum[:-1])

    def _anti(self, seg: Segment, x):
        """Antiderivative of z**w * seg(z) evaluated at x."""
        total = np.asarray(x, dtype=float) * 0.0
        for c, p in seg.terms:
            q = p + self.w
            if q == -1.0:
                total = total + c * np.log(x)
            else:
                total = total + c * np.power(x, q + 1.0) / (q + 1.0)
        return total

    def _value(self, xs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._los, xs, side="right") - 1
        np.clip(idx, 0, len(self._segs) - 1, out=idx)
        out = np.empty_like(xs)
        for k, seg in enumerate(self._segs):
            sel = idx == k
            if sel.any():
                x = xs[sel]
                out[sel] = self._cum[k] + self._anti(seg, x) - self._anti_lo[k]
        return out

    def value_scalar(self, x: float) -> float:
        """F(x) without array machinery; hot path for bisection refinement."""
        k = bisect.bisect_right(self._los_list, x) - 1
        k = min(max(k, 0), len(self._segs) - 1)
        seg = self._segs[k]
        total = 0.0
        for c, p in seg.terms:
            q = p + self.w
            if q == -1.0:
                total += c * math.log(x)
            else:
                total += c * x ** (q + 1.0) / (q + 1.0)
        return self._cum[k] + total - self._anti_lo[k]

    def between(self, a: float, xs) -> np.ndarray:
        """int_a^x z**w f(z) dz, vectorised over x."""
        if isinstance(xs, (int, float)):
            return self.value_scalar(float(xs)) - self.value_scalar(float(a))
        xs = np.asarray(xs, dtype=float)
        scalar = xs.ndim == 0
        fa = self.value_scalar(float(a))
        fx = self._value(np.atleast_1d(xs))
        out = fx - fa
        return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# GBM classification
# ---------------------------------------------------------------------------

class GbmRoots(enum.Enum):
    COMPLEX_ROOTS = "complex_roots"
    REPEATED_ROOT = "repeated_root"
    DISTINCT_REAL = "distinct_real"


@dataclass(frozen=True)
class GbmCase:
    """Roots of -(sigma^2/2) d^2 - (alpha - sigma^2/2) d + r."""

    tag: GbmRoots
    d1: complex
    d2: complex


def classify_gbm(alpha: float, sigma: float, r: float) -> GbmCase:
    """Classify a GBM model (drift alpha*x, volatility sigma*x, constant rate r).

    The fundamental matrix is governed by the roots of the quadratic
    (sigma^2/2) d^2 + (alpha - sigma^2/2) d - r = 0.  Complex or repeated
    roots make the stopping problem trivial or ill posed and are rejected
    downstream.
    """
    if sigma <= 0:
        raise SigmaNonPositive("sigma must be strictly positive")
    half = 0.5 * sigma * sigma
    beta = alpha - half
    disc = beta * beta + 4.0 * half * r
    scale = max(beta * beta, abs(4.0 * half * r), 1e-300)
    if disc < -1e-14 * scale:
        root = complex(-beta, math.sqrt(-disc)) / (2.0 * half)
        return GbmCase(GbmRoots.COMPLEX_ROOTS, root.conjugate(), root)
    if disc <= 1e-14 * scale:
        d = -beta / (2.0 * half)
        return GbmCase(GbmRoots.REPEATED_ROOT, d, d)
    sq = math.sqrt(disc)
    d1 = (-beta - sq) / (2.0 * half)
    d2 = (-beta + sq) / (2.0 * half)
    return GbmCase(GbmRoots.DISTINCT_REAL, d1, d2)


@dataclass(frozen=True)
class GbmModel:
    """Constant-parameter GBM data with distinct real roots d1 < d2."""

    alpha: float
    sigma: float
    r: float
    d1: float
    d2: float


def gbm_coefficients(d1: float, d2: float, sigma: float) -> tuple[float, float]:
    """(alpha, r) reproducing the requested characteristic roots."""
    half = 0.5 * sigma * sigma
    return half * (1.0 - d1 - d2), -half * d1 * d2


def _uniform_terms(expr: PiecewiseExpr) -> tuple[tuple[float, float], ...] | None:
    terms = expr.segments[0].terms
    for s in expr.segments[1:]:
        if s.terms != terms:
            return None
    return terms


def detect_gbm(spec: "ProblemSpec") -> GbmCase | None:
    """Recognise drift alpha*x, volatility sigma*x, constant r on a positive interval."""
    if spec.m < 0:
        return None
    ta = _uniform_terms(spec.alpha)
    ts = _uniform_terms(spec.sigma)
    tr = _uniform_terms(spec.r)
    if ta is None or ts is None or tr is None:
        return None
    if len(ta) != 1 or len(ts) != 1 or len(tr) != 1:
        return None
    (ca, pa), (cs, ps), (cr, pr) = ta[0], ts[0], tr[0]
    if pa != 1.0 or ps != 1.0 or pr != 0.0 or cs <= 0:
        return None
    return classify_gbm(ca, cs, cr)


# ---------------------------------------------------------------------------
# Problem specification and validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    ode_rtol: float = 1e-10
    ode_atol: float = 1e-12
    root_tol: float = 1e-9
    nonneg_tol: float = 1e-9
    hjb_tol: float = 1e-6

    def __post_init__(self):
        for name in ("ode_rtol", "ode_atol", "root_tol", "nonneg_tol", "hjb_tol"):
            if getattr(self, name) <= 0:
                raise MalformedSegments(f"tolerance {name} must be positive")


@dataclass(frozen=True)
class TruncationPolicy:
    """Expanding compact windows used in place of the open state interval.

    For the interval ]0, +inf[ the window at level n is
    [x_ref / 2**n, x_ref * 2**n] with x_ref the geometric mean of the payoff
    breakpoints.  Finite endpoints are approached geometrically in distance.
    """

    n_start: int = 3
    n_max: int = 40
    x_ref: float | None = None


@dataclass(frozen=True)
class ProblemSpec:
    m: float
    M: float
    alpha: PiecewiseExpr
    sigma: PiecewiseExpr
    r: PiecewiseExpr
    pi: PiecewiseExpr
    truncation: TruncationPolicy = TruncationPolicy()
    tolerances: Tolerances = Tolerances()

    def __post_init__(self):
        if not self.m < self.M:
            raise MalformedSegments(f"need m < M, got {self.m}, {self.M}")


def eval_coeff(f: PiecewiseExpr, x: float) -> float:
    """Evaluate a piecewise coefficient at x (half-open segment convention)."""
    return f(x)


def _probe_window(spec: "ProblemSpec") -> tuple[float, float]:
    """Finite window used for sampling checks, spanning all breakpoints."""
    pts = set()
    for f in (spec.alpha, spec.sigma, spec.r, spec.pi):
        pts.update(p for p in f.breakpoints if spec.m < p < spec.M)
    pts = sorted(pts)
    ref = pts or [1.0]
    lo, hi = spec.m, spec.M
    span = max(ref[-1] - ref[0], 1.0)
    if lo == -INF:
        lo = ref[0] - 8.0 * span
    elif lo == 0.0 and hi == INF:
        lo = min(ref) / 16.0 if min(ref) > 0 else 1.0 / 16.0
    if hi == INF:
        hi = (max(ref) * 16.0) if lo > 0 else ref[-1] + 8.0 * span
    return lo, hi


def _segment_samples(seg: Segment, lo: float, hi: float) -> np.ndarray:
    a, b = max(seg.lo, lo), min(seg.hi, hi)
    if not (a < b):
        return np.empty(0)
    if a > 0 and b / max(a, 1e-300) > 50.0:
        inner = np.geomspace(a, b, _SIGN_SAMPLES + 2)[1:-1]
    else:
        inner = np.linspace(a, b, _SIGN_SAMPLES + 2)[1:-1]
    return inner


class ValidatedProblem:
    """A checked problem instance; immutable after construction.

    Carries the parsed coefficients, resolved tolerances, the GBM
    classification when the data match a geometric Brownian motion, and the
    evaluation mode ('closed_form' exact path or 'numerical' integrator
    path).  Internal per-window caches are guarded by a lock so concurrent
    readers observe consistent snapshots.
    """

    def __init__(self, spec: ProblemSpec, mode: str, gbm: GbmModel | None):
        self.spec = spec
        self.mode = mode
        self.gbm = gbm
        self.tol = spec.tolerances
        self._cache: dict = {}
        self._lock = threading.Lock()

    # -- convenience accessors -------------------------------------------
    @property
    def m(self) -> float:
        return self.spec.m

    @property
    def M(self) -> float:
        return self.spec.M

    @property
    def alpha(self) -> PiecewiseExpr:
        return self.spec.alpha

    @property
    def sigma(self) -> PiecewiseExpr:
        return self.spec.sigma

    @property
    def r(self) -> PiecewiseExpr:
        return self.spec.r

    @property
    def pi(self) -> PiecewiseExpr:
        return self.spec.pi

    def with_mode(self, mode: str) -> "ValidatedProblem":
        if mode not in ("closed_form", "numerical"):
            raise OutOfRange(f"unknown mode {mode!r}")
        if mode == "closed_form" and self.gbm is None:
            raise IllPosedGbm(None, "closed_form mode requires GBM coefficients")
        return ValidatedProblem(self.spec, mode, self.gbm)

    # -- derived geometry ------------------------------------------------
    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior breakpoints of all four coefficients, sorted."""
        pts = set()
        for f in (self.alpha, self.sigma, self.r, self.pi):
            pts.update(f.breakpoints)
        return tuple(sorted(p for p in pts if self.m < p < self.M))

    @property
    def pi_breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted(p for p in self.pi.breakpoints if self.m < p < self.M))

    def _x_ref(self) -> float:
        if self.spec.truncation.x_ref is not None:
            return self.spec.truncation.x_ref
        bps = [p for p in self.pi_breakpoints if p > 0] or [1.0]
        return float(np.exp(np.mean(np.log(bps))))

    def truncation_window(self, n: int) -> tuple[float, float]:
        """Compact working window at expansion level n."""
        bps = self.pi_breakpoints or (self._x_ref(),)
        span = max(max(bps) - min(bps), 1.0)
        if self.m == 0.0 and self.M == INF:
            x_ref = self._x_ref()
            return x_ref / 2.0**n, x_ref * 2.0**n
        if self.m == -INF:
            lo = min(bps) - span * (2.0**n - 1.0)
        elif self.m == 0.0:
            lo = self._x_ref() / 2.0**n
        else:
            lo = self.m + (min(bps) - self.m) / 2.0**n
        if self.M == INF:
            hi = max(bps) + span * (2.0**n - 1.0) if self.m == -INF else self._x_ref() * 2.0**n
        else:
            hi = self.M - (self.M - max(bps)) / 2.0**n
        return lo, hi

    def scale_region(self, window: tuple[float, float]) -> tuple[float, float]:
        """Sub-window around the payoff breakpoints used for relative scales.

        Curves can grow without bound toward a truncated domain edge; the
        magnitude reference for nonnegativity floors must come from the
        region where the payoff actually changes sign, or the floor would
        swallow every dip on deep windows.
        """
        lo, hi = window
        bks = [p for p in self.pi_breakpoints if lo < p < hi]
        if not bks:
            return window
        bk_lo, bk_hi = min(bks), max(bks)
        if lo > 0:
            rlo, rhi = max(lo, bk_lo / 8.0), min(hi, bk_hi * 8.0)
        else:
            span = max(bk_hi - bk_lo, 1.0)
            rlo, rhi = max(lo, bk_lo - 4.0 * span), min(hi, bk_hi + 4.0 * span)
        if not rlo < rhi:
            return window
        return rlo, rhi

    def base_level(self) -> int:
        """Smallest expansion level whose window covers all breakpoints with margin."""
        n = self.spec.truncation.n_start
        bps = self.breakpoints
        if not bps:
            return n
        while n < self.spec.truncation.n_max:
            lo, hi = self.truncation_window(n)
            if lo < min(bps) and hi > max(bps) and (min(bps) - lo) > 0 and (hi - max(bps)) > 0:
                inner_lo, inner_hi = self.truncation_window(max(n - 1, 1))
                if inner_lo <= min(bps) and inner_hi >= max(bps):
                    return n
            n += 1
        return self.spec.truncation.n_max

    def default_window(self) -> tuple[float, float]:
        return self.truncation_window(self.base_level())


def validate(spec: ProblemSpec, mode: str = "auto") -> ValidatedProblem:
    """Check the standing assumptions and return a validated handle.

    * sigma > 0 on a dense sample grid plus all interior segment endpoints.
    * Local integrability of 1/sigma^2, alpha/sigma^2, r/sigma^2, pi/sigma^2
      holds structurally: power sums are locally bounded on compacts and
      sigma is bounded away from zero there, so it is certified rather than
      tested numerically.
    * Both {pi > 0} and {pi < 0} must have positive measure, checked
      segment-by-segment (exactly for single-term segments, by dense
      sampling otherwise).

    GBM data with complex or repeated characteristic roots are rejected
    here because such problems are trivial or have no finite value.
    """
    m, M = spec.m, spec.M
    for name, f in (("alpha", spec.alpha), ("sigma", spec.sigma),
                    ("r", spec.r), ("pi", spec.pi)):
        if f.lo > m or f.hi < M:
            raise MalformedSegments(
                f"{name} tiles [{f.lo}, {f.hi}] but must cover ({m}, {M})"
            )

    probe_lo, probe_hi = _probe_window(spec)

    # sigma strictly positive on samples and at interior endpoints
    for seg in spec.sigma.segments:
        xs = _segment_samples(seg, probe_lo, probe_hi)
        if xs.size and np.any(seg.value(xs) <= 0.0):
            raise SigmaNonPositive(f"sigma <= 0 inside segment [{seg.lo}, {seg.hi})")
        for endpoint in (seg.lo, seg.hi):
            if m < endpoint < M and math.isfinite(endpoint):
                if seg.value(np.array([endpoint]))[0] <= 0.0 and endpoint > seg.lo:
                    raise SigmaNonPositive(f"sigma <= 0 at segment endpoint {endpoint}")
    for bp in spec.sigma.breakpoints:
        if m < bp < M and spec.sigma(bp) <= 0.0:
            raise SigmaNonPositive(f"sigma <= 0 at breakpoint {bp}")

    # payoff must take both signs on sets of positive measure
    has_pos = has_neg = False
    for seg in spec.pi.segments:
        if len(seg.terms) == 1 and seg.terms[0][1] == 0.0:
            c = seg.terms[0][0]
            if max(seg.lo, m) < min(seg.hi, M):
                has_pos |= c > 0
                has_neg |= c < 0
        else:
            xs = _segment_samples(seg, probe_lo, probe_hi)
            if xs.size:
                vals = seg.value(xs)
                has_pos |= bool(np.any(vals > 0))
                has_neg |= bool(np.any(vals < 0))
        if has_pos and has_neg:
            break
    if not (has_pos and has_neg):
        raise DegenerateSign(
            "payoff is one-signed a.e.: stop immediately or never, nothing to solve"
        )

    gbm_case = detect_gbm(spec)
    gbm_model = None
    if gbm_case is not None:
        if gbm_case.tag is not GbmRoots.DISTINCT_REAL:
            raise IllPosedGbm(
                gbm_case,
                f"GBM characteristic roots are {gbm_case.tag.value}; the problem is "
                "trivial or ill-posed",
            )
        ta = spec.alpha.segments[0].terms[0][0]
        ts = spec.sigma.segments[0].terms[0][0]
        tr = spec.r.segments[0].terms[0][0]
        gbm_model = GbmModel(ta, ts, tr, float(gbm_case.d1.real), float(gbm_case.d2.real))

    if mode == "auto":
        mode = "closed_form" if gbm_model is not None else "numerical"
    if mode == "closed_form" and gbm_model is None:
        raise IllPosedGbm(None, "closed_form mode requires GBM coefficients")
    if mode not in ("closed_form", "numerical"):
        raise OutOfRange(f"unknown mode {mode!r}")
    return ValidatedProblem(spec, mode, gbm_model)
