"""Monte Carlo verification of the computed stopping rule.

Simulates the diffusion, accumulates the discounted running reward

    J = int_0^tau exp(-rho_t) pi(X_t) dt,   rho_t = int_0^t r(X_s) ds,

under a given stopping rule (first entry of the state into a closed
region, monitored at grid times), and reports the sample mean with its
standard error.  The estimate is an independent check of the value
function: at the optimal rule the mean must match V(x0) within Monte Carlo
noise, and any perturbed rule can only do worse.

Randomness layout (stable across versions): path i draws its standard
normal increments, in order, from

    numpy.random.default_rng(numpy.random.SeedSequence(seed, spawn_key=(i,)))

in blocks of ``_CHUNK_STEPS`` values.  Streams are therefore independent of
path execution order, block partitioning, and worker count.  Per-path
payoffs are combined with exact (fsum) summation in path order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOrdering, NonFiniteSample, OutOfRange
from .problem import ValidatedProblem

_CHUNK_STEPS = 1024
_BLOCK_PATHS = 8192

Region = list[tuple[float, float]]


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    horizon: float = 200.0
    scheme: str = "exact_gbm"      # or "euler"
    seed: int = 0
    n_paths: int = 10000
    stop_eps: float = 0.0

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.dt > self.horizon:
            raise OutOfRange("need 0 < dt <= horizon")
        if self.n_paths < 1:
            raise OutOfRange("need n_paths >= 1")
        if self.scheme not in ("exact_gbm", "euler"):
            raise OutOfRange(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    truncated_fraction: float


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def step_exact_gbm(x, alpha: float, sigma: float, dt: float, z):
    """Distributionally exact GBM step: x * exp((alpha - sigma^2/2) dt + sigma sqrt(dt) z)."""
    return x * np.exp((alpha - 0.5 * sigma * sigma) * dt + sigma * math.sqrt(dt) * z)


def step_euler(problem: ValidatedProblem, x, dt: float, z):
    """Euler-Maruyama step x + alpha(x) dt + sigma(x) sqrt(dt) z.

    States that leave the working window are clamped and flagged so the
    caller can mark the path stopped at the edge.
    """
    xs = np.asarray(x, dtype=float)
    out = xs + problem.alpha.eval(xs) * dt + problem.sigma.eval(xs) * math.sqrt(dt) * z
    lo, hi = problem.default_window()
    escaped = (out <= lo) | (out >= hi)
    if np.any(escaped):
        out = np.clip(out, lo, hi)
    if np.isscalar(x):
        return float(out)
    return out, escaped


# ---------------------------------------------------------------------------
# Stopping rules
# ---------------------------------------------------------------------------

class _Rule:
    """Membership test for a union of closed intervals, inflated by stop_eps."""

    def __init__(self, region: Region, stop_eps: float):
        comps = sorted((float(a), float(b)) for a, b in region)
        self.los = np.array([a - stop_eps for a, _ in comps])
        self.his = np.array([b + stop_eps for _, b in comps])

    def hit(self, xs: np.ndarray) -> np.ndarray:
        if self.los.size == 0:
            return np.zeros_like(xs, dtype=bool)
        idx = np.searchsorted(self.los, xs, side="right") - 1
        ok = idx >= 0
        idx = np.clip(idx, 0, self.los.size - 1)
        return ok & (xs <= self.his[idx])


# ---------------------------------------------------------------------------
# Payoff simulation
# ---------------------------------------------------------------------------

def _path_generators(seed: int, lo: int, hi: int) -> list[np.random.Generator]:
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        for i in range(lo, hi)
    ]


def simulate_payoff(problem: ValidatedProblem, rule: Region, x0: float,
                    cfg: PathConfig) -> McEstimate:
    """Estimate the discounted running reward under a stopping rule.

    Per step: the rule is checked at the current grid time; alive paths
    accrue exp(-rho) pi(X) dt at the pre-step state, move by the chosen
    scheme, and update the discount by the trapezoid rule on r(X).  Paths
    still alive at the horizon are truncated and counted.
    """
    if not (problem.m < x0 < problem.M):
        raise OutOfRange(f"x0={x0} outside the state interval")
    if cfg.scheme == "exact_gbm" and problem.gbm is None:
        raise OutOfRange("exact_gbm scheme needs GBM coefficients")
    matcher = _Rule(rule, cfg.stop_eps)
    n_steps = int(round(cfg.horizon / cfg.dt))

    max_workers = max(1, int(os.environ.get("STOPFLOW_THREADS", "1") or 1))
    blocks = [
        (lo, min(lo + _BLOCK_PATHS, cfg.n_paths))
        for lo in range(0, cfg.n_paths, _BLOCK_PATHS)
    ]

    def run_block(bounds: tuple[int, int]) -> tuple[np.ndarray, int]:
        lo_i, hi_i = bounds
        return _simulate_block(problem, matcher, x0, cfg, n_steps, lo_i, hi_i)

    if max_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]

    payoffs = np.concatenate([r[0] for r in results])
    truncated = sum(r[1] for r in results)
    bad = np.where(~np.isfinite(payoffs))[0]
    if bad.size:
        raise NonFiniteSample("non-finite payoff accumulator", int(bad[0]))
    n = cfg.n_paths
    mean = math.fsum(payoffs) / n
    if n > 1:
        var = math.fsum((p - mean) ** 2 for p in payoffs) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return McEstimate(mean, se, n, truncated / n)


def _simulate_block(problem: ValidatedProblem, matcher: _Rule, x0: float,
                    cfg: PathConfig, n_steps: int, lo_i: int, hi_i: int
                    ) -> tuple[np.ndarray, int]:
    n = hi_i - lo_i
    gens = _path_generators(cfg.seed, lo_i, hi_i)
    x = np.full(n, float(x0))
    rho = np.zeros(n)
    payoff = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    truncated = 0
    dt = cfg.dt
    gbm = problem.gbm

    step_done = 0
    while step_done < n_steps and np.any(alive):
        idx = np.where(alive)[0]
        chunk = min(_CHUNK_STEPS, n_steps - step_done)
        z = np.empty((idx.size, chunk))
        for row, i in enumerate(idx):
            z[row] = gens[i].standard_normal(chunk)
        xa = x[idx].copy()
        rhoa = rho[idx].copy()
        paya = payoff[idx].copy()
        livea = np.ones(idx.size, dtype=bool)
        for k in range(chunk):
            live = np.where(livea)[0]
            if live.size == 0:
                break
            xs = xa[live]
            hit = matcher.hit(xs)
            if np.any(hit):
                livea[live[hit]] = False
                live = live[~hit]
                if live.size == 0:
                    break
                xs = xa[live]
            r_old = problem.r.eval(xs)
            paya[live] += np.exp(-rhoa[live]) * problem.pi.eval(xs) * dt
            if cfg.scheme == "exact_gbm":
                x_new = step_exact_gbm(xs, gbm.alpha, gbm.sigma, dt, z[live, k])
            else:
                x_new, escaped = step_euler(problem, xs, dt, z[live, k])
                if np.any(escaped):
                    livea[live[escaped]] = False
            rhoa[live] += 0.5 * dt * (r_old + problem.r.eval(x_new))
            xa[live] = x_new
        x[idx] = xa
        rho[idx] = rhoa
        payoff[idx] = paya
        alive[idx] = livea
        step_done += chunk
    truncated = int(np.count_nonzero(alive))
    return payoff, truncated


# ---------------------------------------------------------------------------
# Hitting probabilities
# ---------------------------------------------------------------------------

def hitting_probability(problem: ValidatedProblem, a: float, b: float,
                        x: float) -> float:
    """P(reach b before a | start at x) for m < a < x < b < M.

    Equals the ratio of scale-function increments

        int_a^x exp(-int_a^z 2 alpha/sigma^2) dz
        ------------------------------------------ ,
        int_a^b exp(-int_a^z 2 alpha/sigma^2) dz

    computed with closed-form antiderivatives when every coefficient
    segment is a single power term, and adaptive quadrature otherwise.
    """
    if not (problem.m < a < x < b < problem.M):
        raise DegenerateOrdering(f"need m < a < x < b < M, got {a}, {x}, {b}")

    single = all(
        len(s.terms) == 1
        for f in (problem.alpha, problem.sigma)
        for s in f.segments
    )
    if single:
        num, den = _scale_parts(problem, a, x, b)
    else:
        from scipy.integrate import quad

        def expo(z):
            val, _ = quad(
                lambda u: 2.0 * problem.alpha(u) / problem.sigma(u) ** 2,
                a, z, limit=200,
                points=[p for p in problem.breakpoints if a < p < z] or None,
            )
            return val

        def dens(z):
            return math.exp(-expo(z))

        num, _ = quad(dens, a, x, limit=200)
        rest, _ = quad(dens, x, b, limit=200)
        den = num + rest
    p = num / den
    if not (0.0 < p < 1.0):
        raise DegenerateOrdering(f"degenerate hitting probability {p}")
    return p


def _scale_parts(problem: ValidatedProblem, a: float, x: float,
                 b: float) -> tuple[float, float]:
    """(int_a^x, int_a^b) of exp(-E(z)) dz with E(z) = int_a^z 2 alpha/sigma^2.

    One sweep from a to b keeps the exponent consistent across pieces.  On
    each piece alpha/sigma^2 = k * z**p; the exponent integrates to a power
    or a log, making exp(-E) a pure power (p = -1) or an exponential of an
    affine function (p = 0), both with closed-form integrals.  Other
    exponents fall back to quadrature with the exponent still exact at the
    piece bounds.
    """
    from scipy.integrate import quad

    bounds = sorted({a, x, b} | {p for p in problem.breakpoints if a < p < b})
    total = 0.0
    part_x = 0.0
    e_accum = 0.0  # E at the current left bound, measured from a
    for seg_lo, seg_hi in zip(bounds, bounds[1:]):
        mid = 0.5 * (seg_lo + seg_hi)
        ca, pa = problem.alpha.segment_at(mid).terms[0]
        cs, ps = problem.sigma.segment_at(mid).terms[0]
        k = 2.0 * ca / cs**2
        p = pa - 2.0 * ps
        if p == -1.0:
            # exp(-E) = C * z**(-k)
            C = math.exp(-e_accum) * seg_lo**k
            if k == 1.0:
                piece = C * math.log(seg_hi / seg_lo)
            else:
                piece = C * (seg_hi ** (1.0 - k) - seg_lo ** (1.0 - k)) / (1.0 - k)
            e_accum += k * math.log(seg_hi / seg_lo)
        elif p == 0.0:
            # exp(-E) = C * exp(-k z)
            if k == 0.0:
                piece = math.exp(-e_accum) * (seg_hi - seg_lo)
            else:
                C = math.exp(-e_accum + k * seg_lo)
                piece = C * (math.exp(-k * seg_lo) - math.exp(-k * seg_hi)) / k
            e_accum += k * (seg_hi - seg_lo)
        else:
            e0, k0, p0, z0 = e_accum, k, p, seg_lo

            def dens(z):
                return math.exp(-(e0 + k0 * (z ** (p0 + 1.0) - z0 ** (p0 + 1.0)) / (p0 + 1.0)))

            piece, _ = quad(dens, seg_lo, seg_hi, limit=200)
            e_accum += k * (seg_hi ** (p + 1.0) - seg_lo ** (p + 1.0)) / (p + 1.0)
        total += piece
        if seg_hi <= x:
            part_x += piece
    return part_x, total


def estimate_hit_prob(problem: ValidatedProblem, a: float, b: float, x0: float,
                      cfg: PathConfig) -> tuple[float, float]:
    """Monte Carlo frequency of reaching b before a, with binomial SE.

    Uses the same per-path randomness layout as simulate_payoff.
    """
    if not (problem.m < a < x0 < b < problem.M):
        raise DegenerateOrdering(f"need m < a < x0 < b < M")
    if cfg.scheme == "exact_gbm" and problem.gbm is None:
        raise OutOfRange("exact_gbm scheme needs GBM coefficients")
    gbm = problem.gbm
    n_steps = int(round(cfg.horizon / cfg.dt))
    hits_b = 0
    decided = 0
    for lo_i in range(0, cfg.n_paths, _BLOCK_PATHS):
        hi_i = min(lo_i + _BLOCK_PATHS, cfg.n_paths)
        gens = _path_generators(cfg.seed, lo_i, hi_i)
        n = hi_i - lo_i
        x = np.full(n, float(x0))
        alive = np.ones(n, dtype=bool)
        done = 0
        while done < n_steps and np.any(alive):
            idx = np.where(alive)[0]
            chunk = min(_CHUNK_STEPS, n_steps - done)
            z = np.empty((idx.size, chunk))
            for row, i in enumerate(idx):
                z[row] = gens[i].standard_normal(chunk)
            xa = x[idx].copy()
            livea = np.ones(idx.size, dtype=bool)
            for k in range(chunk):
                live = np.where(livea)[0]
                if live.size == 0:
                    break
                if cfg.scheme == "exact_gbm":
                    xa[live] = step_exact_gbm(xa[live], gbm.alpha, gbm.sigma, cfg.dt, z[live, k])
                else:
                    xa[live], esc = step_euler(problem, xa[live], cfg.dt, z[live, k])
                out = (xa[live] <= a) | (xa[live] >= b)
                if np.any(out):
                    crossed = live[out]
                    hits_b_mask = xa[crossed] >= b
                    hits_b += int(np.count_nonzero(hits_b_mask))
                    decided += crossed.size
                    livea[crossed] = False
            x[idx] = xa
            alive[idx] = livea
            done += chunk
    if decided == 0:
        raise NonFiniteSample("no path reached either barrier before the horizon")
    freq = hits_b / decided
    se = math.sqrt(max(freq * (1.0 - freq), 1e-300) / decided)
    return freq, se
