"""Fundamental solution Phi(x, y) of the first-order system w' = A(y) w.

The second-order equation r v - alpha v' - (sigma^2/2) v'' = pi is
equivalent to w' = A(x) w + b(x) with w = (v, v'),

    A(x) = [[0, 1], [2 r / sigma^2, -2 alpha / sigma^2]],
    b(x) = (0, -2 pi / sigma^2).

Phi(x, y) solves d/dy Phi = A(y) Phi with Phi(x, x) = Id.  Two evaluation
modes are provided: an adaptive Runge-Kutta integration of the matrix
equation (one pass yields all four entries plus the particular solution),
and the closed form for geometric Brownian motion with distinct real
characteristic roots d1 < d2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegratorFailure, NonPositiveState, OutOfRange
from .problem import ValidatedProblem

_LOG_CAP = 0.75   # max log-width of one integration piece (positive windows)
_LIN_CAP = 8      # max pieces a finite gap is split into is ceil(width/cap)


# ---------------------------------------------------------------------------
# 2x2 matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mat2:
    phi11: float
    phi12: float
    phi21: float
    phi22: float

    @property
    def det(self) -> float:
        return self.phi11 * self.phi22 - self.phi12 * self.phi21

    def as_array(self) -> np.ndarray:
        return np.array([[self.phi11, self.phi12], [self.phi21, self.phi22]])

    @staticmethod
    def from_array(arr: np.ndarray) -> "Mat2":
        return Mat2(float(arr[0, 0]), float(arr[0, 1]), float(arr[1, 0]), float(arr[1, 1]))

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return Mat2.from_array(self.as_array() @ other.as_array())


IDENTITY = Mat2(1.0, 0.0, 0.0, 1.0)


def _inv2(arr: np.ndarray) -> np.ndarray:
    det = arr[0, 0] * arr[1, 1] - arr[0, 1] * arr[1, 0]
    return np.array([[arr[1, 1], -arr[0, 1]], [-arr[1, 0], arr[0, 0]]]) / det


# ---------------------------------------------------------------------------
# Closed forms for geometric Brownian motion
# ---------------------------------------------------------------------------

def phi_gbm(d1: float, d2: float, x, y) -> Mat2:
    """Closed-form Phi(x, y) for GBM with distinct real roots d1 < d2.

    phi12(x, y) = x * ((y/x)**d2 - (y/x)**d1) / (d2 - d1); the other entries
    follow from the same power pair.
    """
    if d1 >= d2:
        raise OutOfRange("need d1 < d2")
    x = float(x)
    y = float(y)
    if x <= 0 or y <= 0:
        raise NonPositiveState("GBM closed form needs positive states")
    rho = y / x
    dd = d2 - d1
    r1 = rho**d1
    r2 = rho**d2
    return Mat2(
        (d2 * r1 - d1 * r2) / dd,
        x * (r2 - r1) / dd,
        d1 * d2 * (rho ** (d1 - 1.0) - rho ** (d2 - 1.0)) / (dd * x),
        (d2 * rho ** (d2 - 1.0) - d1 * rho ** (d1 - 1.0)) / dd,
    )


def phi_gbm_complex(a: float, b: float, x, y) -> Mat2:
    """Closed-form Phi(x, y) for GBM with complex roots a +- i b (b > 0).

    Only used diagnostically: problems in this regime are rejected, but the
    matrix exhibits the sign structure at the first zero of phi12 that the
    well-posed regime never reaches.
    """
    if b <= 0:
        raise OutOfRange("need positive imaginary part")
    x = float(x)
    y = float(y)
    if x <= 0 or y <= 0:
        raise NonPositiveState("GBM closed form needs positive states")
    lg = math.log(y / x)
    amp = (y / x) ** a
    s, c = math.sin(b * lg), math.cos(b * lg)
    return Mat2(
        amp * (b * c - a * s) / b,
        amp * x * s / b,
        -amp * (a * a + b * b) * s / (b * y),
        amp * (x / y) * (b * c + a * s) / b,
    )


# ---------------------------------------------------------------------------
# Piecewise integration of the augmented system
# ---------------------------------------------------------------------------

def _split_points(problem: ValidatedProblem, lo: float, hi: float) -> np.ndarray:
    """Piece boundaries: every coefficient breakpoint plus geometric filler.

    The integrator never steps across a coefficient breakpoint, so within
    each piece the right-hand side is smooth.  Long pieces are subdivided to
    keep the fundamental-matrix entries well scaled piece-locally.
    """
    pts = [lo, hi]
    pts.extend(p for p in problem.breakpoints if lo < p < hi)
    pts = sorted(set(pts))
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        if a > 0:
            k = max(1, int(math.ceil(math.log(b / a) / _LOG_CAP)))
            sub = np.geomspace(a, b, k + 1)
        else:
            k = max(1, int(math.ceil((b - a) / max((hi - lo) / _LIN_CAP, 1e-12))))
            sub = np.linspace(a, b, k + 1)
        out.extend(sub[1:])
    return np.array(out)


class _Piece:
    """Dense solution of the augmented system over one smooth piece.

    State layout: y[0:2] first column of Phi(x_lo, .), y[2:4] second column,
    y[4:6] particular solution started at zero from the piece's lower bound.
    """

    __slots__ = ("lo", "hi", "sol", "transfer", "forcing")

    def __init__(self, problem: ValidatedProblem, lo: float, hi: float):
        mid = 0.5 * (lo + hi)
        a_terms = problem.alpha.segment_at(mid).terms
        s_terms = problem.sigma.segment_at(mid).terms
        r_terms = problem.r.segment_at(mid).terms
        p_terms = problem.pi.segment_at(mid).terms

        def term_val(terms, x):
            return sum(c * x**p for c, p in terms)

        def rhs(x, y):
            sig2 = term_val(s_terms, x) ** 2
            a21 = 2.0 * term_val(r_terms, x) / sig2
            a22 = -2.0 * term_val(a_terms, x) / sig2
            g = -2.0 * term_val(p_terms, x) / sig2
            return np.array([
                y[1],
                a21 * y[0] + a22 * y[1],
                y[3],
                a21 * y[2] + a22 * y[3],
                y[5],
                a21 * y[4] + a22 * y[5] + g,
            ])

        y0 = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        res = solve_ivp(
            rhs, (lo, hi), y0, method="RK45", dense_output=True,
            rtol=problem.tol.ode_rtol, atol=problem.tol.ode_atol,
        )
        if not res.success:
            raise IntegratorFailure(
                f"matrix integration failed on [{lo}, {hi}]: {res.message}"
            )
        self.lo = lo
        self.hi = hi
        self.sol = res.sol
        end = res.y[:, -1]
        self.transfer = np.array([[end[0], end[2]], [end[1], end[3]]])
        self.forcing = np.array([end[4], end[5]])

    def eval(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(M, p) with M[:, :, i] = Phi(lo, xs[i]) and p the particular part."""
        y = self.sol(xs)
        M = np.array([[y[0], y[2]], [y[1], y[3]]])
        p = np.array([y[4], y[5]])
        return M, p


class PiecewiseFlow:
    """Chained dense fundamental solution over a compact window.

    The window is split at all coefficient breakpoints (plus geometric
    filler points); each piece is integrated once with identity initial
    matrix.  Arbitrary anchors, transfers and dense evaluations are then
    composed from per-piece data, which keeps the matrix entries well
    conditioned even across wide windows.
    """

    def __init__(self, problem: ValidatedProblem, lo: float, hi: float):
        if not (lo < hi):
            raise OutOfRange("window bounds must increase")
        self.problem = problem
        self.lo = lo
        self.hi = hi
        self.bounds = _split_points(problem, lo, hi)
        self.pieces = [
            _Piece(problem, a, b) for a, b in zip(self.bounds, self.bounds[1:])
        ]

    def piece_index(self, x: float) -> int:
        k = int(np.searchsorted(self.bounds, x, side="right") - 1)
        return min(max(k, 0), len(self.pieces) - 1)

    def _within(self, k: int, frm: float, to: float) -> tuple[np.ndarray, np.ndarray]:
        """Transfer matrix and forcing from ``frm`` to ``to`` inside piece k."""
        piece = self.pieces[k]
        (Mf, pf) = piece.eval(np.array([frm]))
        (Mt, pt) = piece.eval(np.array([to]))
        Mf, pf = Mf[:, :, 0], pf[:, 0]
        Mt, pt = Mt[:, :, 0], pt[:, 0]
        inv = _inv2(Mf)
        T = Mt @ inv
        q = pt - T @ pf
        return T, q

    def transfer(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """(T, q) with w(b) = T @ w(a) + q for solutions of the full system."""
        if not (self.lo <= a <= self.hi and self.lo <= b <= self.hi):
            raise OutOfRange("transfer endpoints outside the flow window")
        if a == b:
            return np.eye(2), np.zeros(2)
        if a > b:
            T, q = self.transfer(b, a)
            Ti = _inv2(T)
            return Ti, -Ti @ q
        ka, kb = self.piece_index(a), self.piece_index(b)
        if ka == kb:
            return self._within(ka, a, b)
        T, q = self._within(ka, a, self.pieces[ka].hi)
        for k in range(ka + 1, kb):
            Tk, qk = self.pieces[k].transfer, self.pieces[k].forcing
            T = Tk @ T
            q = Tk @ q + qk
        Tb, qb = self._within(kb, self.pieces[kb].lo, b)
        return Tb @ T, Tb @ q + qb

    def propagate(self, a: float, w_a: np.ndarray) -> np.ndarray:
        """States w at every piece lower bound for the solution with w(a) = w_a.

        Returns an array of shape (n_pieces, 2); entry k is w(bounds[k]).
        """
        n = len(self.pieces)
        states = np.empty((n, 2))
        ka = self.piece_index(a)
        T, q = self._within(ka, a, self.pieces[ka].lo)
        states[ka] = T @ w_a + q
        for k in range(ka + 1, n):
            piece = self.pieces[k - 1]
            states[k] = piece.transfer @ states[k - 1] + piece.forcing
        for k in range(ka - 1, -1, -1):
            piece = self.pieces[k]
            inv = _inv2(piece.transfer)
            states[k] = inv @ (states[k + 1] - piece.forcing)
        return states

    def propagate_many(self, anchors: np.ndarray, ds: np.ndarray) -> np.ndarray:
        """Vectorised propagation for curves with w(anchor) = (0, d).

        Returns (n_anchors, n_pieces, 2).
        """
        n = len(self.pieces)
        A = len(anchors)
        states = np.empty((A, n, 2))
        for i, (a, d) in enumerate(zip(anchors, ds)):
            states[i] = self.propagate(float(a), np.array([0.0, float(d)]))
        return states

    def eval_states(self, states: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate (v, v') at xs for one propagated state table."""
        xs = np.asarray(xs, dtype=float)
        v = np.empty_like(xs)
        dv = np.empty_like(xs)
        idx = np.clip(np.searchsorted(self.bounds, xs, side="right") - 1, 0, len(self.pieces) - 1)
        for k in np.unique(idx):
            sel = idx == k
            M, p = self.pieces[k].eval(xs[sel])
            w = states[k]
            v[sel] = M[0, 0] * w[0] + M[0, 1] * w[1] + p[0]
            dv[sel] = M[1, 0] * w[0] + M[1, 1] * w[1] + p[1]
        return v, dv

    def eval_states_many(self, states: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate many curves on a shared grid: returns (A, G) arrays."""
        xs = np.asarray(xs, dtype=float)
        A = states.shape[0]
        v = np.empty((A, xs.size))
        dv = np.empty((A, xs.size))
        idx = np.clip(np.searchsorted(self.bounds, xs, side="right") - 1, 0, len(self.pieces) - 1)
        for k in np.unique(idx):
            sel = idx == k
            M, p = self.pieces[k].eval(xs[sel])
            w = states[:, k, :]
            v[:, sel] = np.outer(w[:, 0], M[0, 0]) + np.outer(w[:, 1], M[0, 1]) + p[0]
            dv[:, sel] = np.outer(w[:, 0], M[1, 0]) + np.outer(w[:, 1], M[1, 1]) + p[1]
        return v, dv

    def phi(self, a: float, b: float) -> Mat2:
        """Homogeneous transfer Phi(a, b)."""
        T, _ = self.transfer(a, b)
        return Mat2.from_array(T)


# ---------------------------------------------------------------------------
# Public evaluator
# ---------------------------------------------------------------------------

class FundamentalMatrix:
    """Evaluator of Phi(a, b), dispatching to the closed form for GBM data.

    Numerical evaluations reuse one cached piecewise flow whose window grows
    to cover all requested pairs; construction of the flow is protected so
    concurrent readers see a consistent snapshot.
    """

    def __init__(self, problem: ValidatedProblem, mode: str | None = None):
        self.problem = problem
        self.mode = mode or problem.mode
        if self.mode == "closed_form" and problem.gbm is None:
            raise NonPositiveState("closed form requires GBM coefficients")
        self._flow: PiecewiseFlow | None = None

    def _flow_for(self, a: float, b: float) -> PiecewiseFlow:
        lo, hi = min(a, b), max(a, b)
        with self.problem._lock:
            flow = self._flow
            if flow is None or flow.lo > lo or flow.hi < hi:
                wlo, whi = self.problem.default_window()
                wlo, whi = min(wlo, lo), max(whi, hi)
                if wlo > 0:
                    wlo, whi = wlo / 1.05, whi * 1.05
                flow = PiecewiseFlow(self.problem, wlo, whi)
                self._flow = flow
        return flow

    def phi(self, a: float, b: float) -> Mat2:
        """Phi(a, b), integrating from a to b (either direction)."""
        if not (self.problem.m <= a <= self.problem.M and self.problem.m <= b <= self.problem.M):
            raise OutOfRange("states outside the problem interval")
        if self.mode == "closed_form":
            g = self.problem.gbm
            return phi_gbm(g.d1, g.d2, a, b)
        if a == b:
            return IDENTITY
        return self._flow_for(a, b).phi(a, b)


def phi(fm: FundamentalMatrix, a: float, b: float) -> Mat2:
    """Module-level convenience wrapper around FundamentalMatrix.phi."""
    return fm.phi(a, b)
