"""
Lagrangian curve snapshots in one space dimension.

A snapshot is the ordered image of the label grid at a fixed time.  Fold points
(zeros of ``det Jx``) split it into branches on which the projection to ``x`` is a
bijection; ``S``, ``p`` and the density factors are smooth functions of the label
and are interpolated by C2 cubic splines in ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .hamilton import TrajectoryBundle

FOLD_RTOL = 1e-10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True)
class Branch:
    index: int
    alpha_range: tuple
    x_range: tuple
    increasing: bool
    alpha_knots: np.ndarray  # samples incl. refined fold endpoints
    x_knots: np.ndarray


class LagrangianCurve:
    """Snapshot of the manifold at time ``t`` (n = 1)."""

    def __init__(self, t, alpha, x, p, S, det, rho0, L, requested_t=None):
        self.t = float(t)
        self.requested_t = self.t if requested_t is None else float(requested_t)
        self.alpha = np.asarray(alpha, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.S = np.asarray(S, dtype=float)
        self.det = np.asarray(det, dtype=float)
        self.rho0 = np.asarray(rho0, dtype=float)
        self.L = np.asarray(L, dtype=float)
        a = self.alpha
        self._x = CubicSpline(a, self.x)
        self._p = CubicSpline(a, self.p)
        self._S = CubicSpline(a, self.S)
        self._det = CubicSpline(a, self.det)
        self._rho0 = CubicSpline(a, self.rho0)
        self._L = CubicSpline(a, self.L)
        self.folds = np.flatnonzero(np.sign(self.det[:-1]) * np.sign(self.det[1:]) < 0)
        self.fold_alpha = np.array([self._refine_fold(i) for i in self.folds])
        self.branches = self._split()
        self.branch_id = np.searchsorted(self.fold_alpha, a, side="right") if self.folds.size else np.zeros(
            a.size, dtype=int)
        self._cum = None

    # -- construction helpers --------------------------------------------------

    def _refine_fold(self, i):
        a0, a1 = self.alpha[i], self.alpha[i + 1]
        tol = FOLD_RTOL * max(1.0, abs(a0))
        return brentq(lambda s: float(self._det(s)), a0, a1, xtol=tol, rtol=4 * np.finfo(float).eps)

    def _split(self):
        a = self.alpha
        edges = [a[0]] + list(self.fold_alpha) + [a[-1]]
        out = []
        for j in range(len(edges) - 1):
            lo, hi = edges[j], edges[j + 1]
            inner = a[(a > lo) & (a < hi)]
            knots = np.concatenate([[lo], inner, [hi]])
            knots = np.unique(knots)
            xk = self._x(knots)
            inc = bool(xk[-1] >= xk[0])
            # the fold endpoint is an extremum of x; keep the knot values monotone
            xk = np.maximum.accumulate(xk) if inc else np.minimum.accumulate(xk)
            out.append(Branch(j, (lo, hi), (float(xk.min()), float(xk.max())), inc, knots, xk))
        return out

    # -- smooth label functions ------------------------------------------------

    def x_of(self, a, nu=0):
        return self._x(a, nu)

    def p_of(self, a, nu=0):
        return self._p(a, nu)

    def S_of(self, a):
        return self._S(a)

    def det_of(self, a):
        return self._det(a)

    def rho_of(self, a):
        """Density on the curve; NaN where the projection is not locally invertible with positive orientation."""
        det = self._det(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.maximum(self._rho0(a), 0.0) / det * np.exp(-self._L(a))  # spline undershoot where rho0 -> 0
        return np.where(det > 0, r, np.nan)

    def rho0_of(self, a):
        return self._rho0(a)

    def L_of(self, a):
        return self._L(a)

    @property
    def x_hull(self):
        return float(self.x.min()), float(self.x.max())

    # -- projection inverse ----------------------------------------------------

    def invert(self, xq) -> np.ndarray:
        """Labels ``alpha_j(x)`` for every branch j; shape (n_branches, n_query), NaN where not covered."""
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        out = np.full((len(self.branches), xq.size), np.nan)
        for br in self.branches:
            xk, ak = br.x_knots, br.alpha_knots
            if not br.increasing:
                xk, ak = xk[::-1], ak[::-1]
            inside = (xq >= xk[0]) & (xq <= xk[-1])
            if not np.any(inside):
                continue
            q = xq[inside]
            i = np.clip(np.searchsorted(xk, q, side="right") - 1, 0, xk.size - 2)
            lo, hi = ak[i].copy(), ak[i + 1].copy()
            flo = self._x(lo) - q
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = self._x(mid) - q
                left = np.sign(fm) == np.sign(flo)
                lo = np.where(left, mid, lo)
                flo = np.where(left, fm, flo)
                hi = np.where(left, hi, mid)
            out[br.index, inside] = 0.5 * (lo + hi)
        return out

    # -- exact integral of p dx along the curve ----------------------------------

    def _piece_integral(self, a0, a1):
        a0 = np.asarray(a0, dtype=float)
        a1 = np.asarray(a1, dtype=float)
        half = 0.5 * (a1 - a0)
        mid = 0.5 * (a1 + a0)
        q = mid[..., None] + half[..., None] * _GL_NODES
        return np.sum(_GL_WEIGHTS * self._p(q) * self._x(q, 1), axis=-1) * half

    def action_integral(self, a0: float, a1: float) -> float:
        """Integral of ``p dx`` along the curve between labels a0 and a1."""
        if self._cum is None:
            self._cum = np.concatenate([[0.0], np.cumsum(self._piece_integral(self.alpha[:-1], self.alpha[1:]))])

        def F(s):
            i = int(np.clip(np.searchsorted(self.alpha, s, side="right") - 1, 0, self.alpha.size - 2))
            return self._cum[i] + float(self._piece_integral(self.alpha[i], s))

        return F(a1) - F(a0)

    def to_rows(self):
        return np.column_stack([self.alpha, self.x, self.p, self.S,
                                np.where(self.det > 0, self.rho0 / np.where(self.det > 0, self.det, 1.0)
                                         * np.exp(-self.L), np.nan),
                                self.det, self.branch_id])


def snapshot(bundle: TrajectoryBundle, t: float) -> LagrangianCurve:
    """Curve at the nearest grid time to ``t``."""
    if bundle.dim != 1:
        raise ValueError("manifold snapshots are implemented for n = 1")
    k = bundle.time_index(t)
    return LagrangianCurve(bundle.times[k], bundle.alpha[:, 0], bundle.x[:, k, 0], bundle.p[:, k, 0],
                           bundle.S[:, k], bundle.det_Jx[:, k], bundle.rho0, bundle.L[:, k], requested_t=t)


@dataclass(frozen=True)
class BranchValue:
    branch: int
    alpha: float
    S: float
    p: float
    rho: float


def branches_at(curve: LagrangianCurve, x: float) -> list:
    """All branches whose projection covers ``x``; empty outside the projection."""
    a = curve.invert([x])[:, 0]
    out = []
    for j, aj in enumerate(a):
        if np.isnan(aj):
            continue
        out.append(BranchValue(j, float(aj), float(curve.S_of(aj)), float(curve.p_of(aj)),
                               float(curve.rho_of(aj))))
    return out
