"""
Value function from a multivalued action, shock location and propagation.

Among the branches covering a point the one with the smallest action dominates
the others by a factor ``exp(-(S_j - S_min)/eps)``, so the leading term of the
asymptotic solution uses ``Phi(x) = min_j S_j(x)``.  Where the minimising branch
switches, ``Phi_x`` jumps: that is a shock of the conservation law
``u_t + (H(x, u))_x = 0`` for ``u = S_x``.

Also here: the weak-asymptotics identity for a product of two Heaviside
functions and the piecewise-linear Hopf momentum profile used to exercise it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .manifold import LagrangianCurve
from .symbol import Symbol

SHOCK_XTOL = 1e-10
EQUAL_AREA_XTOL = 1e-9


class DegenerateShockError(ValueError):
    pass


class ValueFieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShockPoint:
    x: float
    p_left: float
    p_right: float
    speed: float = float("nan")
    mass: float = 0.0
    branches: tuple = ()
    alpha_left: float = float("nan")
    alpha_right: float = float("nan")
    S: float = float("nan")

    def as_dict(self) -> dict:
        return {"x": self.x, "p_left": self.p_left, "p_right": self.p_right, "speed": self.speed,
                "mass": self.mass, "branches": list(self.branches), "alpha_left": self.alpha_left,
                "alpha_right": self.alpha_right, "S": self.S}


@dataclass
class ValueField:
    t: float
    x: np.ndarray
    phi: np.ndarray  # +inf in vacuum
    p: np.ndarray
    branch_id: np.ndarray  # -1 in vacuum
    alpha: np.ndarray  # selected label, NaN in vacuum
    shocks: list = field(default_factory=list)

    def to_rows(self):
        return np.column_stack([self.x, self.phi, self.p, self.p, self.branch_id])


def shock_speed_rh(sym: Symbol, shock: ShockPoint, x_s: float | None = None) -> float:
    """Rankine-Hugoniot speed ``[H]/[u]`` for the momentum conservation law."""
    x_s = shock.x if x_s is None else x_s
    pl, pr = shock.p_left, shock.p_right
    if abs(pl - pr) < 1e-12:
        raise DegenerateShockError(f"degenerate shock at x={x_s}: p_left == p_right")
    H = sym.hamiltonian([x_s, x_s], [pl, pr])
    return float((H[0] - H[1]) / (pl - pr))


def value_function(curve: LagrangianCurve, x_grid, sym: Symbol | None = None) -> ValueField:
    """Pointwise minimum over branches, with shocks refined at switches of the minimising branch."""
    xg = np.asarray(x_grid, dtype=float)
    A = curve.invert(xg)
    covered = ~np.isnan(A)
    with np.errstate(invalid="ignore"):
        S = np.where(covered, curve.S_of(np.where(covered, A, curve.alpha[0])), np.inf)
    lo, hi = curve.x_hull
    empty = ~np.any(covered, axis=0)
    inside = (xg > lo) & (xg < hi)
    if np.any(empty & inside):
        bad = xg[empty & inside][0]
        raise ValueFieldError(f"no branch covers x={bad} inside the projection hull [{lo}, {hi}]")
    sel = np.where(empty, -1, np.argmin(S, axis=0))
    cols = np.arange(xg.size)
    alpha = np.where(empty, np.nan, A[np.maximum(sel, 0), cols])
    phi = np.where(empty, np.inf, S[np.maximum(sel, 0), cols])
    p = np.where(empty, np.nan, curve.p_of(np.where(empty, curve.alpha[0], alpha)))

    shocks = []
    for k in np.flatnonzero((sel[:-1] != sel[1:]) & (sel[:-1] >= 0) & (sel[1:] >= 0)):
        j1, j2 = int(sel[k]), int(sel[k + 1])
        shocks.append(_refine_switch(curve, j1, j2, xg[k], xg[k + 1], sym))
    return ValueField(curve.t, xg, phi, p, sel, alpha, shocks)


def _branch_S(curve, j, x):
    a = curve.invert([x])[j, 0]
    return np.nan if np.isnan(a) else float(curve.S_of(a))


def _refine_switch(curve, j1, j2, xa, xb, sym):
    b1, b2 = curve.branches[j1], curve.branches[j2]
    lo = max(xa, b1.x_range[0], b2.x_range[0])
    hi = min(xb, b1.x_range[1], b2.x_range[1])
    if not lo <= hi:
        raise ValueFieldError(f"branches {j1}, {j2} do not overlap near x={xa}")

    def g(x):
        return _branch_S(curve, j1, x) - _branch_S(curve, j2, x)

    ga, gb = g(lo), g(hi)
    if ga == 0.0:
        xs = lo
    elif gb == 0.0:
        xs = hi
    elif np.sign(ga) == np.sign(gb):
        raise ValueFieldError(f"minimising branch switches {j1}->{j2} near x={xa} without an action crossing")
    else:
        xs = brentq(g, lo, hi, xtol=SHOCK_XTOL, rtol=4 * np.finfo(float).eps)
    al = curve.invert([xs])[j1, 0]
    ar = curve.invert([xs])[j2, 0]
    shock = ShockPoint(float(xs), float(curve.p_of(al)), float(curve.p_of(ar)), branches=(j1, j2),
                       alpha_left=float(al), alpha_right=float(ar), S=float(curve.S_of(al)))
    if sym is not None:
        shock = replace(shock, speed=shock_speed_rh(sym, shock))
    return shock


def fold_pairs(curve: LagrangianCurve) -> list:
    """Consecutive fold pairs (i, i+1) bounding a middle branch."""
    return [(i, i + 1) for i in range(0, len(curve.fold_alpha) - 1, 2)]


def three_valued_interval(curve: LagrangianCurve, pair) -> tuple:
    xa = float(curve.x_of(curve.fold_alpha[pair[0]]))
    xb = float(curve.x_of(curve.fold_alpha[pair[1]]))
    return min(xa, xb), max(xa, xb)


def shock_position_equal_area(curve: LagrangianCurve, pair=None) -> float:
    """Vertical line cutting equal lobe areas from the folded part of the curve.

    For a cut at ``c`` the signed lobe area difference is the integral of
    ``p dx`` along the curve from the outer-left to the outer-right branch point
    above ``c`` (the vertical segment contributes nothing).
    """
    pairs = fold_pairs(curve)
    if not pairs:
        raise ValueFieldError("no three-valued region: the curve has no fold pair")
    pair = pairs[0] if pair is None else pair
    left, right = pair[0], pair[1] + 1  # branch indices outside the fold pair
    lo, hi = three_valued_interval(curve, pair)

    def G(c):
        A = curve.invert([c])[:, 0]
        return curve.action_integral(A[left], A[right])

    span = hi - lo
    a, b = lo + 1e-9 * span, hi - 1e-9 * span
    return float(brentq(G, a, b, xtol=EQUAL_AREA_XTOL * 1e-3, rtol=4 * np.finfo(float).eps))


def propagate_shock_rh(sym: Symbol, curve_at: Callable[[float], LagrangianCurve], x0: float, t0: float,
                       t1: float, nsteps: int = 10) -> float:
    """Advance a shock position with the Rankine-Hugoniot ODE (midpoint rule) between two times."""
    h = (t1 - t0) / nsteps
    x = x0

    def speed(t, xs):
        c = curve_at(t)
        A = c.invert([xs])[:, 0]
        ok = np.flatnonzero(~np.isnan(A))
        Sv = c.S_of(A[ok])
        order = np.argsort(Sv)
        # the two lowest branches meet at the shock; left one has the larger label
        ja, jb = ok[order[0]], ok[order[1]]
        jl, jr = (ja, jb) if A[ja] < A[jb] else (jb, ja)
        sp = ShockPoint(xs, float(c.p_of(A[jl])), float(c.p_of(A[jr])))
        return shock_speed_rh(sym, sp)

    t = t0
    for _ in range(nsteps):
        k1 = speed(t, x)
        x = x + h * speed(t + 0.5 * h, x + 0.5 * h * k1)
        t += h
    return x


# -- weak asymptotics -------------------------------------------------------------


def switch_B(z):
    """Smooth switch with B(0) = 1/2, B(z) + B(-z) = 1, B(+inf) = 1."""
    return 0.5 * (1.0 + np.tanh(z))


def bump_test_function(center: float, radius: float, height: float = 1.0) -> Callable:
    """C-infinity test function supported on [center - radius, center + radius]."""

    def psi(x):
        s = (np.asarray(x, dtype=float) - center) / radius
        inside = np.abs(s) < 1
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(inside, height * np.exp(-1.0 / np.where(inside, 1 - s * s, 1.0)), 0.0)

    psi.support = (center - radius, center + radius)
    return psi


def _pair_heaviside(psi, c):
    """(H(c - x), psi) = integral of psi over (-inf, c]."""
    lo, hi = psi.support
    if c <= lo:
        return 0.0
    return quad(psi, lo, min(c, hi), epsabs=1e-15, epsrel=1e-12, limit=200)[0]


def heaviside_product_check(phi1: float, phi2: float, mu: float, test_functions: Sequence[Callable],
                            B: Callable = switch_B) -> float:
    """Max over test functions of the pairing error of

        H(phi1 - x) H(phi2 - x) ~ B((phi2 - phi1)/mu) H(phi1 - x) + (1 - B((phi2 - phi1)/mu)) H(phi2 - x).
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    w = float(B((phi2 - phi1) / mu))
    worst = 0.0
    for psi in test_functions:
        lhs = _pair_heaviside(psi, min(phi1, phi2))
        rhs = w * _pair_heaviside(psi, phi1) + (1.0 - w) * _pair_heaviside(psi, phi2)
        worst = max(worst, abs(lhs - rhs))
    return worst


def heaviside_uniform_error(mu: float, test_functions: Sequence[Callable], phi1: float = 0.0,
                            z_values=None) -> float:
    """Error of the product identity maximised over separations ``phi2 - phi1 = z mu``."""
    z_values = np.linspace(-8.0, 8.0, 161) if z_values is None else z_values
    return max(heaviside_product_check(phi1, phi1 + z * mu, mu, test_functions) for z in z_values)


def hopf_momentum_fixture(p0: float, a: float, phi1: float, phi2: float) -> Callable:
    """``p(x) = p0 + a (H(phi1 - x)(phi1 - x) - H(phi2 - x)(phi2 - x))``."""
    if phi1 > phi2:
        raise ValueError("phi1 must not exceed phi2")

    def p(x):
        x = np.asarray(x, dtype=float)
        return p0 + a * (np.where(phi1 > x, phi1 - x, 0.0) - np.where(phi2 > x, phi2 - x, 0.0))

    return p
