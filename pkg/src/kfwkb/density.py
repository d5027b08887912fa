"""
Density transport along characteristics, delta masses on shocks, and assembly
of the leading-order asymptotic solution ``u = exp(-Phi/eps) sqrt(rho_reg)``.

Along a trajectory the continuity equation

    rho_t + div(rho H_p) + rho tr(H_xp) / 2 = 0

integrates to ``rho = rho0 / det Jx * exp(-int tr(H_xp)/2)``.  Characteristics
that enter a shock carry their mass into a Dirac mass whose weight grows by the
net incoming flux ``rho_l (v_l - s) - rho_r (v_r - s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .hamilton import TrajectoryBundle
from .hjb import ShockPoint, ValueField, fold_pairs, shock_speed_rh, three_valued_interval
from .manifold import LagrangianCurve, snapshot
from .symbol import Symbol

NEGATIVE_MASS_TOL = 1e-8
CUSP_WIDTH = 1e-10  # three-valued intervals narrower than this are the cusp point itself


class NonAttractingShockError(RuntimeError):
    """Delta mass went negative: characteristics leave the shock instead of entering it."""


class InvariantError(RuntimeError):
    pass


@dataclass
class DensityField:
    t: float
    x: np.ndarray
    rho_reg: np.ndarray
    branch_id: np.ndarray
    delta_masses: list = field(default_factory=list)  # (x_s, e)

    def to_rows(self):
        return np.column_stack([self.x, self.rho_reg, self.branch_id])


@dataclass
class AsymptoticSolution:
    t: float
    eps: float
    x: np.ndarray
    u: np.ndarray
    log_u: np.ndarray
    phi: np.ndarray
    one_sided: list = field(default_factory=list)

    def to_rows(self):
        return np.column_stack([self.x, self.u, self.phi])


def density_along_bundle(sym: Symbol, bundle: TrajectoryBundle) -> np.ndarray:
    """Density on every (label, time); NaN at and past a caustic for that label."""
    del sym  # the tr(H_xp) integral is accumulated inside the bundle integration
    det = bundle.det_Jx
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rho = bundle.rho0[:, None] / det * np.exp(-bundle.L)
    return np.where(det > 0, rho, np.nan)


def transport_amplitude(sym: Symbol, bundle: TrajectoryBundle) -> np.ndarray:
    """Amplitude from ``d ln phi / dt = -tr(H_pp S_xx) / 2`` with ``S_xx = Jp Jx^-1`` (Simpson in t)."""
    m, nt = bundle.S.shape
    rate = np.empty((m, nt))
    for k in range(nt):
        d = sym.derivatives(bundle.x[:, k], bundle.p[:, k])
        Sxx = bundle.Jp[:, k] @ np.linalg.inv(bundle.Jx[:, k])
        rate[:, k] = -0.5 * np.trace(d.H_pp @ Sxx, axis1=1, axis2=2)
    log_phi = cumulative_simpson(rate, x=bundle.times, axis=1, initial=0.0)
    return np.sqrt(bundle.rho0)[:, None] * np.exp(log_phi)


# -- shocks through time -------------------------------------------------------------


def shocks_of_curve(curve: LagrangianCurve, sym: Symbol) -> list:
    """Shock of every fold pair: the point where outer-left and outer-right actions cross."""
    out = []
    for pair in fold_pairs(curve):
        jl, jr = pair[0], pair[1] + 1
        lo, hi = three_valued_interval(curve, pair)

        def g(x):
            A = curve.invert([x])[:, 0]
            return float(curve.S_of(A[jl]) - curve.S_of(A[jr]))

        span = hi - lo
        if span <= CUSP_WIDTH * (1.0 + abs(lo)):
            continue
        a, b = lo + 1e-12 * span, hi - 1e-12 * span
        ga, gb = g(a), g(b)
        if not (np.isfinite(ga) and np.isfinite(gb)) or ga * gb > 0:
            continue
        xs = brentq(g, a, b, xtol=1e-12, rtol=4 * np.finfo(float).eps)
        A = curve.invert([xs])[:, 0]
        s = ShockPoint(float(xs), float(curve.p_of(A[jl])), float(curve.p_of(A[jr])), branches=(jl, jr),
                       alpha_left=float(A[jl]), alpha_right=float(A[jr]), S=float(curve.S_of(A[jl])))
        out.append(replace(s, speed=shock_speed_rh(sym, s)))
    return out


def delta_mass_rate(sym: Symbol, curve: LagrangianCurve, shock: ShockPoint) -> float:
    """Net incoming density flux into the shock."""
    rl = float(curve.rho_of(shock.alpha_left))
    rr = float(curve.rho_of(shock.alpha_right))
    d = sym.derivatives([shock.x, shock.x], [shock.p_left, shock.p_right])
    vl, vr = d.H_p[0, 0], d.H_p[1, 0]
    s = shock.speed
    return rl * (vl - s) - rr * (vr - s)


@dataclass
class ShockHistory:
    times: np.ndarray
    shocks: list  # per time: list of ShockPoint (mass filled in)
    rates: list  # per time: list of incoming flux
    births: list = field(default_factory=list)  # per time: birth time of each shock's track


def track_shocks(sym: Symbol, bundle: TrajectoryBundle, times=None) -> ShockHistory:
    """Shocks on every requested snapshot, with delta masses integrated from each shock's birth."""
    times = bundle.times if times is None else np.asarray(times, dtype=float)
    det = bundle.det_Jx
    shocks, rates, births = [], [], []
    for t in times:
        c = snapshot(bundle, t)
        sk = shocks_of_curve(c, sym)
        shocks.append(sk)
        rates.append([delta_mass_rate(sym, c, s) for s in sk])
        births.append([_birth_time(bundle, det, s) for s in sk])
    ts = np.array([snapshot_time(bundle, t) for t in times])
    return delta_mass_evolution(ShockHistory(ts, shocks, rates, births))


def _birth_time(bundle, det, shock) -> float:
    """Earliest det Jx zero crossing among the labels swallowed by the shock."""
    a = bundle.alpha[:, 0]
    rows = np.flatnonzero((a > shock.alpha_left) & (a < shock.alpha_right))
    t = bundle.times
    best = np.inf
    for i in rows:
        d = det[i]
        k = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0))
        if k.size:
            k = k[0]
            best = min(best, t[k] + (t[k + 1] - t[k]) * d[k] / (d[k] - d[k + 1]))
    return float(best)


def snapshot_time(bundle: TrajectoryBundle, t: float) -> float:
    return float(bundle.times[bundle.time_index(t)])


def delta_mass_evolution(history: ShockHistory) -> ShockHistory:
    """Integrate the incoming flux in time for shocks matched by nearest position.

    Near its birth time ``t_b`` the flux into a shock behaves like
    ``(t - t_b)**-1/2``, so the integral is taken in ``s = sqrt(t - t_b)`` where
    the integrand ``2 s * rate`` is smooth (trapezoid rule; the first panel uses
    the value extrapolated to ``s = 0``).  Without a birth time the plain
    trapezoid rule in ``t`` is used.
    """
    births = history.births or [[np.nan] * len(sk) for sk in history.shocks]
    prev = []  # (x, mass, rate, birth, t, integrand in s)
    new_shocks = []
    for t, sk, rk, bk in zip(history.times, history.shocks, history.rates, births):
        cur, state = [], []
        for s, r, tb in zip(sk, rk, bk):
            j = int(np.argmin([abs(s.x - q[0]) for q in prev])) if prev else None
            if j is None:
                if np.isfinite(tb) and tb <= t:
                    s1 = np.sqrt(t - tb)
                    g = 2.0 * s1 * r
                    e = s1 * g  # 2 s r tends to a finite limit at birth
                else:
                    g, e = np.nan, 0.0
            else:
                _, e0, r0, tb, t0, g0 = prev[j]
                if np.isfinite(tb) and np.isfinite(g0):
                    s0, s1 = np.sqrt(t0 - tb), np.sqrt(t - tb)
                    g = 2.0 * s1 * r
                    e = e0 + 0.5 * (s1 - s0) * (g0 + g)
                else:
                    g = np.nan
                    e = e0 + 0.5 * (t - t0) * (r0 + r)
            if e < -NEGATIVE_MASS_TOL:
                raise NonAttractingShockError(
                    f"delta mass {e:.3e} < 0 at x={s.x:.6g}, t={t:.6g}: characteristics leave the shock")
            cur.append(replace(s, mass=max(float(e), 0.0)))
            state.append((s.x, float(e), r, tb, t, g))
        new_shocks.append(cur)
        prev = state
    return ShockHistory(history.times, new_shocks, history.rates, births)


# -- fields on a grid --------------------------------------------------------------


def regular_density(curve: LagrangianCurve, value: ValueField, shocks=None) -> DensityField:
    """Regular density on the minimising branch; zero in vacuum."""
    sel = value.branch_id
    a = value.alpha
    rho = np.zeros_like(value.x)
    ok = sel >= 0
    rho[ok] = curve.rho_of(a[ok])
    if np.any(np.isnan(rho)):
        raise InvariantError("selected branch has undefined density (projection not invertible there)")
    shocks = value.shocks if shocks is None else shocks
    return DensityField(value.t, value.x, rho, sel.copy(), [(s.x, s.mass) for s in shocks])


def regular_mass(curve: LagrangianCurve, shocks) -> float:
    """Integral of rho_reg dx, computed in label space over labels not swallowed by a shock."""
    a = curve.alpha
    q = curve.rho0 * np.exp(-curve.L)
    spl = CubicSpline(a, q)
    total = float(spl.integrate(a[0], a[-1]))
    for s in shocks:
        total -= float(spl.integrate(s.alpha_left, s.alpha_right))
    return total


def total_mass(curve: LagrangianCurve, shocks) -> float:
    return regular_mass(curve, shocks) + sum(s.mass for s in shocks)


def assemble_solution(value: ValueField, dens: DensityField, eps: float,
                      curve: LagrangianCurve | None = None) -> AsymptoticSolution:
    """``u = exp(-Phi/eps) sqrt(rho_reg)`` pointwise; one-sided values recorded at shocks."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not np.array_equal(value.x, dens.x):
        raise ValueError("value and density fields must share the grid")
    if np.any(dens.rho_reg < 0):
        raise InvariantError("negative regular density")
    with np.errstate(divide="ignore"):
        log_u = -value.phi / eps + 0.5 * np.log(dens.rho_reg)
    log_u = np.where(dens.rho_reg > 0, log_u, -np.inf)
    u = np.exp(log_u)
    sides = []
    if curve is not None:
        for s in value.shocks:
            rl = float(curve.rho_of(s.alpha_left))
            rr = float(curve.rho_of(s.alpha_right))
            sides.append({"x": s.x, "u_left": float(np.exp(-s.S / eps) * np.sqrt(rl)),
                          "u_right": float(np.exp(-s.S / eps) * np.sqrt(rr))})
    return AsymptoticSolution(value.t, eps, value.x, u, log_u, value.phi, sides)
