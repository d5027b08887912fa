"""
Backward-in-time reconstruction after shocks have formed.

Characteristics that ran into a shock carry no information at the final time,
so running the system backward from ``T`` only recovers the state along the
surviving labels.  The gap they leave, the "terra incognita" ``Omega(t)``, is
bounded by the backward images of the two one-sided limit points of every
shock.  Inside it any fill is admissible as long as the action has no interior
minimum there; the weak-limit statistic

    I(eps) = C int (u_eps - sqrt(rho) exp(-S/eps)) phi dx,   1/C = int u_eps phi dx

does not see the difference as eps -> 0.

Also here: the nonsingularity check of ``dx/dx0`` along trajectories leaving
the minimum of the initial action, and the backward saddle-point evaluation of
the heat Green function used to test invertibility when no caustic forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, make_interp_spline
from scipy.optimize import brentq

from .hamilton import LOCAL_TOL, InitialData, TrajectoryBundle, flow_states, integrate_phase_points
from .hjb import ShockPoint
from .manifold import LagrangianCurve, snapshot
from .symbol import Symbol

WEAK_RTOL = 1e-10
FILL_SAMPLES = 2001
MIN_TOL = 1e-12


class FillRejectedError(ValueError):
    """A terra incognita fill puts a minimum of the action strictly inside the interval."""


class LemmaHypothesisError(ValueError):
    def __init__(self, reasons):
        super().__init__("hypotheses not met: " + "; ".join(reasons))
        self.reasons = list(reasons)


class WeakLimitError(RuntimeError):
    pass


# -- terra incognita ------------------------------------------------------------


@dataclass
class TerraIncognita:
    """Intervals between backward images of one-sided shock limits, indexed by backward time ``tau``.

    ``intervals[k, i] = (a, b)`` for shock ``i`` at ``tau = times[k]`` (forward time ``T - tau``).
    """

    T: float
    times: np.ndarray
    intervals: np.ndarray  # (nt, n_shocks, 2)
    shocks: list = field(default_factory=list)
    overlaps: bool = False

    @property
    def empty(self) -> bool:
        return len(self.shocks) == 0

    def at(self, tau: float) -> list:
        if self.empty:
            return []
        k = int(np.argmin(np.abs(self.times - tau)))
        return [tuple(map(float, iv)) for iv in self.intervals[k]]

    def widths(self) -> np.ndarray:
        return self.intervals[..., 1] - self.intervals[..., 0]

    def as_dict(self, every: int = 1) -> dict:
        ks = list(range(0, self.times.size, every))
        if self.times.size and ks[-1] != self.times.size - 1:
            ks.append(self.times.size - 1)
        return {"T": self.T, "overlaps": self.overlaps,
                "provenance": [s.as_dict() for s in self.shocks],
                "history": [{"tau": float(self.times[k]), "t": float(self.T - self.times[k]),
                             "intervals": self.intervals[k].tolist() if not self.empty else []} for k in ks]}


def detect_terra_incognita(sym: Symbol, shocks, T: float, dt: float, tol: float | None = LOCAL_TOL) -> TerraIncognita:
    """Flow ``(x_s, p_left)`` and ``(x_s, p_right)`` of every shock backward from ``T`` to 0."""
    nsteps = int(round(T / dt))
    times = np.linspace(0.0, T, nsteps + 1)
    shocks = list(shocks)
    if not shocks:
        return TerraIncognita(T, times, np.zeros((times.size, 0, 2)), [])
    x0 = np.array([[s.x, s.x] for s in shocks]).ravel()
    p0 = np.array([[s.p_left, s.p_right] for s in shocks]).ravel()
    fl = integrate_phase_points(sym, x0, p0, T, dt, tol=tol, direction=-1)
    xs = fl.x[:, :, 0].reshape(len(shocks), 2, -1)  # (shock, side, time)
    iv = np.moveaxis(xs, 2, 0)  # (time, shock, side)
    lo = np.minimum(iv[..., 0], iv[..., 1])
    hi = np.maximum(iv[..., 0], iv[..., 1])
    ivs = np.stack([lo, hi], axis=-1)
    overlaps = False
    if len(shocks) > 1:
        order = np.argsort(ivs[..., 0], axis=1)
        srt = np.take_along_axis(ivs, order[..., None], axis=1)
        overlaps = bool(np.any(srt[:, 1:, 0] < srt[:, :-1, 1]))
    return TerraIncognita(T, times, ivs, shocks, overlaps)


# -- survivors flowed backward ------------------------------------------------------


@dataclass
class BackwardBundle:
    """Surviving labels (plus the exact one-sided endpoint labels of each shock) flowed back from ``T``."""

    T: float
    pieces: list  # TrajectoryBundle per run of surviving labels, ordered left to right
    shocks: list

    @property
    def times(self) -> np.ndarray:
        return self.pieces[0].times


def backward_bundle(sym: Symbol, forward: TrajectoryBundle, shocks, T: float | None = None,
                    dt: float | None = None, tol: float | None = LOCAL_TOL) -> BackwardBundle:
    """Integrate the reversed system from the forward state at ``T`` along surviving labels only.

    Labels strictly between ``alpha_left`` and ``alpha_right`` of a shock are
    dropped; the two limit labels themselves are added with their state taken
    from the forward curve at ``T``, so every piece ends exactly on the shock.
    """
    if forward.dim != 1:
        raise ValueError("backward reconstruction is implemented for n = 1")
    T = float(forward.times[-1]) if T is None else float(T)
    dt = forward.dt if dt is None else dt
    curve = snapshot(forward, T)
    a = forward.alpha[:, 0]
    da = float(np.min(np.diff(a)))
    shocks = sorted(shocks, key=lambda s: s.alpha_left)
    edges = [(a[0], None)]
    for s in shocks:
        edges.append((s.alpha_left, s))
        edges.append((s.alpha_right, s))
    edges.append((a[-1], None))
    pieces = []
    for k in range(0, len(edges), 2):
        lo, slo = edges[k]
        hi, shi = edges[k + 1]
        inner = a[(a > lo + 0.25 * da * (slo is not None)) & (a < hi - 0.25 * da * (shi is not None))]
        lab = np.concatenate([[lo] if slo is not None else [], inner, [hi] if shi is not None else []])
        if slo is None:
            lab = np.concatenate([[a[0]], lab[lab > a[0]]])
        if shi is None:
            lab = np.concatenate([lab[lab < a[-1]], [a[-1]]])
        pieces.append(_flow_labels(sym, forward, curve, lab, T, dt, tol))
    return BackwardBundle(T, pieces, shocks)


def _flow_labels(sym, forward, curve: LagrangianCurve, lab, T, dt, tol):
    """Backward flow of the given labels: grid labels use the stored state, others the curve splines."""
    k = forward.time_index(T)
    a = forward.alpha[:, 0]
    i = np.clip(np.searchsorted(a, lab), 0, a.size - 1)
    on_grid = a[i] == lab
    x = np.where(on_grid, forward.x[i, k, 0], curve.x_of(lab))
    Jx = np.where(on_grid, forward.Jx[i, k, 0, 0], curve.x_of(lab, 1))
    p = np.where(on_grid, forward.p[i, k, 0], curve.p_of(lab))
    Jp = np.where(on_grid, forward.Jp[i, k, 0, 0], curve.p_of(lab, 1))
    S = np.where(on_grid, forward.S[i, k], curve.S_of(lab))
    L = np.where(on_grid, forward.L[i, k], curve.L_of(lab))
    rho0 = np.where(on_grid, forward.rho0[i], curve.rho0_of(lab))
    return flow_states(sym, lab, x, p, Jx, Jp, S, L, rho0, T, dt, direction=-1, tol=tol)


# -- fills -------------------------------------------------------------------------


@dataclass(frozen=True)
class EndState:
    x: float
    S: float
    p: float
    rho: float


@dataclass
class Fill:
    """Action on ``[a, b]`` filled by ``strategy``; density linear between the endpoint values."""

    strategy: str
    left: EndState
    right: EndState
    S: Callable

    def rho(self, x):
        a, b = self.left.x, self.right.x
        if b <= a:
            return np.full_like(np.asarray(x, dtype=float), 0.5 * (self.left.rho + self.right.rho))
        w = (np.asarray(x, dtype=float) - a) / (b - a)
        return (1 - w) * self.left.rho + w * self.right.rho

    def interior_minimum(self, n: int = FILL_SAMPLES) -> float:
        """Smallest interior value minus the smaller endpoint value (negative means an interior minimum)."""
        a, b = self.left.x, self.right.x
        if b <= a:
            return 0.0
        xs = np.linspace(a, b, n)[1:-1]
        return float(np.min(self.S(xs)) - min(self.left.S, self.right.S))


def hermite_fill(left: EndState, right: EndState, sym=None, shock=None, tau=None) -> Callable:
    """Cubic matching endpoint values and one-sided slopes."""
    if right.x <= left.x:
        return lambda x: np.full_like(np.asarray(x, dtype=float), left.S)
    spl = CubicHermiteSpline([left.x, right.x], [left.S, right.S], [left.p, right.p])
    return lambda x: spl(np.asarray(x, dtype=float))


def fan_fill(left: EndState, right: EndState, sym: Symbol, shock: ShockPoint, tau: float) -> Callable:
    """Action carried back from the shock point by rays of every momentum between ``p_right`` and ``p_left``.

    For an x-independent symbol the rays are straight: ``X = x_s - tau H_p(p)``,
    ``S = S_s - tau (p H_p - H)``.
    """
    if not sym.x_independent or sym.dim != 1:
        raise ValueError("fan fill needs a one-dimensional x-independent symbol")
    if tau <= 0 or right.x <= left.x:
        return lambda x: np.full_like(np.asarray(x, dtype=float), shock.S)
    x0 = np.zeros(1)

    def ray(p):
        d = sym.derivatives(x0, np.array([p]))
        Hp = float(d.H_p[0, 0])
        return shock.x - tau * Hp, shock.S - tau * (p * Hp - float(d.H[0]))

    lo_p, hi_p = sorted((shock.p_left, shock.p_right))

    def S(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = np.full(x.shape, lo_p)
        hi = np.full(x.shape, hi_p)
        zeros = np.zeros((x.size, 1))
        # X decreases in p because H_pp > 0; bisect for the ray through every x
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            Hp = sym.derivatives(zeros, mid[:, None]).H_p[:, 0]
            right = shock.x - tau * Hp > x
            lo = np.where(right, mid, lo)
            hi = np.where(right, hi, mid)
        p = 0.5 * (lo + hi)
        d = sym.derivatives(zeros, p[:, None])
        Hp = d.H_p[:, 0]
        return shock.S - tau * (p * Hp - d.H)

    return S


def tangent_fill(left: EndState, right: EndState, sym=None, shock=None, tau=None) -> Callable:
    """Lower envelope of the two endpoint tangent lines."""
    if right.x <= left.x:
        return lambda x: np.full_like(np.asarray(x, dtype=float), left.S)
    la = lambda x: left.S + left.p * (x - left.x)  # noqa: E731
    lb = lambda x: right.S + right.p * (x - right.x)  # noqa: E731
    if lb(left.x) < left.S or la(right.x) < right.S:
        raise FillRejectedError("tangent lines do not meet inside the interval: the envelope is discontinuous")

    def S(x):
        x = np.asarray(x, dtype=float)
        return np.minimum(la(x), lb(x))

    if left.p != right.p:
        S.kinks = [(right.S - right.p * right.x - left.S + left.p * left.x) / (left.p - right.p)]
    return S


FILLS = {"hermite": hermite_fill, "fan": fan_fill, "tangent": tangent_fill}


# -- reconstruction -----------------------------------------------------------------


class Reconstruction:
    """Action and regular density at backward time ``tau``: characteristics outside Omega, fills inside."""

    def __init__(self, tau: float, curves: list, fills: list, strategy: str):
        self.tau = float(tau)
        self.curves = curves
        self.fills = fills
        self.strategy = strategy

    @property
    def intervals(self):
        return [(f.left.x, f.right.x) for f in self.fills]

    @property
    def breakpoints(self) -> list:
        """Interval ends and kinks of the fills: where the reconstructed action is not smooth."""
        out = [v for iv in self.intervals for v in iv]
        for f in self.fills:
            out += [k for k in getattr(f.S, "kinks", []) if f.left.x < k < f.right.x]
        return sorted(out)

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            m |= (x > a) & (x < b)
        return m

    def _fields(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        S = np.full(x.shape, np.inf)
        rho = np.zeros(x.shape)
        for c in self.curves:
            A = c.invert(x)
            if A.shape[0] != 1:
                raise RuntimeError("surviving labels folded: backward piece is not a graph")
            ok = ~np.isnan(A[0])
            S[ok] = c.S_of(A[0, ok])
            rho[ok] = c.rho_of(A[0, ok])
        for f in self.fills:
            m = (x > f.left.x) & (x < f.right.x)
            if np.any(m):
                S[m] = f.S(x[m])
                rho[m] = f.rho(x[m])
        return S, rho

    def S(self, x):
        return self._fields(x)[0]

    def rho(self, x):
        return self._fields(x)[1]

    def log_u(self, x, eps: float):
        S, rho = self._fields(x)
        with np.errstate(divide="ignore"):
            return np.where(rho > 0, -S / eps + 0.5 * np.log(np.where(rho > 0, rho, 1.0)), -np.inf)


def _end_state(curve: LagrangianCurve, label: float) -> EndState:
    return EndState(float(curve.x_of(label)), float(curve.S_of(label)), float(curve.p_of(label)),
                    float(curve.rho_of(label)))


def reconstruct(sym: Symbol, bb: BackwardBundle, tau: float, fill="hermite", enforce: bool = True) -> Reconstruction:
    """Reconstructed action and density at backward time ``tau`` (forward time ``T - tau``).

    ``fill`` is a name from ``FILLS`` or a callable with the same signature.
    With ``enforce`` a fill whose action dips strictly below both endpoint
    values inside its interval is rejected.
    """
    k = int(np.argmin(np.abs(bb.times - tau)))
    tau = float(bb.times[k])
    curves = []
    for piece in bb.pieces:
        curves.append(LagrangianCurve(tau, piece.alpha[:, 0], piece.x[:, k, 0], piece.p[:, k, 0], piece.S[:, k],
                                      piece.det_Jx[:, k], piece.rho0, piece.L[:, k]))
    fn = FILLS[fill] if isinstance(fill, str) else fill
    name = fill if isinstance(fill, str) else getattr(fill, "__name__", "custom")
    fills = []
    for i, s in enumerate(bb.shocks):
        left = _end_state(curves[i], curves[i].alpha[-1])
        right = _end_state(curves[i + 1], curves[i + 1].alpha[0])
        f = Fill(name, left, right, fn(left, right, sym=sym, shock=s, tau=tau))
        dip = f.interior_minimum()
        if enforce and dip < -MIN_TOL * max(1.0, abs(left.S), abs(right.S)):
            raise FillRejectedError(
                f"fill '{name}' on [{left.x:.6g}, {right.x:.6g}] goes {-dip:.3e} below the smaller endpoint "
                "action: the action of a backward solution has no minimum inside a terra incognita interval")
        fills.append(f)
    return Reconstruction(tau, curves, fills, name)


def recovery_error(rec: Reconstruction, init: InitialData, x) -> float:
    """Sup distance of reconstructed (S, rho) from the initial data outside Omega (only meaningful at tau = T)."""
    x = np.asarray(x, dtype=float)
    out = ~rec.inside(x)
    S, rho = rec._fields(x[out])
    pts = x[out][:, None]
    ok = np.isfinite(S)
    eS = np.max(np.abs(S[ok] - init.S0.value(pts[ok]))) if np.any(ok) else 0.0
    er = np.max(np.abs(rho[ok] - init.phi0.value(pts[ok]) ** 2)) if np.any(ok) else 0.0
    return float(max(eS, er))


# -- weak-limit statistic -----------------------------------------------------------


@dataclass
class WeakLimitTable:
    mode: str
    eps: np.ndarray
    values: np.ndarray
    slope: float
    ratio: float  # |I(eps_min)| / |I(eps_max)|
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mode": self.mode, "eps": self.eps.tolist(), "I": self.values.tolist(), "slope": self.slope,
                "ratio": self.ratio, **self.meta}


_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def gauss_adaptive(f: Callable, edges, rtol: float = WEAK_RTOL, atol: float = 0.0, panels: int = 16,
                   max_levels: int = 14):
    """Composite 20-point Gauss-Legendre on ``edges`` with uniform panel halving until two levels agree.

    ``f`` is evaluated on whole arrays.  Returns ``(value, error_estimate, trace)``
    where the trace lists ``(panels, value)`` per level.
    """
    edges = np.asarray(edges, dtype=float)

    def level(npan):
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            t = np.linspace(a, b, npan + 1)
            h = 0.5 * np.diff(t)
            mid = 0.5 * (t[1:] + t[:-1])
            x = (mid[:, None] + h[:, None] * _GL_X).ravel()
            total += float(np.sum(f(x).reshape(npan, -1) * _GL_W * h[:, None]))
        return total

    prev = level(panels)
    trace = [(panels, prev)]
    for _ in range(max_levels):
        panels *= 2
        cur = level(panels)
        trace.append((panels, cur))
        err = abs(cur - prev)
        if err <= max(rtol * abs(cur), atol):
            return cur, err, trace
        prev = cur
    raise WeakLimitError(f"quadrature did not converge to rtol={rtol}: trace {trace}")


def weak_limit_statistic(log_u_eps: Callable, rec: Reconstruction, eps: float, phi: Callable, support,
                         mode: str = "i", psi_level: float | None = None, rtol: float = WEAK_RTOL) -> dict:
    """One value of the normalised (mode "i") or endpoint-scaled (mode "ii") weak-limit integral.

    Mode i:  ``I = int (u_eps - u_rec) phi / int u_eps phi``.
    Mode ii: ``I = exp(Psi/eps) int (u_eps - u_rec) phi`` with ``Psi`` supplied.
    All exponentials are formed relative to a common shift so nothing underflows.
    """
    lo, hi = map(float, support)
    grid = np.linspace(lo, hi, 4001)
    if mode == "i":
        shift = float(np.max(log_u_eps(grid)))
    elif mode == "ii":
        if psi_level is None:
            raise ValueError("mode ii needs the endpoint level Psi")
        shift = -psi_level / eps
    else:
        raise ValueError("mode must be 'i' or 'ii'")
    pts = rec.breakpoints

    edges = sorted({lo, hi, *(p for p in pts if lo < p < hi)})

    def u_eps(x):
        return np.exp(log_u_eps(x) - shift) * phi(x)

    def diff(x):
        return u_eps(x) - np.exp(rec.log_u(x, eps) - shift) * phi(x)

    if mode == "i":
        den, derr, _ = gauss_adaptive(u_eps, edges, rtol)
        if den <= 0:
            raise WeakLimitError("normalisation integral is not positive")
        num, err, trace = gauss_adaptive(diff, edges, rtol, atol=rtol * den)
        return {"eps": eps, "I": num / den, "numerator": num, "denominator": den,
                "error": (err + abs(num / den) * derr) / den, "trace": trace}
    num, err, trace = gauss_adaptive(diff, edges, rtol, atol=1e-300)
    return {"eps": eps, "I": num, "numerator": num, "error": err, "trace": trace}


def weak_limit_test(provider: Callable, rec_for: Callable, eps_list, phi: Callable, support, mode: str = "i",
                    psi_level: float | None = None) -> WeakLimitTable:
    """Tabulate the weak-limit statistic over ``eps_list`` and fit ``log|I|`` against ``log eps``.

    ``provider(eps)`` returns ``log u_eps`` as a callable; ``rec_for(eps)`` the reconstruction to compare with.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    vals, rows = [], []
    for e in eps:
        r = weak_limit_statistic(provider(e), rec_for(e), e, phi, support, mode, psi_level)
        vals.append(r["I"])
        rows.append({k: v for k, v in r.items() if k != "trace"})
    vals = np.array(vals)
    mag = np.abs(vals)
    ok = mag > 0
    slope = float(np.polyfit(np.log(eps[ok]), np.log(mag[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    ratio = float(mag[-1] / mag[0]) if mag[0] > 0 else float("inf")
    return WeakLimitTable(mode, eps, vals, slope, ratio, {"rows": rows})


def smooth_bump(lo: float, hi: float) -> Callable:
    """C-infinity function positive on (lo, hi), zero outside, with maximum 1."""
    c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def psi(x):
        s = (np.asarray(x, dtype=float) - c) / r
        inside = np.abs(s) < 1
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1 - s * s, 1.0)), 0.0)

    return psi


# -- nonsingularity of dx/dx0 from the minimum ----------------------------------------


@dataclass
class LemmaReport:
    case: str
    times: np.ndarray
    J: np.ndarray  # (nt, n, n)
    det: np.ndarray
    nonsingular: bool
    eigenvalues: np.ndarray  # of H_pp(x0, 0) Hess S0
    cross_check: float  # max |J_closed - J_numeric|

    def as_dict(self) -> dict:
        return {"case": self.case, "nonsingular": self.nonsingular, "min_det": float(np.min(self.det)),
                "eigenvalues": np.real(self.eigenvalues).tolist(), "cross_check": self.cross_check}


def _lemma_hypotheses(sym: Symbol, grad, K):
    f = sym.flags
    reasons = []
    if not f.zero_V:
        reasons.append("potential V is not zero")
    if not f.x_independent_mu:
        reasons.append("jump rates depend on x")
    if not (f.x_independent_B or f.linear_diagonal_B):
        reasons.append("drift is neither constant nor linear with diagonal Jacobian")
    if np.max(np.abs(grad)) > 1e-10:
        reasons.append(f"grad S0 at the base point is {np.max(np.abs(grad)):.3e}, not 0")
    ev = np.linalg.eigvalsh(0.5 * (K + K.T))
    if np.min(ev) < -1e-12:
        reasons.append(f"Hess S0 at the base point has eigenvalue {np.min(ev):.3e} < 0")
    return reasons


def _drift_linear_part(sym: Symbol):
    """``B(x) = b + D x`` with diagonal ``D``."""
    n = sym.dim
    zero = np.zeros((1, n))
    b = np.array([float(B(zero)[0]) for B in sym.B])
    D = np.zeros(n)
    for k, B in enumerate(sym.B):
        e = np.zeros((1, n))
        e[0, k] = 1.0
        D[k] = float(B(e)[0]) - b[k]
    return b, D


def lemma_check(sym: Symbol, x0, grad_S0, hess_S0, T: float, n_times: int = 101,
                numeric_dt: float | None = None) -> LemmaReport:
    """``dx/dx0`` along the trajectory from ``(x0, p = 0)`` by the closed form, cross-checked numerically.

    Constant drift: ``J(t) = I + (int_0^t H_pp(x(s), 0) ds) K``.
    Linear drift ``b + D x`` with diagonal ``D``: ``J(t) = e^{tD} (I + int_0^t e^{-sD} H_pp e^{-sD} ds K)``.
    Raises :class:`LemmaHypothesisError` when the structural hypotheses fail.
    """
    n = sym.dim
    x0 = np.asarray(x0, dtype=float).reshape(n)
    K = np.asarray(hess_S0, dtype=float).reshape(n, n)
    reasons = _lemma_hypotheses(sym, np.asarray(grad_S0, dtype=float), K)
    if reasons:
        raise LemmaHypothesisError(reasons)
    b, D = _drift_linear_part(sym)
    c = sum((j.nu * float(j.lam(np.zeros((1, n)))[0]) for j in sym.jumps), np.zeros(n))
    v = b + c  # velocity at p = 0 is B(x) + sum lam nu
    linear = bool(np.any(D != 0))
    case = "linear-diagonal-drift" if linear else "constant-drift"

    def path(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            lin = np.where(D != 0, (x0 + v / np.where(D != 0, D, 1.0)) * np.exp(D * s) - v / np.where(D != 0, D, 1.0),
                           0.0)
        return np.where(D != 0, lin, x0 + s * v)

    times = np.linspace(0.0, T, n_times)
    # integrand of the closed form on 20-point Gauss panels between output times
    panels = np.repeat(times, 2)[1:-1].reshape(-1, 2)
    refine = 8
    edges = np.concatenate([np.linspace(a, b, refine + 1)[:-1] for a, b in panels] + [[T]])
    h = 0.5 * np.diff(edges)
    s = (0.5 * (edges[1:] + edges[:-1]))[:, None] + h[:, None] * _GL_X
    pts = path(s.ravel()[:, None])
    Hpp = sym.derivatives(pts, np.zeros_like(pts)).H_pp
    w = np.exp(-D[None, :] * s.ravel()[:, None])
    integrand = w[:, :, None] * Hpp * w[:, None, :]
    contrib = np.sum((integrand.reshape(s.shape + (n, n)) * (_GL_W * h[:, None])[:, :, None, None]), axis=1)
    cum = np.concatenate([np.zeros((1, n, n)), np.cumsum(contrib, axis=0)])[::refine]
    eye = np.eye(n)
    J = np.array([np.diag(np.exp(D * t)) @ (eye + M @ K) for t, M in zip(times, cum)])
    det = np.linalg.det(J)
    H0 = sym.derivatives(x0[None, :], np.zeros((1, n))).H_pp[0]
    eig = np.linalg.eigvals(H0 @ K)

    dt = numeric_dt if numeric_dt is not None else T / (n_times - 1)
    num = flow_states(sym, x0[None, :], x0[None, :], np.zeros((1, n)), eye[None], K[None], np.zeros(1),
                      np.zeros(1), np.ones(1), T, dt, tol=1e-10)
    Jn = num.Jx[0]
    tn = num.times
    idx = np.searchsorted(tn, times - 1e-12)
    idx = np.clip(idx, 0, tn.size - 1)
    match = np.isclose(tn[idx], times, atol=1e-9)
    cross = float(np.max(np.abs(Jn[idx[match]] - J[match]))) if np.any(match) else float("nan")
    return LemmaReport(case, times, J, det, bool(np.all(det > 0)), eig, cross)


# -- invertibility without caustics: backward Green function by saddle point ----------


@dataclass
class InvertibilityResult:
    x: np.ndarray
    eps: float
    scaled_error: np.ndarray  # e^{S0/eps} (v - e^{-S0/eps} phi0)
    sup: float


def backward_saddle_recovery(sym: Symbol, forward: TrajectoryBundle, init: InitialData, eps: float, x,
                             T: float | None = None) -> InvertibilityResult:
    """Evaluate ``int G_back(x, y) u_as(y, T) dy`` by the saddle-point method with its first correction.

    ``G_back`` is the heat kernel run backward, ``(4 pi eps a T)^(-1/2) exp((x - y)^2 / (4 eps a T))``,
    and ``u_as(y, T) = sqrt(rho) exp(-S/eps)`` from the forward characteristics.
    The integral is parametrised by the forward label: the phase is
    ``F(alpha) = S(alpha) - (x - X(alpha))^2 / (4 a T)`` and the amplitude
    ``G(alpha) = sqrt(rho0 exp(-L) det Jx)``; both are interpolated by
    quintic splines so the correction term has the derivatives it needs.
    Requires a pure constant-diffusion symbol and no caustic before ``T``.
    """
    if sym.dim != 1 or not sym.x_independent or sym.jumps or np.any(sym.B[0].coeffs != 0) or \
            np.any(sym.V.coeffs != 0):
        raise ValueError("backward Green function is available for the constant-diffusion symbol only")
    T = float(forward.times[-1]) if T is None else float(T)
    k = forward.time_index(T)
    det = forward.det_Jx[:, k]
    if np.any(det <= 0):
        raise ValueError("a caustic formed before T: the projection is not invertible")
    aT = float(sym.A[0][0].coeffs.ravel()[0]) * T
    al = forward.alpha[:, 0]
    X = make_interp_spline(al, forward.x[:, k, 0], k=5)
    S = make_interp_spline(al, forward.S[:, k], k=5)
    G = make_interp_spline(al, np.sqrt(forward.rho0 * np.exp(-forward.L[:, k]) * det), k=5)
    P = make_interp_spline(al, forward.p[:, k, 0], k=5)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        # stationary point: X(alpha) - 2 a T p(alpha) = x, i.e. the characteristic through x at t = 0
        s = brentq(lambda a: float(X(a) - 2 * aT * P(a) - xi), al[0], al[-1], xtol=1e-14,
                   rtol=4 * np.finfo(float).eps)
        D = [X(s, j) for j in range(5)]
        D[0] = D[0] - xi
        sq = [2 * D[0] * D[1], 2 * (D[1] ** 2 + D[0] * D[2]), 2 * (3 * D[1] * D[2] + D[0] * D[3]),
              2 * (3 * D[2] ** 2 + 4 * D[1] * D[3] + D[0] * D[4])]
        f = [float(S(s)) - D[0] ** 2 / (4 * aT)] + [float(S(s, j)) - sq[j - 1] / (4 * aT) for j in range(1, 5)]
        g = [float(G(s, j)) for j in range(3)]
        f2, f3, f4 = f[2], f[3], f[4]
        corr = g[2] / (2 * f2) - f4 * g[0] / (8 * f2**2) - g[1] * f3 / (2 * f2**2) + 5 * f3**2 * g[0] / (24 * f2**3)
        lead = 1.0 / np.sqrt(2 * aT * abs(f2))
        s0 = float(init.S0.value(np.array([[xi]]))[0])
        phi0 = float(init.phi0.value(np.array([[xi]]))[0])
        out[i] = np.exp((s0 - f[0]) / eps) * lead * (g[0] + eps * corr) - phi0
    return InvertibilityResult(x, eps, out, float(np.max(np.abs(out))))


__all__ = [
    "TerraIncognita", "detect_terra_incognita", "BackwardBundle", "backward_bundle", "EndState", "Fill",
    "hermite_fill", "fan_fill", "tangent_fill", "FILLS", "gauss_adaptive", "Reconstruction", "reconstruct", "recovery_error", "FillRejectedError",
    "WeakLimitTable", "weak_limit_statistic", "weak_limit_test", "smooth_bump", "LemmaReport", "lemma_check",
    "LemmaHypothesisError", "InvertibilityResult", "backward_saddle_recovery",
]
