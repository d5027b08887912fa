"""
Reference solutions and asymptotic integral evaluation.

* ``heat_kernel_solve``: exact convolution with the heat kernel, evaluated in
  the log domain so that data of the form ``exp(-S0/eps)`` never underflow.
* ``direct_solve``: finite differences for the full equation in one dimension,

      u_t = eps A u_xx - B u_x + V u / eps + (1/eps) sum_k lam_k (u(x - eps nu_k) - u),

  which is ``-eps u_t + P(x, -eps d/dx) u = 0`` written out for the symbol.
* ``laplace_integral``: exact quadrature next to the saddle-point formula.
* ``log_limit`` / ``weighted_density``: recover the phase and the density from
  a positive solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, quad_vec, simpson
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from .symbol import Symbol

QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-14
SELF_CHECK_TOL = 1e-4
_LOG_CUT = 60.0  # integrand factors below exp(-60) relative to the peak are dropped


class OracleError(RuntimeError):
    pass


class StabilityError(ValueError):
    def __init__(self, msg, suggested_dt=None, suggested_nx=None):
        super().__init__(msg)
        self.suggested_dt = suggested_dt
        self.suggested_nx = suggested_nx


@dataclass
class OracleSolution:
    x: np.ndarray
    t: float
    eps: float
    u: np.ndarray
    log_u: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def to_rows(self):
        return np.column_stack([self.x, self.u, log_limit(self)])


# -- heat kernel ----------------------------------------------------------------


def heat_kernel_solve(log_u0: Callable, eps: float, t: float, x_grid, support, diffusion: float = 1.0,
                      rtol: float = QUAD_RTOL, atol: float = QUAD_ATOL, n_probe: int = 4001,
                      block: int = 32) -> OracleSolution:
    """Solve ``u_t = eps a u_xx`` by convolving ``u0 = exp(log_u0)`` with the heat kernel.

    ``support`` is an interval outside which ``u0`` vanishes (or is negligible).
    For each block of target points the integrand is rescaled by its own peak
    and integrated adaptively; the peak is restored in ``log_u``.
    """
    if t <= 0:
        raise ValueError("heat kernel solve needs t > 0")
    if eps <= 0 or diffusion <= 0:
        raise ValueError("eps and diffusion must be positive")
    x = np.atleast_1d(np.asarray(x_grid, dtype=float))
    lo, hi = map(float, support)
    four = 4.0 * eps * diffusion * t
    # the probe grid must resolve the kernel width for the peak search
    n_probe = max(n_probe, int(np.ceil(4 * (hi - lo) / np.sqrt(four))) + 1)
    ys = np.linspace(lo, hi, n_probe)
    with np.errstate(divide="ignore"):
        lu0 = np.asarray(log_u0(ys), dtype=float)
    log_u = np.empty_like(x)
    worst = 0.0
    for s in range(0, x.size, block):
        xb = x[s:s + block]
        E = lu0[None, :] - (xb[:, None] - ys[None, :]) ** 2 / four
        m = E.max(axis=1)
        if not np.all(np.isfinite(m)):
            raise OracleError("initial data vanish on the whole support")
        keep = np.any(E > (m[:, None] - _LOG_CUT), axis=0)
        idx = np.flatnonzero(keep)
        a = ys[max(idx[0] - 1, 0)]
        b = ys[min(idx[-1] + 1, ys.size - 1)]

        def f(y, xb=xb, m=m):
            with np.errstate(divide="ignore"):
                ly = float(np.asarray(log_u0(np.array([y])), dtype=float)[0])
            return np.exp(ly - (xb - y) ** 2 / four - m)

        brk = xb[(xb > a) & (xb < b)]  # narrow kernels peak at the targets
        val, err = quad_vec(f, a, b, epsabs=atol, epsrel=rtol, norm="max", limit=4000,
                            points=brk if brk.size else None)
        if np.any(val <= 0) or err > max(rtol * np.max(val), atol) * 10:
            raise OracleError(f"heat kernel quadrature did not converge on block starting at x={xb[0]:.6g}: "
                              f"error estimate {err:.3e}, smallest value {np.min(val):.3e}")
        worst = max(worst, err / np.max(val))
        log_u[s:s + block] = m + np.log(val) - 0.5 * np.log(np.pi * four)
    return OracleSolution(x, float(t), float(eps), np.exp(log_u), log_u, "heat-kernel",
                          {"rtol": rtol, "atol": atol, "max_rel_error_estimate": worst, "support": [lo, hi]})


# -- finite differences ------------------------------------------------------------


def _coeff(poly, x):
    return np.asarray(poly(x[:, None]), dtype=float)


def _operator_bands(sym: Symbol, x, eps, dx):
    """Tridiagonal part of the generator: lower, diagonal, upper coefficients at interior nodes."""
    A = _coeff(sym.A[0][0], x)
    B = _coeff(sym.B[0], x)
    V = _coeff(sym.V, x)
    lam = sum((_coeff(j.lam, x) for j in sym.jumps), np.zeros_like(x))
    a = eps * A / dx**2
    central = np.abs(B) * dx <= 2.0 * eps * A
    lower = np.where(central, a + B / (2 * dx), a + np.maximum(B, 0.0) / dx)
    upper = np.where(central, a - B / (2 * dx), a + np.maximum(-B, 0.0) / dx)
    diag = np.where(central, -2 * a, -2 * a - np.abs(B) / dx) + (V - lam) / eps
    return lower, diag, upper, lam


def _jump_gather(sym: Symbol, x, eps):
    """Linear-interpolation weights for ``(1/eps) sum_k lam_k(x) u(x - eps nu_k)``; zero outside the grid."""
    terms = []
    dx = x[1] - x[0]
    for j in sym.jumps:
        lam = _coeff(j.lam, x) / eps
        y = x - eps * float(j.nu[0])
        s = (y - x[0]) / dx
        i = np.floor(s).astype(int)
        w = s - i
        ok = (i >= 0) & (i + 1 < x.size)
        terms.append((np.where(ok, i, 0), np.where(ok, w, 0.0), np.where(ok, lam, 0.0)))
    return terms


def _apply_gather(terms, u):
    out = np.zeros_like(u)
    for i, w, lam in terms:
        out += lam * ((1.0 - w) * u[i] + w * u[np.minimum(i + 1, u.size - 1)])
    return out


def _direct_run(sym, u0, x, eps, T, dt):
    dx = x[1] - x[0]
    nsteps = int(round(T / dt))
    lower, diag, upper, lam = _operator_bands(sym, x, eps, dx)
    if np.any(lam < 0):
        raise StabilityError("negative jump rate on the grid")
    lam_max = float(np.max(lam)) if lam.size else 0.0
    if dt * lam_max / eps > 1.0:
        d = 0.9 * eps / lam_max
        raise StabilityError(f"jump step dt*lam/eps = {dt * lam_max / eps:.3g} > 1", suggested_dt=d)
    if np.any(1.0 + 0.5 * dt * diag < -1e-12):
        d = 0.9 * 2.0 / float(np.max(-diag))
        raise StabilityError(f"Crank-Nicolson explicit half loses positivity (dt > {d / 0.9:.3g})",
                             suggested_dt=d)
    if np.any(1.0 - 0.5 * dt * (diag + lower + upper) <= 0):
        d = 0.9 * 2.0 / float(np.max(diag + lower + upper))
        raise StabilityError("implicit half is not an M-matrix for this dt", suggested_dt=d)
    # interior system with zero Dirichlet data
    n = x.size - 2
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * dt * upper[1:-2]
    ab[1, :] = 1.0 - 0.5 * dt * diag[1:-1]
    ab[2, :-1] = -0.5 * dt * lower[2:-1]
    gather = _jump_gather(sym, x, eps)
    u = u0.copy()
    u[0] = u[-1] = 0.0
    h = 0.5 * dt
    for _ in range(nsteps):
        if gather:
            v = u + h * _apply_gather(gather, u)
            u = 0.5 * (u + v + h * _apply_gather(gather, v))
        rhs = u[1:-1] + 0.5 * dt * (lower[1:-1] * u[:-2] + diag[1:-1] * u[1:-1] + upper[1:-1] * u[2:])
        u[1:-1] = solve_banded((1, 1), ab, rhs)
        if gather:
            v = u + h * _apply_gather(gather, u)
            u = 0.5 * (u + v + h * _apply_gather(gather, v))
        u[0] = u[-1] = 0.0
    return u


def direct_solve(sym: Symbol, log_u0: Callable, eps: float, T: float, x_window, nx: int, dt: float,
                 self_check: bool = True) -> OracleSolution:
    """Finite-difference solution on a uniform grid with zero boundary values (n = 1).

    Crank-Nicolson for diffusion, drift and potential (central differences,
    upwind where the cell Peclet number exceeds 2), Strang-split with an SSP
    Runge-Kutta step for the jump gather term.  Grid and step are checked for
    positivity before running.  With ``self_check`` the run is repeated with
    ``dx/2`` and ``dt/2`` (smaller if positivity on the finer grid requires it)
    and the relative change recorded in ``meta``.
    """
    if sym.dim != 1:
        raise ValueError("direct solver is one-dimensional")
    if eps <= 0 or T <= 0 or dt <= 0:
        raise ValueError("eps, T and dt must be positive")
    nsteps = int(round(T / dt))
    if not np.isclose(nsteps * dt, T, rtol=1e-9):
        raise ValueError("T must be an integer multiple of dt")
    lo, hi = map(float, x_window)
    x = np.linspace(lo, hi, nx)
    with np.errstate(divide="ignore", under="ignore"):
        u0 = np.exp(np.asarray(log_u0(x), dtype=float))
    u = _direct_run(sym, u0, x, eps, T, dt)
    meta = {"nx": nx, "dt": dt, "x_window": [lo, hi]}
    if self_check:
        xf = np.linspace(lo, hi, 2 * nx - 1)
        with np.errstate(divide="ignore", under="ignore"):
            uf0 = np.exp(np.asarray(log_u0(xf), dtype=float))
        dtf = 0.5 * dt
        try:
            uf = _direct_run(sym, uf0, xf, eps, T, dtf)
        except StabilityError as e:  # the finer grid tightens the positivity bound
            if e.suggested_dt is None:
                raise
            dtf = T / int(np.ceil(T / e.suggested_dt))
            uf = _direct_run(sym, uf0, xf, eps, T, dtf)
        meta["self_check_dt"] = dtf
        change = float(np.max(np.abs(uf[::2] - u)) / np.max(np.abs(uf)))
        meta.update(self_check=change, self_check_passed=bool(change <= SELF_CHECK_TOL))
    if np.any(u < 0):
        raise OracleError("direct solution lost positivity")
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
    return OracleSolution(x, float(T), float(eps), u, log_u, "direct", meta)


# -- Laplace integrals ------------------------------------------------------------


@dataclass
class LaplaceResult:
    exact: float
    asymptotic: float
    x_star: float
    f_star: float
    endpoint: bool
    exact_scaled: float  # exact * exp(f_star / eps)
    asymptotic_scaled: float

    @property
    def ratio(self) -> float:
        return self.exact_scaled / self.asymptotic_scaled


def laplace_integral(f: Callable, g: Callable, eps: float, window=(-np.inf, np.inf), fpp: Callable | None = None,
                     fp: Callable | None = None, search=(-20.0, 20.0), h: float = 1e-4) -> LaplaceResult:
    """``int g exp(-f/eps)`` over ``window`` by quadrature and by the saddle-point formula.

    An interior minimum uses ``g(x*) sqrt(2 pi eps / f''(x*)) exp(-f(x*)/eps)``;
    a minimum at a finite endpoint ``a`` uses ``g(a) eps / |f'(a)| exp(-f(a)/eps)``
    and sets ``endpoint``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lo, hi = float(window[0]), float(window[1])
    slo, shi = max(lo, search[0]), min(hi, search[1])
    grid = np.linspace(slo, shi, 4001)
    fv = np.array([f(v) for v in grid])
    k = int(np.argmin(fv))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    xs = float(res.x) if res.fun <= fv[k] else float(grid[k])
    span = shi - slo
    endpoint = False
    for e in (lo, hi):
        if np.isfinite(e) and abs(xs - e) <= 1e-6 * max(1.0, span):
            xs, endpoint = e, True
    fs = float(f(xs))

    def integrand(y):
        return g(y) * np.exp(-(f(y) - fs) / eps)

    pts = None if not (np.isfinite(lo) and np.isfinite(hi)) else [xs] if lo < xs < hi else None
    if np.isfinite(lo) and np.isfinite(hi):
        val, err = quad(integrand, lo, hi, points=pts, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=500)
    else:
        left = quad(integrand, lo, xs, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=500) if xs > lo else (0.0, 0.0)
        right = quad(integrand, xs, hi, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=500) if xs < hi else (0.0, 0.0)
        val, err = left[0] + right[0], left[1] + right[1]
    if err > max(1e-8 * abs(val), 1e-12):
        raise OracleError(f"Laplace quadrature error estimate {err:.3e} for value {val:.3e}")
    if endpoint:
        if fp is not None:
            d1 = fp(xs)
        else:  # one-sided difference into the window
            d1 = (f(xs + h) - fs) / h if xs == lo else (fs - f(xs - h)) / h
        asym_s = g(xs) * eps / abs(d1)
    else:
        d2 = fpp(xs) if fpp is not None else (f(xs + h) - 2 * fs + f(xs - h)) / h**2
        if d2 <= 0:
            raise OracleError(f"degenerate minimum at x={xs}: f''={d2}")
        asym_s = g(xs) * np.sqrt(2 * np.pi * eps / d2)
    scale = np.exp(-fs / eps)
    return LaplaceResult(float(val * scale), float(asym_s * scale), xs, fs, endpoint, float(val), float(asym_s))


# -- phase and density from a solution ----------------------------------------------


def log_limit(sol: OracleSolution) -> np.ndarray:
    """``-eps ln u`` pointwise."""
    if np.any(~(sol.log_u > -np.inf)) or np.any(sol.u < 0):
        raise OracleError("log limit needs u > 0")
    return -sol.eps * sol.log_u


def weighted_density(sol: OracleSolution, S_ref) -> np.ndarray:
    """``exp(2 S_ref / eps) u**2``, formed in the log domain."""
    if np.any(sol.u < 0):
        raise OracleError("weighted density needs u >= 0")
    return np.exp(2.0 * np.asarray(S_ref) / sol.eps + 2.0 * sol.log_u)


def pair(x, values, psi: Callable) -> float:
    """``int values * psi dx`` on the grid (Simpson)."""
    x = np.asarray(x, dtype=float)
    return float(simpson(np.asarray(values) * psi(x), x=x))
