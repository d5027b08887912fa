"""
Kolmogorov-Feller symbols and their effective real Hamiltonian.

A symbol is described by polynomial coefficient functions on a spatial window:

    H(x, p) = (A(x) p, p) + V(x) + (B(x), p) + sum_k lam_k(x) (exp((p, nu_k)) - 1)

The jump measure is a finite sum of atoms ``lam_k(x) * delta(nu - nu_k)``.  The
jump term is written in the real (tunnelling) form obtained from the generator
``u -> sum_k lam_k (u(x - eps nu_k) - u(x))`` acting on ``exp(-S/eps)``.

Coefficient arrays are lowest-degree-first.  In one dimension a coefficient is a
1-d array ``c[i] x**i``; in two dimensions a 2-d array ``c[i, j] x1**i x2**j``.
All evaluators are vectorised over a leading sample axis: ``x`` and ``p`` have
shape ``(m, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

STRUCTURAL_TOL = 1e-12
MAX_DEGREE = 4


class SymbolDomainError(ValueError):
    """Raised when the Hamiltonian leaves the finite range (exponential overflow)."""


class Poly:
    """Polynomial in ``dim`` variables with cached first and second derivatives."""

    def __init__(self, coeffs, dim: int):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if dim == 2 and c.ndim == 1:
            # a 1-d list for a 2-d symbol is read as a polynomial in x1 only
            c = c[:, None]
        if c.ndim != dim:
            raise ValueError(f"coefficient array has ndim={c.ndim}, expected {dim}")
        if any(s - 1 > MAX_DEGREE for s in c.shape):
            raise ValueError(f"polynomial degree exceeds {MAX_DEGREE}")
        self.dim = dim
        self.coeffs = c
        self._d1 = [npoly.polyder(c, axis=k) for k in range(dim)]
        self._d2 = [[npoly.polyder(self._d1[k], axis=l) for l in range(dim)] for k in range(dim)]

    def _eval(self, c, x):
        if self.dim == 1:
            return npoly.polyval(x[:, 0], c)
        return npoly.polyval2d(x[:, 0], x[:, 1], c)

    def __call__(self, x):
        return self._eval(self.coeffs, x)

    def grad(self, x):
        return np.stack([self._eval(d, x) for d in self._d1], axis=-1)

    def hess(self, x):
        rows = [np.stack([self._eval(d, x) for d in row], axis=-1) for row in self._d2]
        return np.stack(rows, axis=-2)

    @property
    def is_constant(self) -> bool:
        flat = self.coeffs.ravel()
        return bool(np.all(flat[1:] == 0.0))

    def degree_at_most_one_in(self, k: int) -> bool:
        """True when the polynomial is affine in x_k and independent of the other coordinates."""
        c = self.coeffs
        for idx in np.ndindex(c.shape):
            if c[idx] == 0.0:
                continue
            others = [idx[j] for j in range(self.dim) if j != k]
            if any(others) or idx[k] > 1:
                return False
        return True

    def tolist(self):
        return self.coeffs.tolist()


@dataclass(frozen=True)
class JumpAtom:
    nu: np.ndarray
    lam: Poly

    @classmethod
    def from_spec(cls, nu, lambda_coeffs, dim: int) -> "JumpAtom":
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        if nu.shape != (dim,):
            raise ValueError(f"jump vector must have length {dim}")
        return cls(nu=nu, lam=Poly(lambda_coeffs, dim))


@dataclass(frozen=True)
class SymbolFlags:
    x_independent_B: bool
    x_independent_mu: bool
    zero_V: bool
    linear_diagonal_B: bool

    @property
    def lemma_constant(self) -> bool:
        return self.x_independent_B and self.x_independent_mu and self.zero_V

    @property
    def lemma_linear(self) -> bool:
        return self.linear_diagonal_B and self.x_independent_mu and self.zero_V


@dataclass(frozen=True)
class Derivatives:
    H: np.ndarray  # (m,)
    H_p: np.ndarray  # (m, n)
    H_x: np.ndarray  # (m, n)
    H_pp: np.ndarray  # (m, n, n)
    H_xp: np.ndarray  # (m, n, n), [k, j] = d2H / dx_k dp_j
    H_xx: np.ndarray  # (m, n, n)


@dataclass(frozen=True)
class Symbol:
    """Immutable symbol data; use :meth:`from_spec` to build from JSON-like input."""

    dim: int
    A: tuple  # n x n nested tuple of Poly
    V: Poly
    B: tuple  # n Poly
    jumps: tuple = ()
    window: np.ndarray = field(default_factory=lambda: np.array([[-np.inf, np.inf]]))

    @classmethod
    def from_spec(cls, spec: dict) -> "Symbol":
        dim = int(spec.get("dim", 1))
        if dim not in (1, 2):
            raise ValueError("only dim 1 and 2 are supported")
        zero = np.zeros((1,) * dim)
        if dim == 1:
            A = ((Poly(spec.get("A", [0.0]), 1),),)
            B = (Poly(spec.get("B", [0.0]), 1),)
        else:
            A_raw = spec.get("A", [[zero, zero], [zero, zero]])
            A = tuple(tuple(Poly(A_raw[i][j], 2) for j in range(2)) for i in range(2))
            B_raw = spec.get("B", [zero, zero])
            B = tuple(Poly(b, 2) for b in B_raw)
            for i in range(2):
                for j in range(i):
                    a, b = A[i][j].coeffs, A[j][i].coeffs
                    if a.shape != b.shape or not np.array_equal(a, b):
                        raise ValueError("diffusion matrix A must be symmetric")
        V = Poly(spec.get("V", zero), dim)
        jumps = tuple(JumpAtom.from_spec(j["nu"], j["lambda"], dim) for j in spec.get("jumps", []))
        window = np.asarray(spec.get("window", [[-np.inf, np.inf]] * dim), dtype=float).reshape(dim, 2)
        return cls(dim=dim, A=A, V=V, B=B, jumps=jumps, window=window)

    def to_spec(self) -> dict:
        if self.dim == 1:
            A = self.A[0][0].tolist()
            B = self.B[0].tolist()
        else:
            A = [[a.tolist() for a in row] for row in self.A]
            B = [b.tolist() for b in self.B]
        return {
            "dim": self.dim,
            "A": A,
            "V": self.V.tolist(),
            "B": B,
            "jumps": [{"nu": j.nu.tolist(), "lambda": j.lam.tolist()} for j in self.jumps],
            "window": self.window.ravel().tolist() if self.dim == 1 else self.window.tolist(),
        }

    # -- structure -----------------------------------------------------------

    @property
    def flags(self) -> SymbolFlags:
        b_const = all(b.is_constant for b in self.B)
        mu_const = all(j.lam.is_constant for j in self.jumps)
        zero_v = bool(np.all(self.V.coeffs == 0.0))
        linear = all(b.degree_at_most_one_in(k) for k, b in enumerate(self.B))
        return SymbolFlags(b_const, mu_const, zero_v, linear)

    @property
    def x_independent(self) -> bool:
        f = self.flags
        a_const = all(a.is_constant for row in self.A for a in row)
        v_const = all(self.V.coeffs.ravel()[1:] == 0.0)
        return a_const and v_const and f.x_independent_B and f.x_independent_mu

    def in_window(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        lo, hi = self.window[:, 0], self.window[:, 1]
        return np.all((x >= lo) & (x <= hi), axis=1)

    def sample_window(self, n: int = 41, pad: float = 10.0) -> np.ndarray:
        """Tensor grid of sample points over the window (infinite sides replaced by +-pad)."""
        axes = []
        for lo, hi in self.window:
            lo = -pad if not np.isfinite(lo) else lo
            hi = pad if not np.isfinite(hi) else hi
            axes.append(np.linspace(lo, hi, n))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # -- coefficient fields ----------------------------------------------------

    def diffusion(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        n = self.dim
        out = np.empty((x.shape[0], n, n))
        for i in range(n):
            for j in range(n):
                out[:, i, j] = self.A[i][j](x)
        return out

    def drift(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.stack([b(x) for b in self.B], axis=-1)

    # -- Hamiltonian -----------------------------------------------------------

    def _jump_exp(self, p, k, atom):
        with np.errstate(over="ignore"):
            e = np.exp(p @ atom.nu)
        if not np.all(np.isfinite(e)):
            raise SymbolDomainError(f"jump atom {k} (nu={atom.nu.tolist()}) overflowed exp((p, nu))")
        return e

    def hamiltonian(self, x, p) -> np.ndarray:
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        A = self.diffusion(x)
        H = np.einsum("mij,mi,mj->m", A, p, p) + self.V(x) + np.einsum("mi,mi->m", self.drift(x), p)
        for k, atom in enumerate(self.jumps):
            H = H + atom.lam(x) * (self._jump_exp(p, k, atom) - 1.0)
        if not np.all(np.isfinite(H)):
            raise SymbolDomainError("non-finite Hamiltonian value")
        return H

    def real_part_complex(self, x, p, eta) -> np.ndarray:
        """Re H(x, p + i eta) for the same symbol, continued to complex momenta."""
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        eta = _as_points(eta, self.dim)
        A = self.diffusion(x)
        out = (np.einsum("mij,mi,mj->m", A, p, p) - np.einsum("mij,mi,mj->m", A, eta, eta)
               + self.V(x) + np.einsum("mi,mi->m", self.drift(x), p))
        for k, atom in enumerate(self.jumps):
            e = self._jump_exp(p, k, atom)
            out = out + atom.lam(x) * (e * np.cos(eta @ atom.nu) - 1.0)
        return out

    def derivatives(self, x, p) -> Derivatives:
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        n = self.dim
        m = x.shape[0]
        A = self.diffusion(x)
        dA = np.empty((m, n, n, n))  # [m, k, i, j] = d_k A_ij
        d2A = np.empty((m, n, n, n, n))  # [m, k, l, i, j]
        for i in range(n):
            for j in range(n):
                dA[:, :, i, j] = self.A[i][j].grad(x)
                d2A[:, :, :, i, j] = self.A[i][j].hess(x)
        Bv = self.drift(x)
        dB = np.stack([b.grad(x) for b in self.B], axis=-1)  # [m, k, j] = d_k B_j
        d2B = np.stack([b.hess(x) for b in self.B], axis=-1)  # [m, k, l, j]

        Ap = np.einsum("mij,mj->mi", A, p)
        H = np.einsum("mi,mi->m", Ap, p) + self.V(x) + np.einsum("mi,mi->m", Bv, p)
        H_p = 2.0 * Ap + Bv
        H_pp = 2.0 * A
        dAp = np.einsum("mkij,mj->mki", dA, p)
        H_x = np.einsum("mki,mi->mk", dAp, p) + self.V.grad(x) + np.einsum("mkj,mj->mk", dB, p)
        H_xp = 2.0 * dAp + dB
        H_xx = (np.einsum("mklij,mi,mj->mkl", d2A, p, p) + self.V.hess(x)
                + np.einsum("mklj,mj->mkl", d2B, p))
        for k, atom in enumerate(self.jumps):
            e = self._jump_exp(p, k, atom)
            lam, glam, hlam = atom.lam(x), atom.lam.grad(x), atom.lam.hess(x)
            nu = atom.nu
            H = H + lam * (e - 1.0)
            H_p = H_p + (lam * e)[:, None] * nu
            H_pp = H_pp + (lam * e)[:, None, None] * np.outer(nu, nu)
            H_x = H_x + glam * (e - 1.0)[:, None]
            H_xp = H_xp + (glam * e[:, None])[:, :, None] * nu[None, None, :]
            H_xx = H_xx + hlam * (e - 1.0)[:, None, None]
        return Derivatives(H, H_p, H_x, H_pp, H_xp, H_xx)


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x.reshape(-1, 1)
    return x


def eval_hamiltonian(sym: Symbol, x, p) -> np.ndarray | float:
    """Effective real Hamiltonian; scalar in, scalar out."""
    out = sym.hamiltonian(x, p)
    return float(out[0]) if out.size == 1 else out


def eval_derivatives(sym: Symbol, x, p) -> Derivatives:
    return sym.derivatives(x, p)


@dataclass(frozen=True)
class InequalityReport:
    max_violation: float
    argmax: tuple
    passed: bool
    tol: float = STRUCTURAL_TOL


def check_maslov_inequality(sym: Symbol, xs, ps, etas, tol: float = STRUCTURAL_TOL) -> InequalityReport:
    """Max over the sample grids of ``Re H(x, p + i eta) - H(x, p)``; passes when <= tol."""
    xs = _as_points(xs, sym.dim)
    ps = _as_points(ps, sym.dim)
    etas = _as_points(etas, sym.dim)
    ix, ip, ie = np.meshgrid(np.arange(len(xs)), np.arange(len(ps)), np.arange(len(etas)), indexing="ij")
    ix, ip, ie = ix.ravel(), ip.ravel(), ie.ravel()
    X, P, E = xs[ix], ps[ip], etas[ie]
    diff = sym.real_part_complex(X, P, E) - sym.hamiltonian(X, P)
    k = int(np.argmax(diff))
    worst = float(diff[k])
    where = (X[k].tolist(), P[k].tolist(), E[k].tolist())
    return InequalityReport(worst, where, worst <= tol, tol)


@dataclass(frozen=True)
class MomentReport:
    passed: bool
    residual: float


def check_moment_condition(sym: Symbol, xs=None, tol: float = STRUCTURAL_TOL) -> MomentReport:
    """Check ``sum_k nu_{k,i} d lam_k / d x_i = 0`` for every coordinate i on a sample grid."""
    xs = sym.sample_window() if xs is None else _as_points(xs, sym.dim)
    res = np.zeros((xs.shape[0], sym.dim))
    for atom in sym.jumps:
        res += atom.lam.grad(xs) * atom.nu[None, :]
    worst = float(np.max(np.abs(res))) if res.size else 0.0
    return MomentReport(worst <= tol, worst)


def check_positive_diffusion(sym: Symbol, xs=None) -> float:
    """Smallest eigenvalue of A(x) over the sample grid."""
    xs = sym.sample_window() if xs is None else _as_points(xs, sym.dim)
    return float(np.min(np.linalg.eigvalsh(sym.diffusion(xs))))


def check_rates_nonnegative(sym: Symbol, xs=None) -> float:
    xs = sym.sample_window() if xs is None else _as_points(xs, sym.dim)
    if not sym.jumps:
        return 0.0
    return float(min(np.min(a.lam(xs)) for a in sym.jumps))


def heat_symbol(diffusion: float = 1.0, window: Sequence[float] = (-50.0, 50.0)) -> Symbol:
    """H(x, p) = a p**2: the symbol of ``-eps u_t + a eps**2 u_xx = 0``."""
    return Symbol.from_spec({"dim": 1, "A": [diffusion], "window": list(window)})
