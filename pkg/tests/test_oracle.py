import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfwkb.oracle import (OracleError, OracleSolution, StabilityError, direct_solve, heat_kernel_solve, laplace_integral,
                          log_limit, pair, weighted_density)
from kfwkb.symbol import Symbol, heat_symbol


def gauss_log(eps):
    return lambda y: -np.asarray(y) ** 2 / eps


def gauss_exact(x, t, eps):
    return -x**2 / (eps * (1 + 4 * t)) - 0.5 * np.log(1 + 4 * t)


@settings(max_examples=8, deadline=None)
@given(st.sampled_from([0.2, 0.1, 0.05]), st.floats(0.05, 1.0))
def test_heat_kernel_gaussian_closed_form(eps, t):
    x = np.linspace(-2.0, 2.0, 41)
    sol = heat_kernel_solve(gauss_log(eps), eps, t, x, (-4.0, 4.0))
    np.testing.assert_allclose(sol.u, np.exp(gauss_exact(x, t, eps)), rtol=1e-10)
    assert np.all(sol.u > 0) and sol.method == "heat-kernel"


def test_heat_kernel_small_time_and_errors():
    x = np.linspace(-1.0, 1.0, 11)
    sol = heat_kernel_solve(gauss_log(0.1), 0.1, 1e-6, x, (-4.0, 4.0))
    np.testing.assert_allclose(sol.u, np.exp(-x**2 / 0.1), rtol=1e-4)
    with pytest.raises(ValueError):
        heat_kernel_solve(gauss_log(0.1), 0.1, 0.0, x, (-4.0, 4.0))


def test_heat_kernel_log_limit_matches_characteristics():
    t = 0.5
    x = np.linspace(-1.5, 1.5, 31)
    for eps in (0.1, 0.05, 0.025):
        sol = heat_kernel_solve(gauss_log(eps), eps, t, x, (-4.0, 4.0))
        # exact: -eps ln u = x^2/(1+4t) + (eps/2) ln(1+4t)
        dev = log_limit(sol) - x**2 / (1 + 4 * t)
        np.testing.assert_allclose(dev, 0.5 * eps * math.log(1 + 4 * t), atol=1e-9)


def test_direct_matches_heat_kernel():
    eps, T = 0.1, 0.25
    ds = direct_solve(heat_symbol(), gauss_log(eps), eps, T, (-3.0, 3.0), 1201, 2.5e-4)
    xs = ds.x[::20]
    hk = heat_kernel_solve(gauss_log(eps), eps, T, xs, (-3.0, 3.0))
    assert np.max(np.abs(ds.u[::20] - hk.u)) / np.max(hk.u) <= 1e-4
    assert ds.meta["self_check_passed"]


def test_direct_pure_drift_translates_log_limit():
    b, eps, T = 0.5, 0.05, 1.0
    sym = Symbol.from_spec({"dim": 1, "B": [b]})
    ds = direct_solve(sym, gauss_log(eps), eps, T, (-3.0, 3.0), 3001, 1e-3, self_check=False)
    core = np.abs(ds.x - b * T) <= 1.0
    err = np.max(np.abs(log_limit_of(ds)[core] - (ds.x[core] - b * T) ** 2))
    assert err <= 0.1 * 1.0 + 2 * eps  # O(eps) plus first-order upwind smearing at this dx
    assert np.argmax(ds.u) == np.argmin(np.abs(ds.x - b * T))


def log_limit_of(sol):
    return -sol.eps * sol.log_u


def test_zero_rate_jump_is_pure_pde():
    eps = 0.1
    with_jump = Symbol.from_spec({"dim": 1, "A": [1.0], "jumps": [{"nu": [1.0], "lambda": [0.0]}]})
    a = direct_solve(with_jump, gauss_log(eps), eps, 0.1, (-3, 3), 301, 1e-3, self_check=False)
    b = direct_solve(heat_symbol(), gauss_log(eps), eps, 0.1, (-3, 3), 301, 1e-3, self_check=False)
    np.testing.assert_array_equal(a.u, b.u)


def test_direct_conserves_mass_without_drift_or_potential():
    eps = 0.1
    ds = direct_solve(heat_symbol(0.5), gauss_log(eps), eps, 0.5, (-4, 4), 801, 1e-3, self_check=False)
    x = ds.x
    m0 = np.trapezoid(np.exp(gauss_log(eps)(x)), x)
    assert np.trapezoid(ds.u, x) == pytest.approx(m0, rel=1e-10)


def test_direct_refuses_unstable_step():
    sym = Symbol.from_spec({"dim": 1, "A": [1.0], "jumps": [{"nu": [1.0], "lambda": [2.0]}]})
    with pytest.raises(StabilityError) as info:
        direct_solve(sym, gauss_log(0.1), 0.1, 0.5, (-3, 3), 301, 0.1)
    assert info.value.suggested_dt is not None and info.value.suggested_dt < 0.1
    # following the suggestions (each bound in turn) gives an admissible step
    T, dt = 0.5, 0.1
    for _ in range(3):
        try:
            ok = direct_solve(sym, gauss_log(0.1), 0.1, T, (-3, 3), 301, dt, self_check=False)
            break
        except StabilityError as e:
            dt = T / math.ceil(T / e.suggested_dt)
    assert np.all(ok.u >= 0)


def test_laplace_examples():
    eps = 0.01
    r = laplace_integral(lambda x: x * x, lambda x: 1.0, eps)
    assert r.exact == pytest.approx(math.sqrt(math.pi * eps), rel=1e-9)
    assert r.asymptotic == pytest.approx(math.sqrt(math.pi * eps), rel=1e-6)
    r = laplace_integral(lambda x: x * x + x**4, lambda x: 1.0, eps)
    assert not r.endpoint and abs(r.ratio - 1) <= 0.05
    r = laplace_integral(lambda x: x * x, lambda x: 1.0, eps, window=(1.0, 3.0))
    assert r.endpoint and r.x_star == 1.0 and r.f_star == 1.0
    assert abs(r.ratio - 1) <= 0.05
    assert r.exact == pytest.approx(r.exact_scaled * math.exp(-1.0 / eps), rel=1e-12)


def test_log_limit_and_weighted_density():
    eps = 0.05
    x = np.linspace(-1, 1, 21)
    S0 = 0.5 * x**2 + 0.1 * x**4
    sol = OracleSolution(x, 0.0, eps, np.exp(-S0 / eps), -S0 / eps, "initial")
    np.testing.assert_allclose(log_limit(sol), S0, atol=1e-15)
    rho = 1.0 + 0.5 * np.cos(x)
    u = OracleSolution(x, 0.0, eps, np.exp(-S0 / eps) * np.sqrt(rho), -S0 / eps + 0.5 * np.log(rho), "as")
    np.testing.assert_allclose(weighted_density(u, S0), rho, rtol=1e-12)
    zero = OracleSolution(x, 0.0, eps, np.zeros_like(x), np.full_like(x, -np.inf), "zero")
    with pytest.raises(OracleError):
        log_limit(zero)


def test_pair_simpson():
    x = np.linspace(0, np.pi, 201)
    assert pair(x, np.sin(x), lambda y: np.ones_like(y)) == pytest.approx(2.0, rel=1e-8)
