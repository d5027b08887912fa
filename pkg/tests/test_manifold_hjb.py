import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import init_1d
from kfwkb.density import assemble_solution, regular_density
from kfwkb.hamilton import integrate_bundle
from kfwkb.hjb import (DegenerateShockError, ShockPoint, ValueFieldError, bump_test_function, heaviside_product_check,
                       hopf_momentum_fixture, shock_position_equal_area, shock_speed_rh, switch_B, value_function)
from kfwkb.manifold import branches_at, snapshot
from kfwkb.symbol import Symbol, heat_symbol

# symmetric two-well action: S0 = a^2/2 + 2 exp(-a^2/2), S0''(0) = -1, folds after t = 1/2
WELLS = init_1d([0.0, 0.0, 0.5], -4.0, 4.0, 801, bumps=[{"amp": 2.0, "center": 0.0, "width": 1.0}])


@pytest.fixture(scope="module")
def wells():
    return integrate_bundle(heat_symbol(), WELLS, 1.0, 1e-3)


def test_initial_snapshot_is_graph(heat_run):
    c = snapshot(heat_run.bundle, 0.0)
    a = heat_run.init.alpha
    np.testing.assert_array_equal(c.x, a[:, 0])
    np.testing.assert_array_equal(c.p, heat_run.init.S0.grad(a)[:, 0])
    convex = snapshot(integrate_bundle(heat_symbol(), init_1d([0, 0, 1.0], -1, 1, 21), 0.1, 1e-2), 0.0)
    assert convex.folds.size == 0


def test_fold_count_before_and_after_caustic(heat_run):
    assert snapshot(heat_run.bundle, 0.45).folds.size == 0
    late = snapshot(heat_run.bundle, 1.0)
    assert late.folds.size == 2
    lo, hi = sorted(late.x_of(late.fold_alpha))
    assert len(branches_at(late, 0.5 * (lo + hi))) == 3
    assert len(branches_at(late, lo - 0.5)) == 1
    assert branches_at(late, late.x.max() + 1.0) == []


def test_snapshot_records_requested_time(heat_run):
    c = snapshot(heat_run.bundle, 0.30004)
    assert c.t == pytest.approx(0.3) and c.requested_t == 0.30004


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0), st.sampled_from([0.3, 0.75, 1.0]))
def test_branch_count_odd_and_inversion_consistent(heat_run, x, t):
    c = snapshot(heat_run.bundle, t)
    lo, hi = c.x_hull
    if not lo < x < hi:
        return
    br = branches_at(c, x)
    assert len(br) % 2 == 1
    for b in br:
        assert abs(float(c.x_of(b.alpha)) - x) <= 1e-9


def test_value_is_min_over_branches(heat_run):
    c = snapshot(heat_run.bundle, 1.0)
    x = np.linspace(-2.5, 2.5, 41)
    vf = value_function(c, x, heat_run.sym)
    for xi, phi, j in zip(x, vf.phi, vf.branch_id):
        br = branches_at(c, xi)
        best = min(br, key=lambda b: b.S)
        assert phi == pytest.approx(best.S, abs=1e-12) and j == best.branch
        # deleting branches never lowers the minimum
        for drop in br:
            rest = [b.S for b in br if b is not drop]
            if rest:
                assert min(rest) >= phi


def test_single_branch_region_has_no_shock(heat_run):
    c = snapshot(heat_run.bundle, 0.3)
    vf = value_function(c, np.linspace(-2, 2, 101), heat_run.sym)
    assert vf.shocks == [] and np.all(vf.branch_id == 0)


def test_symmetric_wells_shock_at_symmetry_point(wells):
    c = snapshot(wells, 1.0)
    vf = value_function(c, np.linspace(-1.0, 1.0, 201), heat_symbol())
    assert len(vf.shocks) == 1
    assert abs(vf.shocks[0].x) <= 1e-8
    assert abs(shock_position_equal_area(c)) <= 1e-8


def test_rankine_hugoniot_examples():
    heat = heat_symbol()
    assert shock_speed_rh(heat, ShockPoint(0.0, 1.0, 0.0)) == pytest.approx(1.0)
    assert shock_speed_rh(heat, ShockPoint(0.0, 0.7, -0.7)) == pytest.approx(0.0, abs=1e-15)
    drift = Symbol.from_spec({"dim": 1, "A": [1.0], "B": [1.0]})
    assert shock_speed_rh(drift, ShockPoint(0.0, 1.0, 0.0)) == pytest.approx(2.0)
    with pytest.raises(DegenerateShockError):
        shock_speed_rh(heat, ShockPoint(0.0, 0.5, 0.5))


def test_equal_area_matches_branch_switch(heat_run):
    c = snapshot(heat_run.bundle, 1.0)
    vf = value_function(c, np.linspace(-3, 3, 601), heat_run.sym)
    assert abs(shock_position_equal_area(c) - vf.shocks[0].x) <= 1e-6
    with pytest.raises(ValueFieldError):
        shock_position_equal_area(snapshot(heat_run.bundle, 0.3))


def test_switch_function():
    z = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(switch_B(z) + switch_B(-z), 1.0, atol=1e-15)
    assert switch_B(0.0) == 0.5


def test_heaviside_examples():
    psis = [bump_test_function(c, 1.0) for c in (-0.5, 0.0, 0.3)]
    assert heaviside_product_check(0.2, 0.2, 1e-2, psis) == 0.0
    mu = 1e-3
    norm = max(np.max(np.abs(p(np.linspace(-2, 2, 2001)))) for p in psis)
    assert heaviside_product_check(0.0, 10 * mu, mu, psis) <= 1e-3 * norm
    # separation proportional to mu: error halves with mu
    e = [heaviside_product_check(0.0, 1.0 * m, m, psis) for m in (2e-2, 1e-2)]
    assert 1.5 <= e[0] / e[1] <= 2.5


def test_hopf_fixture():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(hopf_momentum_fixture(0.4, 0.0, -1.0, 1.0)(x), 0.4)
    p = hopf_momentum_fixture(0.4, 2.0, -1.0, 1.0)
    assert np.all(p(x[x > 1.0]) == 0.4)
    np.testing.assert_allclose(p(x[x < -1.0]), 0.4 + 2.0 * (-1.0 - 1.0))
    with pytest.raises(ValueError):
        hopf_momentum_fixture(0.0, 1.0, 1.0, -1.0)


def test_non_minimal_branch_is_negligible(heat_run):
    c = snapshot(heat_run.bundle, 1.0)
    lo, hi = sorted(c.x_of(c.fold_alpha))
    xm = 0.5 * (lo + hi)
    br = sorted(branches_at(c, xm), key=lambda b: b.S)
    outer = [b for b in br[1:] if np.isfinite(b.rho)]
    eps = min(b.S - br[0].S for b in outer) / (28 * np.log(10))
    vf = value_function(c, np.array([xm]), heat_run.sym)
    sol = assemble_solution(vf, regular_density(c, vf), eps)
    u_min = np.exp(-br[0].S / eps) * np.sqrt(br[0].rho)
    assert sol.u[0] == pytest.approx(u_min, rel=1e-12)
    for b in outer:
        assert np.exp(-b.S / eps) * np.sqrt(b.rho) <= 1e-12 * u_min
