import numpy as np
import pytest

from kfwkb.density import (AsymptoticSolution, DensityField, InvariantError, NonAttractingShockError, ShockHistory,
                           assemble_solution, delta_mass_evolution, density_along_bundle, regular_density,
                           total_mass, transport_amplitude)
from kfwkb.hamilton import Profile, InitialData, integrate_bundle
from kfwkb.hjb import ShockPoint, value_function
from kfwkb.manifold import snapshot
from kfwkb.symbol import Symbol, heat_symbol

CONVEX = InitialData(Profile(1, [0.0, 0.0, 0.5, 0.0, 0.1]), Profile(1, [1.0], (), [-2.0, 2.0], 0.8),
                     np.linspace(-2.5, 2.5, 201)[:, None])


def test_heat_density_closed_form():
    b = integrate_bundle(heat_symbol(), CONVEX, 1.0, 1e-2)
    rho = density_along_bundle(heat_symbol(), b)
    a = CONVEX.alpha
    expected = CONVEX.phi0.value(a)[:, None] ** 2 / (1 + 2 * b.times[None, :] * CONVEX.S0.hess(a)[:, 0, 0, None])
    np.testing.assert_allclose(rho, expected, rtol=1e-10, atol=1e-14)
    np.testing.assert_array_equal(rho[:, 0], CONVEX.phi0.value(a) ** 2)
    assert np.all(b.L == 0.0)


def test_density_matches_transport_amplitude():
    sym = Symbol.from_spec({"dim": 1, "A": [0.6], "B": [0.3], "jumps": [{"nu": [0.8], "lambda": [0.4]}]})
    b = integrate_bundle(sym, CONVEX, 1.0, 2.5e-4)  # fine grid: the amplitude uses Simpson's rule in t
    rho = density_along_bundle(sym, b)
    phi = transport_amplitude(sym, b)
    ok = rho > 1e-4 * np.nanmax(rho)  # away from the vanishing taper
    np.testing.assert_allclose(phi[ok] ** 2, rho[ok], rtol=1e-6)


def test_static_merging_shock_mass():
    times = np.linspace(0.0, 1.0, 11)
    sk = [[ShockPoint(0.0, 1.0, -1.0, speed=0.0)] for _ in times]
    hist = delta_mass_evolution(ShockHistory(times, sk, [[2.0] for _ in times]))
    np.testing.assert_allclose([s[0].mass for s in hist.shocks], 2 * times, atol=1e-14)


def test_leaving_characteristics_are_rejected():
    times = np.linspace(0.0, 1.0, 3)
    sk = [[ShockPoint(0.0, -1.0, 1.0, speed=0.0)] for _ in times]
    with pytest.raises(NonAttractingShockError):
        delta_mass_evolution(ShockHistory(times, sk, [[-2.0] for _ in times]))


def test_no_shock_total_mass_is_regular_mass():
    b = integrate_bundle(heat_symbol(), CONVEX, 1.0, 1e-2)
    c = snapshot(b, 1.0)
    lo, hi = c.x_hull
    x = np.linspace(lo, hi, 20001)
    vf = value_function(c, x, heat_symbol())
    d = regular_density(c, vf)
    assert vf.shocks == [] and d.delta_masses == []
    m0 = total_mass(snapshot(b, 0.0), [])
    assert total_mass(c, []) == pytest.approx(m0, rel=1e-10)
    assert np.trapezoid(d.rho_reg, x) == pytest.approx(m0, rel=1e-4)


def test_regular_mass_moves_into_shock(heat_run):
    h = heat_run.history
    regular = np.array([total_mass(snapshot(heat_run.bundle, t), sk) - sum(s.mass for s in sk)
                        for t, sk in zip(h.times, h.shocks)])
    e = np.array([sum(s.mass for s in sk) for sk in h.shocks])
    late = h.times >= heat_run.t_star + 0.05
    d_reg = np.gradient(regular, h.times)[late]
    d_e = np.gradient(e, h.times)[late]
    assert np.max(np.abs(d_reg + d_e)) <= 1e-4 * np.max(np.abs(d_e)) + 1e-4


def test_assemble_initial_time_is_exact():
    b = integrate_bundle(heat_symbol(), CONVEX, 0.1, 1e-2)
    c = snapshot(b, 0.0)
    x = CONVEX.alpha[4:-4, 0]  # label points: no interpolation involved
    vf = value_function(c, x, heat_symbol())
    eps = 0.05
    sol = assemble_solution(vf, regular_density(c, vf), eps)
    pts = x[:, None]
    phi0 = CONVEX.phi0.value(pts)
    core = phi0 > 1e-3  # the cutoff is flat to all orders at its edge, so label round-off shows there
    np.testing.assert_allclose(sol.u[core], np.exp(-CONVEX.S0.value(pts[core]) / eps) * phi0[core], rtol=1e-12)
    assert isinstance(sol, AsymptoticSolution)
    vac = DensityField(0.0, x, np.where(core, 1.0, 0.0), vf.branch_id)
    assert np.all(assemble_solution(vf, vac, eps).u[~core] == 0.0)


def test_assemble_rejects_negative_density():
    b = integrate_bundle(heat_symbol(), CONVEX, 0.1, 1e-2)
    c = snapshot(b, 0.0)
    x = np.linspace(-1, 1, 5)
    vf = value_function(c, x, heat_symbol())
    bad = DensityField(0.0, x, np.array([1.0, -1e-3, 1.0, 1.0, 1.0]), vf.branch_id)
    with pytest.raises(InvariantError):
        assemble_solution(vf, bad, 0.1)
    with pytest.raises(ValueError):
        assemble_solution(vf, regular_density(c, vf), 0.0)


def test_total_mass_conserved_on_benchmark(heat_run):
    h = heat_run.history
    m0 = total_mass(snapshot(heat_run.bundle, 0.0), [])
    dev = [abs(total_mass(snapshot(heat_run.bundle, t), sk) / m0 - 1) for t, sk in zip(h.times, h.shocks)]
    assert max(dev) <= 1e-4


def test_dip_density_positive_before_caustic(dip_init):
    b = integrate_bundle(heat_symbol(), dip_init, 0.45, 1e-3)
    rho = density_along_bundle(heat_symbol(), b)
    assert np.all(rho[dip_init.phi0.value(dip_init.alpha) > 0] > 0)
