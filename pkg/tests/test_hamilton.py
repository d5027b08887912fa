import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import init_1d
from kfwkb.hamilton import (TrajectoryExitError, caustic_time, caustic_time_formula, integrate_bundle,
                            integrate_phase_points, loop_action, time_reverse)
from kfwkb.symbol import Symbol, heat_symbol

# S0 = 1 + a + a^2/2: S0'(0) = 1, S0'' = 1
TILT = init_1d([1.0, 1.0, 0.5], -0.5, 0.5, 11)


def test_initial_state(dip_init):
    b = integrate_bundle(heat_symbol(), dip_init, 0.01, 1e-3)
    a = dip_init.alpha
    np.testing.assert_array_equal(b.x[:, 0], a)
    np.testing.assert_array_equal(b.p[:, 0], dip_init.S0.grad(a))
    np.testing.assert_array_equal(b.Jx[:, 0], np.broadcast_to(np.eye(1), (a.shape[0], 1, 1)))
    np.testing.assert_array_equal(b.Jp[:, 0], dip_init.S0.hess(a))
    np.testing.assert_array_equal(b.S[:, 0], dip_init.S0.value(a))
    np.testing.assert_array_equal(b.rho[:, 0], dip_init.phi0.value(a) ** 2)


def test_heat_rays_examples():
    b = integrate_bundle(heat_symbol(), TILT, 1.0, 1e-2)
    i0 = 5  # alpha = 0
    t = b.times
    np.testing.assert_allclose(b.x[i0, :, 0], 2 * t, atol=1e-12)
    np.testing.assert_allclose(b.p[i0, :, 0], 1.0, atol=1e-14)
    np.testing.assert_allclose(b.det_Jx, np.broadcast_to(1 + 2 * t, b.det_Jx.shape), atol=1e-12)
    np.testing.assert_allclose(b.S[i0], 1.0 + t, atol=1e-12)


def test_caustic_examples(dip_init):
    b = integrate_bundle(heat_symbol(), dip_init, 0.8, 1e-3)
    t_star = caustic_time(b)
    assert abs(t_star - 0.5) <= 2e-3
    assert caustic_time_formula(heat_symbol(), dip_init) == pytest.approx(0.5, rel=1e-12)
    assert caustic_time(integrate_bundle(heat_symbol(), TILT, 1.0, 1e-2)) is None


def test_time_reversal_identity():
    T = 0.6
    sym = Symbol.from_spec({"dim": 1, "A": [1.0], "B": [0.2], "jumps": [{"nu": [0.5], "lambda": [0.3]}]})
    init = init_1d([0.0, 0.0, 0.5, 0.0, 0.05], -1.5, 1.5, 31)
    b = integrate_bundle(sym, init, T, 1e-2)
    r = time_reverse(sym, b, T)
    fwd = b.x[:, ::-1, 0]
    assert np.max(np.abs(r.x[:, :, 0] - fwd)) <= 1e-6
    np.testing.assert_allclose(r.x[:, -1, 0], init.alpha[:, 0], atol=1e-6)
    np.testing.assert_allclose(r.p[:, :, 0], b.p[:, ::-1, 0], atol=1e-12)


def test_time_reversal_heat_closed_form():
    T = 0.5
    b = integrate_bundle(heat_symbol(), TILT, T, 1e-2)
    r = time_reverse(heat_symbol(), b, T)
    a = TILT.alpha[:, 0]
    expected = a[:, None] + 2 * (T - r.times[None, :]) * (1.0 + a[:, None])
    np.testing.assert_allclose(r.x[:, :, 0], expected, atol=1e-12)


def test_energy_conserved_for_x_independent_symbol():
    sym = Symbol.from_spec({"dim": 1, "A": [0.7], "B": [0.4], "jumps": [{"nu": [1.0], "lambda": [0.5]}]})
    init = init_1d([0.0, 0.0, 0.5], -1.0, 1.0, 21)
    b = integrate_bundle(sym, init, 1.0, 1e-2)
    H = sym.hamiltonian(b.x.reshape(-1, 1), b.p.reshape(-1, 1)).reshape(b.x.shape[:2])
    drift = np.max(np.abs(H - H[:, :1]) / np.maximum(np.abs(H[:, :1]), 1e-300))
    assert drift <= 1e-8


def test_rk4_error_ratio():
    sym = Symbol.from_spec({"dim": 1, "A": [1.0], "V": [0.0, 0.0, 0.5], "jumps": [{"nu": [1.0], "lambda": [0.3]}]})
    init = init_1d([0.0, 0.0, 0.5], -1.0, 1.0, 11)
    runs = [integrate_bundle(sym, init, 1.0, d, tol=None) for d in (0.05, 0.025, 0.05 / 8)]
    err = [np.max(np.abs(r.x[:, -1] - runs[2].x[:, -1])) for r in runs[:2]]
    assert 12 <= err[0] / err[1] <= 20


def test_trajectory_exit_is_reported():
    sym = heat_symbol(window=(-1.0, 1.0))
    with pytest.raises(TrajectoryExitError, match="alpha"):
        integrate_bundle(sym, init_1d([0.0, 2.0], -0.5, 0.5, 5), 1.0, 1e-2)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(-0.5, 0.5), st.floats(0.0, 0.8))
def test_loop_action_conserved(a, b, lam):
    sym = Symbol.from_spec({"dim": 1, "A": [a, 0.1], "B": [b, 0.2], "jumps": [{"nu": [0.5], "lambda": [lam]}]})
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    x0 = 0.3 * np.cos(th)
    p0 = 0.3 * np.sin(th)
    fl = integrate_phase_points(sym, x0, p0, 0.5, 1e-2)
    areas = [loop_action(fl.x[:, k, 0], fl.p[:, k, 0]) for k in (0, 25, 50)]
    assert np.max(np.abs(np.array(areas) - areas[0])) <= 1e-6
