import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import init_1d
from kfwkb import backward as bw
from kfwkb.acceptance import _log_datum, _support
from kfwkb.hamilton import integrate_bundle
from kfwkb.symbol import Symbol, heat_symbol


# -- lemma ------------------------------------------------------------------------------


def test_lemma_heat_closed_form():
    rep = bw.lemma_check(heat_symbol(), [0.0], [0.0], [[2.0]], 2.0, n_times=21)
    np.testing.assert_allclose(rep.J[:, 0, 0], 1 + 4 * rep.times, rtol=1e-13)
    assert rep.nonsingular and rep.case == "constant-drift"
    assert rep.cross_check <= 1e-8


def test_lemma_flat_minimum():
    rep = bw.lemma_check(heat_symbol(), [0.3], [0.0], [[0.0]], 1.0, n_times=11)
    np.testing.assert_array_equal(rep.J[:, 0, 0], 1.0)


def test_lemma_two_dimensional_example():
    A = [[[[1.0]], [[0.5]]], [[[0.5]], [[1.0]]]]  # H_pp = 2A = [[2, 1], [1, 2]]
    sym = Symbol.from_spec({"dim": 2, "A": A})
    rep = bw.lemma_check(sym, [0.0, 0.0], [0.0, 0.0], np.diag([1.0, 3.0]), 1.0, n_times=21)
    ev = np.sort(np.real(rep.eigenvalues))
    np.testing.assert_allclose(ev, np.sort(np.linalg.eigvals(np.array([[2.0, 1.0], [1.0, 2.0]]) @ np.diag([1, 3]))),
                               rtol=1e-12)
    assert np.all(ev > 0) and rep.nonsingular and np.all(rep.det > 0)


def test_lemma_linear_drift_matches_integration():
    sym = Symbol.from_spec({"dim": 1, "A": [0.7], "B": [0.2, -0.6], "jumps": [{"nu": [0.5], "lambda": [0.3]}]})
    rep = bw.lemma_check(sym, [0.4], [0.0], [[1.5]], 1.0)
    assert rep.case == "linear-diagonal-drift" and rep.nonsingular and rep.cross_check <= 1e-6


def test_lemma_refuses_potential():
    sym = Symbol.from_spec({"dim": 1, "A": [1.0], "V": [0.0, 0.0, 1.0]})
    with pytest.raises(bw.LemmaHypothesisError) as info:
        bw.lemma_check(sym, [0.0], [0.0], [[1.0]], 1.0)
    assert any("potential" in r for r in info.value.reasons)
    with pytest.raises(bw.LemmaHypothesisError):
        bw.lemma_check(heat_symbol(), [0.0], [0.1], [[1.0]], 1.0)
    with pytest.raises(bw.LemmaHypothesisError):
        bw.lemma_check(heat_symbol(), [0.0], [0.0], [[-1.0]], 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 3.0))
def test_lemma_nonsingular_for_admissible_data(a, b, d, lam, k):
    sym = Symbol.from_spec({"dim": 1, "A": [a], "B": [b, d], "jumps": [{"nu": [0.7], "lambda": [lam]}]})
    rep = bw.lemma_check(sym, [0.2], [0.0], [[k]], 1.0, n_times=21)
    assert rep.nonsingular


# -- terra incognita, reconstruction, fills ----------------------------------------------


def test_terra_apex_and_growth(heat_run):
    terra = heat_run.terra
    w = terra.widths()[:, 0]
    assert w[0] == 0.0
    assert np.all(np.diff(w) > 0)
    lo, hi = terra.at(0.0)[0]
    assert lo == hi == pytest.approx(heat_run.final_shocks[0].x)


def test_terra_intervals_are_shock_labels_at_t0(heat_run):
    s = heat_run.final_shocks[0]
    lo, hi = heat_run.terra.at(heat_run.sc.T)[0]
    assert lo == pytest.approx(s.alpha_left, abs=1e-6) and hi == pytest.approx(s.alpha_right, abs=1e-6)


def test_no_shock_terra_is_empty_and_inverts():
    init = init_1d([0.0, 0.0, 0.5, 0.0, 0.05], -3.0, 3.0, 301, phi_support=[-2.5, 2.5], taper=1.0)
    T = 0.5
    fwd = integrate_bundle(heat_symbol(), init, T, 1e-3)
    terra = bw.detect_terra_incognita(heat_symbol(), [], T, 1e-3)
    assert terra.empty and terra.at(0.2) == []
    bb = bw.backward_bundle(heat_symbol(), fwd, [])
    rec = bw.reconstruct(heat_symbol(), bb, T)
    assert rec.intervals == []
    x = init.alpha[50:-50:4, 0]  # label points: the taper is not resolved exactly between them
    assert bw.recovery_error(rec, init, x) <= 1e-8


def test_reconstruction_recovers_initial_data_outside_terra(heat_run):
    for fill in ("hermite", "tangent", "fan"):
        rec = bw.reconstruct(heat_run.sym, heat_run.backward, heat_run.sc.T, fill)
        assert rec.strategy == fill
        assert bw.recovery_error(rec, heat_run.init, np.linspace(-3, 3, 301)) <= 1e-8


def test_fill_on_zero_width_interval(heat_run):
    rec = bw.reconstruct(heat_run.sym, heat_run.backward, 0.0)
    (a, b), = rec.intervals
    assert a == pytest.approx(b, abs=1e-9)


def test_admitted_fill_keeps_minimum_at_endpoint():
    left = bw.EndState(0.0, 1.0, 2.0, 1.0)
    right = bw.EndState(1.0, 2.0, 0.5, 1.0)
    for name in ("hermite", "tangent"):
        f = bw.Fill(name, left, right, bw.FILLS[name](left, right))
        xs = np.linspace(0, 1, 1001)
        assert f.interior_minimum() >= 0
        assert np.min(f.S(xs)) == pytest.approx(1.0) and np.argmin(f.S(xs)) == 0


def test_fill_with_interior_minimum_is_rejected(heat_run):
    def dip(left, right, **_):
        mid = 0.5 * (left.x + right.x)
        return lambda x: np.minimum(left.S, right.S) - 1.0 + (np.asarray(x) - mid) ** 2

    with pytest.raises(bw.FillRejectedError, match="no minimum"):
        bw.reconstruct(heat_run.sym, heat_run.backward, heat_run.sc.T, dip)
    rec = bw.reconstruct(heat_run.sym, heat_run.backward, heat_run.sc.T, dip, enforce=False)
    assert rec.fills[0].interior_minimum() < 0


def test_tangent_fill_kink():
    left = bw.EndState(0.0, 1.0, 1.0, 1.0)
    right = bw.EndState(2.0, 1.0, -1.0, 1.0)
    S = bw.tangent_fill(left, right)
    assert S.kinks == [pytest.approx(1.0)]
    assert float(S(1.0)) == pytest.approx(2.0)
    with pytest.raises(bw.FillRejectedError):
        bw.tangent_fill(bw.EndState(0.0, 1.0, -1.0, 1.0), bw.EndState(2.0, 1.0, 1.0, 1.0))


def test_density_fill_is_linear():
    f = bw.Fill("x", bw.EndState(0.0, 0.0, 0.0, 1.0), bw.EndState(2.0, 0.0, 0.0, 3.0), lambda x: x)
    np.testing.assert_allclose(f.rho(np.array([0.0, 1.0, 2.0])), [1.0, 2.0, 3.0])


# -- weak limit ------------------------------------------------------------------------


def test_gauss_adaptive_integrates_smooth_function():
    val, err, trace = bw.gauss_adaptive(lambda x: np.exp(-x * x), [-8.0, 8.0], rtol=1e-13)
    assert val == pytest.approx(np.sqrt(np.pi), rel=1e-13)


def test_weak_limit_normalization_and_decay(heat_run):
    rec = bw.reconstruct(heat_run.sym, heat_run.backward, heat_run.sc.T, "hermite")
    lo, hi = _support(heat_run.init)
    eps_list = [0.1, 0.05]
    tab = bw.weak_limit_test(lambda e: _log_datum(heat_run.init, e), lambda e: rec, eps_list,
                             lambda x: np.ones_like(np.asarray(x, dtype=float)), (lo, hi))
    assert tab.mode == "i" and np.all(np.abs(tab.values) <= 1e-3)
    # normalization: C * int u_eps phi = 1 by construction; I is then the mean discrepancy
    assert np.all(np.isfinite(tab.values))


def test_weak_limit_fills_agree(heat_run):
    from kfwkb.acceptance import theorem3_tables
    tab = theorem3_tables(heat_run, eps_list=(0.05, 0.0125))
    ti = list(tab["mode_i"].values())
    assert abs(ti[0].values[-1] - ti[1].values[-1]) <= 3 * bw.WEAK_RTOL
    assert abs(ti[0].values[-1]) < abs(ti[0].values[0])


def test_smooth_bump_support():
    psi = bw.smooth_bump(0.0, 1.0)
    x = np.array([-0.5, 0.0, 0.5, 1.0, 1.5])
    v = psi(x)
    assert v[0] == v[1] == v[3] == v[4] == 0.0 and v[2] > 0
