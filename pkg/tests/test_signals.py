import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from ionmotion.fock import make_coherent, make_fock, make_thermal, populations
from ionmotion.signals import (DriveParams, SignalTrace, cat_fringe, cat_sequence, p_down_displaced,
                               p_down_distribution, p_down_fock, rabi_ratio,
                               simulate_blue_sideband, simulate_cat_interferometer,
                               simulate_detection, trace_from_state)
from ionmotion.tomography import simulate_q


def expm_ratio(n, eta, dim=220):
    """Oracle: matrix elements of exp(i eta (a + a^dag)) on a large space."""
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    u = expm(1j * eta * (a + a.T))
    return abs(u[n + 1, n]) / abs(u[1, 0])


# --------------------------------------------------------------------------
# rabi ratio

def test_rabi_ratio_examples():
    assert rabi_ratio(0, 0.202) == pytest.approx(1.0, abs=1e-15)
    assert rabi_ratio(0, 0.7) == pytest.approx(1.0, abs=1e-15)
    assert rabi_ratio(1, 0.202) == pytest.approx((2 - 0.202 ** 2) / math.sqrt(2), rel=1e-12)
    assert rabi_ratio(1, 0.202) == pytest.approx(1.3854, abs=1e-4)


@pytest.mark.parametrize("n", range(0, 11))
@pytest.mark.parametrize("eta", [0.05, 0.202, 0.5])
def test_rabi_ratio_matches_expm(n, eta):
    assert abs(rabi_ratio(n, eta) - expm_ratio(n, eta)) < 1e-10


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_rabi_ratio_lamb_dicke_limit(n):
    assert rabi_ratio(n, 1e-6) == pytest.approx(math.sqrt(n + 1), rel=1e-9)


# --------------------------------------------------------------------------
# sideband signals

def test_p_down_fock_examples():
    drive = DriveParams(0.3, 0.202, gamma0=0.0)
    assert p_down_fock(0.0, 3, drive) == 1.0
    assert p_down_fock(math.pi / (2 * 0.3), 0, drive) == pytest.approx(0.0, abs=1e-15)
    damped = DriveParams(0.3, 0.202, gamma0=0.5)
    assert p_down_fock(200.0, 2, damped) == pytest.approx(0.5, abs=1e-12)


def test_p_down_distribution_examples():
    drive = DriveParams(0.5, 0.202, gamma0=0.02)
    t = np.linspace(0, 40, 101)
    delta = np.zeros(6)
    delta[0] = 1
    np.testing.assert_allclose(p_down_distribution(t, delta, drive), p_down_fock(t, 0, drive),
                               atol=1e-15)
    assert p_down_distribution(0.0, populations(make_thermal(1.3, 64)), drive) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        p_down_distribution(t, [0.5, 0.2], drive)


def test_thermal_trace_matches_brute_force_sum():
    drive = DriveParams(0.5, 0.202, gamma0=0.01, kappa=0.7)
    t = np.linspace(0, 60, 301)
    pops = populations(make_thermal(1.3, 64))
    brute = np.zeros_like(t)
    for n in range(64):
        om = 0.5 * rabi_ratio(n, 0.202)
        g = 0.01 * (n + 1) ** 0.7
        brute += pops[n] * np.cos(2 * om * t) * np.exp(-g * t)
    np.testing.assert_allclose(p_down_distribution(t, pops, drive), 0.5 * (1 + brute), atol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.lists(st.floats(0, 1), min_size=2,
                                                                     max_size=12),
       st.floats(0, 1))
@settings(max_examples=40, deadline=None)
def test_p_down_linear_in_pops(a, b, w):
    size = min(len(a), len(b))
    a, b = np.array(a[:size]) + 1e-3, np.array(b[:size]) + 1e-3
    a, b = a / a.sum(), b / b.sum()
    drive = DriveParams(0.7, 0.202, gamma0=0.01)
    t = np.linspace(0, 30, 50)
    mix = p_down_distribution(t, w * a + (1 - w) * b, drive)
    lin = w * p_down_distribution(t, a, drive) + (1 - w) * p_down_distribution(t, b, drive)
    np.testing.assert_allclose(mix, lin, atol=1e-12)
    assert np.all((mix >= 0) & (mix <= 1))


def test_blue_sideband_evolution_matches_closed_form():
    drive = DriveParams(0.4, 0.202)
    t = np.linspace(0, 30, 61)
    state = make_coherent(1.1, 30)
    exact = simulate_blue_sideband(state, t, drive)
    closed = p_down_distribution(t, populations(state), drive)
    np.testing.assert_allclose(exact, closed, atol=1e-12)


def test_displaced_signal_uses_q():
    drive = DriveParams(0.4, 0.202)
    t = np.linspace(0, 20, 41)
    rho = make_fock(1, 6)
    q = simulate_q(rho, 0.5, 30)
    np.testing.assert_allclose(p_down_displaced(t, rho, 0.5, drive, kmax=30),
                               p_down_distribution(t, q / q.sum(), drive), atol=1e-14)


def test_trace_from_state():
    drive = DriveParams(0.4, 0.202)
    tr = trace_from_state(np.linspace(0, 5, 11), make_fock(0, 4), drive)
    assert tr.values[0] == 1.0


# --------------------------------------------------------------------------
# cat fringe

def test_cat_fringe_examples():
    for a, c in [(0.5, 1.0), (6.0, 0.3)]:
        assert cat_fringe(0.0, a, c) == pytest.approx((1 - c) / 2, abs=1e-15)
    assert cat_fringe(math.pi, 6.0, 1.0) == pytest.approx(0.5 * (1 - math.exp(-72)), abs=1e-15)


@pytest.mark.parametrize("alpha", [2.0, 4.0, 6.0])
def test_cat_fringe_small_phi_width(alpha):
    phi = 0.2 / alpha
    env = math.exp(-alpha ** 2 * (1 - math.cos(phi)))
    assert env == pytest.approx(math.exp(-alpha ** 2 * phi ** 2 / 2), rel=1e-3)
    val = cat_fringe(phi, alpha, 1.0)
    assert val == pytest.approx(0.5 * (1 - env * math.cos(alpha ** 2 * math.sin(phi))), abs=1e-15)


def test_cat_interferometer_examples():
    for phi in np.linspace(0, 2 * math.pi, 7):
        assert simulate_cat_interferometer(0.0, phi, 16) == pytest.approx(0.0, abs=1e-15)
    assert simulate_cat_interferometer(1.3, 0.0, 64) == pytest.approx(0.0, abs=1e-12)
    assert simulate_cat_interferometer(1.0, math.pi, 64) == pytest.approx(
        0.5 * (1 - math.exp(-2)), abs=1e-12)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7 + 0.4j, 2.5])
def test_cat_interferometer_matches_fringe(alpha):
    phi = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    sim = np.array([simulate_cat_interferometer(alpha, f, 128) for f in phi])
    np.testing.assert_allclose(sim, cat_fringe(phi, abs(alpha), 1.0), atol=1e-8)


def test_cat_sequence_norm_preserved():
    for st_ in cat_sequence(1.5, 0.8, 64):
        total = np.vdot(st_.down, st_.down).real + np.vdot(st_.up, st_.up).real
        assert total == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------------
# traces and detection

def test_trace_validation_and_csv():
    tr = SignalTrace([0.0, 1.0, 2.0], [1.0, 0.25, 0.5], [10, 10, 10])
    text = tr.to_csv()
    assert text.splitlines()[0] == "abscissa,value,shots"
    back = SignalTrace.from_csv(text)
    np.testing.assert_array_equal(back.values, tr.values)
    assert SignalTrace([0.0, 0.1], [0.1 + 0.2, 0.3]).to_csv().splitlines()[1] == \
        "0,0.30000000000000004"
    with pytest.raises(ValueError):
        SignalTrace([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        SignalTrace([0.0, 1.0], [0.5, 1.5])


def test_detection_examples():
    tr = SignalTrace([0.0, 1.0, 2.0], [1.0, 0.0, 0.5])
    out = simulate_detection(tr, 10_000, seed=11)
    assert out.values[0] == 1.0 and out.values[1] == 0.0
    assert abs(out.values[2] - 0.5) < 0.025
    again = simulate_detection(tr, 10_000, seed=11)
    np.testing.assert_array_equal(out.values, again.values)
    with pytest.raises(ValueError):
        simulate_detection(tr, 0, seed=1)
