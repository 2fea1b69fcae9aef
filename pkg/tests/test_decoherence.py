import math

import numpy as np
import pytest

from ionmotion.decoherence import (NoiseConfig, analytic_dtheta_sq, analytic_phase_factor,
                                   decoherence_time, ensemble_stats, fit_slope, force_values,
                                   fractional_energy_bound, offdiag_decay_matrix, run_trajectory,
                                   sample_force, sample_indices)
from ionmotion.forced import CoherentLabel, ForceProfile, theta_of_t


def cfg(**kw):
    base = dict(C=0.005, dt=0.05, steps=2000, trajectories=2000, seed=7, delta_alpha=2.0)
    base.update(kw)
    return NoiseConfig(**base)


# --------------------------------------------------------------------------
# noise sampling

def test_config_validation():
    with pytest.raises(ValueError):
        cfg(dt=0.1)
    with pytest.raises(ValueError):
        cfg(C=-1.0)
    with pytest.raises(ValueError):
        cfg(trajectories=0)
    c = cfg()
    assert c.alpha1_0 - c.alpha2_0 == 2.0
    assert c.t_final == pytest.approx(100.0)


def test_zero_noise():
    c = cfg(C=0.0, steps=100)
    assert not np.any(force_values(c, 3))
    assert sample_force(c, 0).is_zero()
    assert not np.any(run_trajectory(c, 1).dtheta)


def test_force_variance():
    c = cfg(steps=1_000_000, dt=0.01, C=0.3)
    f = force_values(c, 0)
    assert f.var() == pytest.approx(c.C / c.dt, rel=0.01)


def test_streams_independent_and_deterministic():
    c = cfg(steps=40_000)
    a, b = force_values(c, 0), force_values(c, 1)
    assert abs(np.corrcoef(a, b)[0, 1]) < 3 / math.sqrt(c.steps)
    np.testing.assert_array_equal(a, force_values(c, 0))
    assert not np.array_equal(a, force_values(cfg(steps=40_000, seed=8), 0))


def test_sample_force_is_table():
    c = cfg(steps=10)
    f = sample_force(c, 2)
    assert f.kind == "table" and len(f.values) == 10
    np.testing.assert_allclose(f.breakpoints, np.arange(11) * c.dt)


def test_refinement_preserves_coarse_impulses():
    coarse = force_values(cfg(steps=50), 4) * 0.05
    fine = force_values(cfg(steps=50, refine=2), 4) * 0.05 / 4
    np.testing.assert_allclose(fine.reshape(50, 4).sum(axis=1), coarse, atol=1e-15)


# --------------------------------------------------------------------------
# trajectories

def test_delta_alpha_constant():
    tr = run_trajectory(cfg(steps=500, delta_alpha=1.5 - 0.5j), 3)
    np.testing.assert_allclose(tr.alpha1 - tr.alpha2, 1.5 - 0.5j, atol=1e-12)


def test_single_impulse():
    # the relative phase from the coherent-state propagator of both components
    da, f0, dt, t0 = 2.0, 0.3, 0.01, 3.7
    force = ForceProfile.table([t0, t0 + dt], [f0])
    l1, l2 = CoherentLabel(da / 2, 0.0), CoherentLabel(-da / 2, 0.0)
    t = 5.0
    dtheta = theta_of_t(l2, force, t, 1.0) - theta_of_t(l1, force, t, 1.0)
    assert dtheta == pytest.approx(-da * f0 * dt * math.cos(t0 + dt / 2), rel=1e-4)


def test_double_integral_cancels():
    force = ForceProfile.sinusoid(0.2, 0.7)
    l1, l2 = CoherentLabel(0.5 + 0.5j, 0.0), CoherentLabel(-0.5 - 0.5j, 0.0)
    zero = CoherentLabel(0, 0)
    t = 12.0
    dth = theta_of_t(l2, force, t, 1.0) - theta_of_t(l1, force, t, 1.0)
    single1 = theta_of_t(l1, force, t, 1.0) - theta_of_t(zero, force, t, 1.0)
    single2 = theta_of_t(l2, force, t, 1.0) - theta_of_t(zero, force, t, 1.0)
    assert dth == pytest.approx(single2 - single1, abs=1e-14)


def test_trajectory_matches_propagator():
    c = cfg(steps=400, dt=0.01)
    tr = run_trajectory(c, 5)
    force = sample_force(c, 5)
    t = c.t_final
    ref = theta_of_t(CoherentLabel(c.alpha2_0, 0), force, t, 1.0) - \
        theta_of_t(CoherentLabel(c.alpha1_0, 0), force, t, 1.0)
    assert tr.dtheta[-1] == pytest.approx(ref, rel=1e-4, abs=1e-8)


# --------------------------------------------------------------------------
# ensemble statistics

@pytest.fixture(scope="module")
def stats_2000():
    c = cfg(steps=4000)
    return c, ensemble_stats(c, n_samples=20)


def test_dtheta_slope(stats_2000):
    c, s = stats_2000
    slope, _ = fit_slope(s.times, s.mean_dtheta_sq, (20, 200))
    assert slope == pytest.approx(0.5 * c.C * 4, rel=0.1)


def test_amp_diffusion_slope(stats_2000):
    c, s = stats_2000
    slope, _ = fit_slope(s.times, s.mean_amp_diffusion, (20, 200))
    assert slope == pytest.approx(c.C, rel=0.1)


def test_phase_factor_within_errors(stats_2000):
    c, s = stats_2000
    mag = np.abs(s.mean_phase_factor)
    assert np.all(np.abs(mag - analytic_phase_factor(c, s.times)) < 4 * s.se_phase)
    assert np.all(mag <= 1 + 1e-12)


def test_threads_do_not_change_results():
    c = cfg(steps=300, trajectories=700)
    a = ensemble_stats(c, 10, threads=1)
    b = ensemble_stats(c, 10, threads=3)
    assert a.to_csv(c) == b.to_csv(c)


def test_dt_halving_within_errors():
    c0 = cfg(steps=1000, trajectories=1000)
    c1 = cfg(steps=1000, trajectories=1000, refine=1)
    a, b = ensemble_stats(c0, 10), ensemble_stats(c1, 10)
    np.testing.assert_allclose(a.times, b.times)
    assert np.all(np.abs(a.mean_dtheta_sq - b.mean_dtheta_sq) < a.se_dtheta_sq)
    assert np.all(np.abs(a.mean_amp_diffusion - b.mean_amp_diffusion) < a.se_amp)
    assert np.all(np.abs(a.mean_phase_factor - b.mean_phase_factor) < a.se_phase)


def test_csv_header():
    c = cfg(steps=100, trajectories=10)
    text = ensemble_stats(c, 5).to_csv()
    assert text.splitlines()[0] == "t,mean_dtheta_sq,se,re_phase,im_phase,se_phase,amp_diff,se_amp"


def test_sample_indices_end_at_final_step():
    c = cfg(steps=100, trajectories=1)
    idx = sample_indices(c, 4)
    assert idx[-1] == 99 and len(idx) == 4


def test_exact_dtheta_includes_bounded_terms():
    c = cfg()
    t = np.linspace(0, 50, 11)
    diff = analytic_dtheta_sq(c, t, exact=True) - analytic_dtheta_sq(c, t)
    assert np.all(np.abs(diff) <= c.C * 4 / 2 / c.omega_x + 1e-15)


# --------------------------------------------------------------------------
# decoherence time and off-diagonal decay

def test_decoherence_time_scaling():
    t = decoherence_time(0.01, 1.0)
    assert t == pytest.approx(200.0)
    assert decoherence_time(0.01, 2.0) == pytest.approx(t / 4)
    assert decoherence_time(0.02, 1.0) == pytest.approx(t / 2)
    with pytest.raises(ValueError):
        decoherence_time(0.0, 1.0)
    with pytest.raises(ValueError):
        decoherence_time(0.01, 0.0)


def test_energy_change_bound():
    # alpha_1(0) = -alpha_2(0) = a: rms change of |alpha_1|^2 at the decoherence time
    a = 3.0
    c = cfg(C=0.01, delta_alpha=2 * a, steps=int(decoherence_time(0.01, 2 * a) / 0.05),
            trajectories=4000)
    tr_energy = []
    for i in range(200):
        tr = run_trajectory(c, i)
        tr_energy.append(abs(abs(tr.alpha1[-1]) ** 2 - a ** 2) / a ** 2)
    rms = math.sqrt(np.mean(np.square(tr_energy)))
    assert rms <= fractional_energy_bound(a) * 1.2
    assert fractional_energy_bound(a) == pytest.approx(math.sqrt(2) / 9)


def test_offdiag_decay():
    c = cfg(steps=2000, trajectories=2000, delta_alpha=3.0)
    out = offdiag_decay_matrix(c, [0.0, 25.0, 50.0, 100.0])
    assert out.factor[0] == 1.0
    assert np.all(np.abs(np.abs(out.factor) - out.analytic) < 4 * np.maximum(out.se, 1e-15))
    assert np.all(np.abs(out.skew_z[1:]) < 5) and np.all(np.abs(out.kurtosis_z[1:]) < 5)


def test_offdiag_small_delta_alpha_warns():
    with pytest.warns(RuntimeWarning):
        offdiag_decay_matrix(cfg(steps=20, trajectories=10, delta_alpha=0.5), [0.5])
