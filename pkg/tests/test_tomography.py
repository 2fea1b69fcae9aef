import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.special import factorial, gammaln

from ionmotion.fock import (DensityMatrix, TruncationWarning, as_density, make_coherent, make_fock,
                            make_squeezed_vacuum, make_thermal)
from ionmotion.tomography import (DisplacementGrid, QTable, RankConditionError,
                                  add_projection_noise, design_matrix, frobenius_error,
                                  project_physical, reconstruct, reconstruct_density, simulate_q,
                                  simulate_qtable, wigner_field, wigner_point)


def q_oracle(rho, alpha, kmax, pad=80):
    """Displaced populations through a padded scipy matrix exponential."""
    rho = as_density(rho).entries
    d = rho.shape[0]
    big = d + kmax + pad
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    disp = expm(-alpha * a.T + np.conj(alpha) * a)
    full = np.zeros((big, big), complex)
    full[:d, :d] = rho
    return np.real(np.diag(disp @ full @ disp.conj().T))[:kmax + 1]


def coherent_rho(beta, dim):
    n = np.arange(dim)
    c = np.exp(-abs(beta) ** 2 / 2) * beta ** n / np.sqrt(factorial(n))
    return np.outer(c, c.conj())


# --------------------------------------------------------------------------
# forward model

def test_grid_points():
    g = DisplacementGrid(1.0, 4)
    assert g.points.size == 8
    np.testing.assert_allclose(np.diff(np.angle(g.points[4:])), math.pi / 4)
    np.testing.assert_allclose(np.abs(g.points), 1.0)
    assert DisplacementGrid.from_dict(g.to_dict()) == g


def test_simulate_q_examples():
    alpha = 0.8 - 0.3j
    q = simulate_q(make_fock(0, 1), alpha, 20)
    k = np.arange(21)
    ref = np.exp(-abs(alpha) ** 2 + k * math.log(abs(alpha) ** 2) - gammaln(k + 1))
    np.testing.assert_allclose(q, ref, atol=1e-15)
    rho = make_thermal(0.7, 40)
    np.testing.assert_allclose(simulate_q(rho, 0, 39), np.diag(rho.entries).real, atol=1e-15)
    assert simulate_q(make_fock(1, 4), 0, 3)[1] == 1.0


@pytest.mark.parametrize("alpha", [0.5, 1j, 1.2 - 0.8j])
def test_simulate_q_matches_expm(alpha):
    rho = make_coherent(0.6 + 0.2j, 10)
    np.testing.assert_allclose(simulate_q(rho, alpha, 25), q_oracle(rho, alpha, 25), atol=1e-12)


def test_qtable_rows_bounded_and_csv():
    qt = simulate_qtable(make_coherent(0.9, 12), DisplacementGrid(1.2, 5), 14)
    assert np.all(qt.values.sum(axis=1) <= 1 + 1e-9)
    assert np.all(qt.values >= 0)
    text = qt.to_csv()
    assert text.splitlines()[0] == "p,k,q"
    back = QTable.from_csv(text)
    np.testing.assert_array_equal(back.values, qt.values)
    np.testing.assert_array_equal(back.p_values, qt.p_values)


# --------------------------------------------------------------------------
# reconstruction

def test_fock1_round_trip():
    grid = DisplacementGrid(1.0, 4)
    rho = reconstruct_density(simulate_qtable(make_fock(1, 4), grid, 11), grid, 3)
    assert rho.entries[1, 1].real == pytest.approx(1.0, abs=1e-6)
    assert frobenius_error(rho, make_fock(1, 4)) < 1e-6


def test_coherent_067_elements():
    # untruncated state: only elements well inside the cutoff are pinned down exactly
    beta = 0.67
    grid = DisplacementGrid(1.0, 14)
    qt = simulate_qtable(make_coherent(beta, 40), grid, 21)
    rho = reconstruct_density(qt, grid, 13)
    np.testing.assert_allclose(rho.entries[:6, :6], coherent_rho(beta, 6), atol=1e-6)


def test_coherent_067_truncated_round_trip():
    grid = DisplacementGrid(1.0, 4)
    st_ = make_coherent(0.67, 4)
    rho = reconstruct_density(simulate_qtable(st_, grid, 11), grid, 3)
    assert frobenius_error(rho, st_) < 1e-6


@pytest.mark.parametrize("radius,n_pts", [(0.5, 3), (1.0, 5), (1.4, 6)])
def test_vacuum_round_trip(radius, n_pts):
    grid = DisplacementGrid(radius, n_pts)
    rec = reconstruct(simulate_qtable(make_fock(0, 1), grid, n_pts + 8), grid, n_pts - 1)
    assert rec.rho.entries[0, 0].real == pytest.approx(1.0, abs=1e-9)
    assert rec.condition_number >= 1


def test_rank_condition_error():
    grid = DisplacementGrid(1.0, 3)
    qt = simulate_qtable(make_fock(1, 4), grid, 10)
    with pytest.raises(RankConditionError, match="nmax <= N-1"):
        reconstruct(qt, grid, 3)
    with pytest.raises(RankConditionError):
        reconstruct(simulate_qtable(make_fock(1, 4), DisplacementGrid(0.0, 4), 10),
                    DisplacementGrid(0.0, 4), 3)


def _families():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return [make_fock(0, 6), make_fock(2, 6), make_fock(3, 6), make_coherent(1.5, 6),
                make_coherent(0.7j, 6), make_squeezed_vacuum(3.0, 6),
                make_squeezed_vacuum(10.0, 6), make_thermal(0.5, 6)]


@pytest.mark.parametrize("state", _families())
def test_round_trip_families(state):
    grid = DisplacementGrid(1.0, 6)
    rho = reconstruct_density(simulate_qtable(state, grid, 13), grid, 5)
    assert frobenius_error(rho, state) < 1e-6


def test_round_trip_with_shot_noise():
    grid = DisplacementGrid(1.0, 4)
    state = make_fock(1, 4)
    clean = simulate_qtable(state, grid, 11)
    errs = [frobenius_error(reconstruct_density(add_projection_noise(clean, 10_000, s), grid, 3),
                            state) for s in range(20)]
    assert np.median(errs) < 5e-2


def test_equivariance_under_grid_rotation():
    chi = 0.37
    state = make_coherent(0.5 + 0.4j, 5)
    grid = DisplacementGrid(1.0, 5)
    qt = simulate_qtable(state, grid, 12)
    rho = reconstruct_density(qt, grid, 4).entries
    rotated = reconstruct_density(qt, DisplacementGrid(1.0, 5, chi), 4).entries
    n = np.arange(5)
    np.testing.assert_allclose(rotated, rho * np.exp(1j * chi * (n[:, None] - n[None, :])),
                               atol=1e-8)


def test_design_matrix_reproduces_forward_model():
    grid = DisplacementGrid(0.9, 4)
    state = make_coherent(0.4 - 0.2j, 4)
    mat, offset = design_matrix(grid, 10, 3)
    qt = simulate_qtable(state, grid, 10)
    rec = reconstruct(qt, grid, 3)
    assert rec.residual_norm < 1e-12
    assert mat.shape == (8 * 11, 15)


def test_project_physical():
    raw = np.diag([0.7, 0.5, -0.2]).astype(complex)
    out = project_physical(raw)
    assert np.trace(out).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(out).min() >= -1e-12
    np.testing.assert_allclose(out, out.conj().T)


# --------------------------------------------------------------------------
# projection noise

def test_projection_noise_properties():
    qt = QTable(np.array([[1.0, 0.0], [0.3, 0.7]]), [-1, 0])
    a = add_projection_noise(qt, 500, seed=3)
    b = add_projection_noise(qt, 500, seed=3)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values[0, 0] == 1.0 and a.values[0, 1] == 0.0
    with pytest.raises(ValueError):
        add_projection_noise(qt, 0, seed=1)


def test_projection_noise_scaling():
    qt = QTable(np.full((400, 1), 0.3), np.arange(-200, 200))
    rms = [np.sqrt(np.mean((add_projection_noise(qt, s, 5).values - 0.3) ** 2))
           for s in (100, 10_000)]
    expected = [math.sqrt(0.21 / s) for s in (100, 10_000)]
    np.testing.assert_allclose(rms, expected, rtol=0.15)


# --------------------------------------------------------------------------
# Wigner function

def test_wigner_point_examples():
    assert wigner_point([1, 0, 0, 0]).value == pytest.approx(2 / math.pi)
    assert wigner_point([0, 1, 0, 0]).value == pytest.approx(-2 / math.pi)
    assert wigner_point([0, 1, 0, 0]).converged
    assert not wigner_point([0.5, 0.3, 0.2]).converged
    q = simulate_q(make_coherent(1.5, 40), 1.5, 30)
    assert wigner_point(q).value == pytest.approx(2 / math.pi, abs=1e-10)


@pytest.mark.parametrize("n", range(5))
def test_wigner_fock_origin(n):
    w = wigner_point(simulate_q(make_fock(n, n + 1), 0, n + 3))
    assert w.value == (2 / math.pi) * (-1) ** n


def test_wigner_field_vacuum_and_fock1():
    axis = np.linspace(-2, 2, 9)
    a = axis[None, :] + 1j * axis[:, None]
    vac = wigner_field(make_fock(0, 1), axis, axis)
    np.testing.assert_allclose(vac.values, 2 / math.pi * np.exp(-2 * np.abs(a) ** 2), atol=1e-12)
    one = wigner_field(make_fock(1, 2), axis, axis)
    ref = 2 / math.pi * (4 * np.abs(a) ** 2 - 1) * np.exp(-2 * np.abs(a) ** 2)
    np.testing.assert_allclose(one.values, ref, atol=1e-12)
    assert one.converged.all()
    half = wigner_field(make_fock(1, 2), [0.5], [0.0])
    assert abs(half.values[0, 0]) < 1e-12


def test_wigner_field_coherent_translate():
    axis = np.linspace(-1, 3, 11)
    a = axis[None, :] + 1j * axis[:, None]
    field = wigner_field(make_coherent(1.5, 60), axis, axis)
    np.testing.assert_allclose(field.values, 2 / math.pi * np.exp(-2 * np.abs(a - 1.5) ** 2),
                               atol=1e-6)
    assert field.values.min() >= -1e-6
    assert field.to_csv().splitlines()[0] == "re_alpha,im_alpha,w"


@given(st.lists(st.floats(0, 1), min_size=3, max_size=6), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_wigner_bounded(weights, x, y):
    w = np.array(weights) + 1e-3
    rng = np.random.default_rng(len(weights))
    vecs = np.linalg.qr(rng.normal(size=(w.size, w.size)) + 1j * rng.normal(size=(w.size, w.size)))[0]
    rho = (vecs * (w / w.sum())) @ vecs.conj().T
    field = wigner_field(DensityMatrix(rho), [x], [y])
    assert abs(field.values[0, 0]) <= 2 / math.pi + 1e-6
