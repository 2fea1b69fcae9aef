"""Fluorescence signals: blue-sideband flopping, displaced-state traces and the
cat-state interference fringe.

Times are in seconds when ``omega_base`` is in rad/s; any consistent unit pair
works.  ``Omega_{n,n+1}`` follows the ``cos(2 Omega t)`` convention, so a
blue-sideband pi-pulse from ``|down, 0>`` lasts ``pi / (2 Omega_{0,1})``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre

from .fock import SpinMotionState, as_density, displacement_block, populations


@dataclass(frozen=True)
class DriveParams:
    """Blue-sideband drive: base Rabi rate, Lamb-Dicke parameter and damping.

    The damping of the ``n -> n+1`` flop is modelled as
    ``gamma_n = gamma0 * (n + 1) ** kappa``.
    """

    omega_base: float
    eta: float = 0.202
    gamma0: float = 0.0
    kappa: float = 0.7

    def __post_init__(self):
        if not self.omega_base > 0:
            raise ValueError("omega_base must be positive")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be non-negative")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")

    def rabi(self, n) -> np.ndarray:
        return self.omega_base * rabi_ratio(n, self.eta)

    def gamma(self, n) -> np.ndarray:
        return self.gamma0 * (np.asarray(n, float) + 1.0) ** self.kappa


@dataclass(frozen=True)
class SignalTrace:
    """Sampled ``P_down`` against time or phase, optionally with shot counts."""

    abscissa: np.ndarray
    values: np.ndarray
    shots: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = np.array(self.abscissa, dtype=float).ravel()
        y = np.array(self.values, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError("abscissa and values differ in length")
        if x.size == 0:
            raise ValueError("empty trace")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
            raise ValueError("signal values must lie in [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "values", y)
        if self.shots is not None:
            s = np.array(self.shots, dtype=np.int64).ravel()
            if s.shape != x.shape:
                raise ValueError("shots must match abscissa length")
            s.setflags(write=False)
            object.__setattr__(self, "shots", s)

    def __len__(self):
        return self.abscissa.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["abscissa", "value"] + (["shots"] if self.shots is not None else [])
        w.writerow(header)
        for i in range(len(self)):
            row = [f"{self.abscissa[i]:.17g}", f"{self.values[i]:.17g}"]
            if self.shots is not None:
                row.append(str(int(self.shots[i])))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SignalTrace":
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        if header[:2] != ["abscissa", "value"]:
            raise ValueError(f"unexpected trace header {header}")
        body = [r for r in rows[1:] if r]
        x = [float(r[0]) for r in body]
        y = [float(r[1]) for r in body]
        shots = [int(r[2]) for r in body] if len(header) > 2 else None
        return cls(x, y, shots)


# --------------------------------------------------------------------------
# sideband coupling

def rabi_ratio(n, eta: float):
    """``Omega_{n,n+1} / Omega_{0,1}`` for the first blue sideband.

    Equals ``|L_n^1(eta^2)| / sqrt(n+1)``; tends to ``sqrt(n+1)`` as
    ``eta -> 0``.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    n_arr = np.asarray(n)
    out = np.abs(eval_genlaguerre(n_arr, 1, eta * eta)) / np.sqrt(n_arr + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def sideband_element(n, eta: float):
    """``|<n+1| exp(i eta (a + a^dag)) |n>|`` in closed form."""
    n_arr = np.asarray(n, float)
    x = eta * eta
    return np.exp(-x / 2) * eta * np.abs(eval_genlaguerre(n_arr, 1, x)) / np.sqrt(n_arr + 1)


# --------------------------------------------------------------------------
# closed-form signals

def p_down_fock(t, n: int, drive: DriveParams):
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    om, g = drive.rabi(n), drive.gamma(n)
    out = 0.5 * (1.0 + np.cos(2 * om * t) * np.exp(-g * t))
    return float(out) if out.ndim == 0 else out


def _check_pops(pops) -> np.ndarray:
    pops = np.asarray(pops, float).ravel()
    if np.any(pops < -1e-12) or abs(pops.sum() - 1.0) > 1e-6:
        raise ValueError(f"populations must be non-negative and sum to 1 (sum={pops.sum():.8g})")
    return pops


def sideband_basis(t, nmax: int, drive: DriveParams) -> np.ndarray:
    """Columns ``cos(2 Omega_n t) exp(-gamma_n t)`` for ``n = 0..nmax``."""
    t = np.asarray(t, float).ravel()
    n = np.arange(nmax + 1)
    return np.cos(2 * np.outer(t, drive.rabi(n))) * np.exp(-np.outer(t, drive.gamma(n)))


def p_down_distribution(t, pops, drive: DriveParams):
    """Blue-sideband ``P_down(t)`` for a number-state distribution."""
    pops = _check_pops(pops)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, float))
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    out = 0.5 * (1.0 + sideband_basis(t, pops.size - 1, drive) @ pops)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def p_down_displaced(t, rho, alpha: complex, drive: DriveParams, kmax: int | None = None):
    """Sideband signal after displacing ``rho`` by ``-alpha``."""
    from .tomography import simulate_q

    rho = as_density(rho)
    kmax = rho.dim - 1 if kmax is None else kmax
    q = simulate_q(rho, alpha, kmax)
    return p_down_distribution(t, q / q.sum(), drive)


def simulate_blue_sideband(state, t, drive: DriveParams) -> np.ndarray:
    """Propagate ``|down> x state`` under the resonant blue-sideband coupling.

    Builds ``H = sum_n Omega_n (|up, n+1><down, n| + h.c.)`` with ``gamma = 0``
    and returns ``P_down`` at each time by exact exponentiation.
    """
    rho = as_density(state)
    dim = rho.dim
    # spin-motion ordering: down block first, up block second
    h = np.zeros((2 * dim + 2, 2 * dim + 2), complex)
    om = drive.rabi(np.arange(dim))
    for n in range(dim):
        h[dim + 1 + n + 1, n] = om[n]
        h[n, dim + 1 + n + 1] = om[n]
    rho_full = np.zeros_like(h)
    rho_full[:dim, :dim] = rho.entries
    out = []
    for tt in np.atleast_1d(np.asarray(t, float)):
        u = expm(-1j * h * tt)
        evolved = u @ rho_full @ u.conj().T
        out.append(float(np.real(np.trace(evolved[:dim + 1, :dim + 1]))))
    return np.array(out)


# --------------------------------------------------------------------------
# cat-state interferometer

def cat_fringe(phi, alpha: float, c: float = 1.0):
    """Interference signal ``1/2 [1 - c exp(-a^2 (1 - cos phi)) cos(a^2 sin phi)]``."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("contrast c must lie in [0, 1]")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    phi = np.asarray(phi, float)
    a2 = alpha * alpha
    out = 0.5 * (1.0 - c * np.exp(-a2 * (1.0 - np.cos(phi))) * np.cos(a2 * np.sin(phi)))
    return float(out) if out.ndim == 0 else out


def carrier_pulse(state: SpinMotionState, area: float, phase: float = 0.0) -> SpinMotionState:
    """Ideal carrier rotation ``exp(-i area/2 (cos(phase) sx + sin(phase) sy))``."""
    c, s = math.cos(area / 2), math.sin(area / 2)
    up = c * state.up - 1j * s * np.exp(-1j * phase) * state.down
    down = c * state.down - 1j * s * np.exp(1j * phase) * state.up
    return SpinMotionState(down, up)


def displace_up(state: SpinMotionState, alpha: complex) -> SpinMotionState:
    """Displace only the ``|up>`` branch; ``|down>`` is dark to the displacement beams."""
    # only the columns inside the support of the up branch contribute
    nz = np.flatnonzero(state.up)
    cols = int(nz[-1]) + 1 if nz.size else 1
    mat = displacement_block(alpha, state.dim, cols)
    return SpinMotionState(state.down, mat @ state.up[:cols])


def cat_sequence(alpha: complex, phi: float, dim: int) -> list[SpinMotionState]:
    """States after each step of the cat interferometer, starting at ``|down, 0>``.

    Steps: pi/2 carrier, ``D(alpha)`` on up, pi carrier, ``D(alpha e^{i phi})``
    on up, and a closing pi/2 carrier with phase pi.  The closing phase makes
    ``alpha = 0`` give ``P_down = 0`` so the output reads as the fringe with no
    extra sign.
    """
    vac = np.zeros(dim, complex)
    vac[0] = 1.0
    states = [SpinMotionState(vac, np.zeros(dim, complex))]
    states.append(carrier_pulse(states[-1], math.pi / 2))
    states.append(displace_up(states[-1], alpha))
    states.append(carrier_pulse(states[-1], math.pi))
    states.append(displace_up(states[-1], complex(alpha) * np.exp(1j * phi)))
    states.append(carrier_pulse(states[-1], math.pi / 2, phase=math.pi))
    return states


def simulate_cat_interferometer(alpha: complex, phi: float, dim: int = 256) -> float:
    """``P_down`` at the end of the cat interferometer, by explicit state evolution."""
    return cat_sequence(alpha, phi, dim)[-1].p_down()


# --------------------------------------------------------------------------
# detection

def simulate_detection(trace: SignalTrace, shots: int, seed) -> SignalTrace:
    """Replace each ``P_down`` by a binomial estimate from ``shots`` repetitions."""
    if int(shots) <= 0:
        raise ValueError("shots must be a positive integer")
    rng = np.random.default_rng(seed)
    counts = rng.binomial(int(shots), trace.values)
    return SignalTrace(trace.abscissa, counts / shots, np.full(len(trace), int(shots)))


def trace_from_state(t, state, drive: DriveParams) -> SignalTrace:
    return SignalTrace(t, p_down_distribution(t, populations(state), drive))
