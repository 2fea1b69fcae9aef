"""Monte Carlo dephasing of a two-coherent-state superposition by white-noise forcing.

Each trajectory draws a piecewise-constant force with variance ``C / dt`` per
step, so that ``<f(t) f(t')> -> C delta(t - t')``.  Both coherent components
receive the same kick ``i int f e^{i w t} dt``, so ``alpha_1 - alpha_2`` is
conserved while the relative phase diffuses.  Ensemble averages are compared
with

    <dtheta^2>            ~ C |dalpha|^2 t / 2
    <|alpha(t)-alpha(0)|^2> = C t
    <exp(i dtheta)>       = exp(-C |dalpha|^2 t / 4)
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .forced import ForceProfile

CHUNK = 256


@dataclass(frozen=True)
class NoiseConfig:
    """White-noise ensemble parameters.

    ``alpha1_0`` defaults to ``delta_alpha / 2`` so that the two components
    start at ``+-delta_alpha / 2``.  ``refine`` splits every step into
    ``2**refine`` sub-steps by Brownian bridging; runs at different ``refine``
    share the same coarse noise, which makes discretisation checks coupled.
    """

    C: float
    dt: float
    steps: int
    trajectories: int
    seed: int
    delta_alpha: complex
    omega_x: float = 1.0
    alpha1_0: complex | None = None
    refine: int = 0

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("noise strength C must be non-negative")
        if not self.dt > 0 or int(self.steps) < 1:
            raise ValueError("need dt > 0 and steps >= 1")
        if self.dt * self.omega_x >= 0.1:
            raise ValueError(f"dt*omega_x = {self.dt * self.omega_x:.3g} must be < 0.1")
        if int(self.trajectories) < 1:
            raise ValueError("trajectories must be >= 1")
        if int(self.refine) < 0:
            raise ValueError("refine must be >= 0")
        object.__setattr__(self, "delta_alpha", complex(self.delta_alpha))
        a1 = self.delta_alpha / 2 if self.alpha1_0 is None else complex(self.alpha1_0)
        object.__setattr__(self, "alpha1_0", a1)

    @property
    def alpha2_0(self) -> complex:
        return self.alpha1_0 - self.delta_alpha

    @property
    def fine_dt(self) -> float:
        return self.dt / 2 ** self.refine

    @property
    def fine_steps(self) -> int:
        return self.steps * 2 ** self.refine

    @property
    def t_final(self) -> float:
        return self.dt * self.steps

    def to_dict(self) -> dict:
        return {"C": self.C, "dt": self.dt, "steps": self.steps,
                "trajectories": self.trajectories, "seed": self.seed,
                "delta_alpha": [self.delta_alpha.real, self.delta_alpha.imag],
                "omega_x": self.omega_x,
                "alpha1_0": [self.alpha1_0.real, self.alpha1_0.imag],
                "refine": self.refine}


def _stream(seed: int, index: int, level: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index), int(level)])))


def force_values(config: NoiseConfig, index: int) -> np.ndarray:
    """Force on each fine step of trajectory ``index``; depends only on (seed, index)."""
    if config.C == 0:
        return np.zeros(config.fine_steps)
    dt = config.dt
    # coarse impulses W_j = f_j dt ~ N(0, C dt)
    w = _stream(config.seed, index, 0).standard_normal(config.steps) * math.sqrt(config.C * dt)
    for level in range(1, config.refine + 1):
        half_var = config.C * dt / 4
        z = _stream(config.seed, index, level).standard_normal(w.size) * math.sqrt(half_var)
        w = np.column_stack([w / 2 + z, w / 2 - z]).ravel()
        dt /= 2
    return w / dt


def sample_force(config: NoiseConfig, index: int) -> ForceProfile:
    """Piecewise-constant white-noise realisation as a tabulated force."""
    vals = force_values(config, index)
    edges = np.arange(vals.size + 1) * config.fine_dt
    return ForceProfile.table(edges, vals)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    dtheta: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray


def _increments(config: NoiseConfig, forces: np.ndarray) -> np.ndarray:
    """Midpoint-rule pieces of ``int f e^{i w t} dt`` per fine step."""
    h = config.fine_dt
    t_mid = (np.arange(forces.shape[-1]) + 0.5) * h
    return forces * h * np.exp(1j * config.omega_x * t_mid)


def run_trajectory(config: NoiseConfig, index: int) -> Trajectory:
    """Relative-phase change and both amplitudes after every fine step.

    ``dtheta = (theta_2 - theta_1)(t) - (theta_2 - theta_1)(0)``, which from the
    coherent-state propagator equals ``-Re(conj(dalpha) A(t))``; the force
    double integral is common to both components and cancels.
    """
    forces = force_values(config, index)
    amp = np.cumsum(_increments(config, forces))
    times = np.arange(1, forces.size + 1) * config.fine_dt
    kick = 1j * amp
    dtheta = -np.real(np.conj(config.delta_alpha) * amp)
    return Trajectory(times, dtheta, config.alpha1_0 + kick, config.alpha2_0 + kick)


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    mean_dtheta_sq: np.ndarray
    se_dtheta_sq: np.ndarray
    mean_phase_factor: np.ndarray
    se_phase: np.ndarray
    mean_amp_diffusion: np.ndarray
    se_amp: np.ndarray
    trajectories: int

    def to_csv(self, config: NoiseConfig | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t", "mean_dtheta_sq", "se", "re_phase", "im_phase", "se_phase",
                  "amp_diff", "se_amp"]
        if config is not None:
            header += ["analytic_dtheta_sq", "analytic_phase", "analytic_amp_diff"]
        w.writerow(header)
        for i, t in enumerate(self.times):
            row = [t, self.mean_dtheta_sq[i], self.se_dtheta_sq[i],
                   self.mean_phase_factor[i].real, self.mean_phase_factor[i].imag,
                   self.se_phase[i], self.mean_amp_diffusion[i], self.se_amp[i]]
            if config is not None:
                row += [analytic_dtheta_sq(config, t), analytic_phase_factor(config, t),
                        config.C * t]
            w.writerow([f"{float(v):.17g}" for v in row])
        return buf.getvalue()


def sample_indices(config: NoiseConfig, n_samples: int) -> np.ndarray:
    """Fine-step indices of ``n_samples`` equally spaced times ending at ``t_final``."""
    total = config.fine_steps
    n_samples = max(1, min(int(n_samples), total))
    return np.unique(np.round(np.linspace(total / n_samples, total, n_samples)).astype(int) - 1)


def _chunk_samples(config: NoiseConfig, start: int, stop: int, idx: np.ndarray):
    forces = np.stack([force_values(config, i) for i in range(start, stop)])
    amp = np.cumsum(_increments(config, forces), axis=1)[:, idx]
    dtheta = -np.real(np.conj(config.delta_alpha) * amp)
    return dtheta, amp


def ensemble_samples(config: NoiseConfig, idx: np.ndarray, threads: int = 1):
    """Per-trajectory ``(dtheta, A)`` at the given fine-step indices.

    Work is split into fixed chunks of trajectories; the assembled arrays do
    not depend on ``threads``.
    """
    bounds = [(s, min(s + CHUNK, config.trajectories))
              for s in range(0, config.trajectories, CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _chunk_samples(config, b[0], b[1], idx), bounds))
    else:
        parts = [_chunk_samples(config, a, b, idx) for a, b in bounds]
    dtheta = np.concatenate([p[0] for p in parts], axis=0)
    amp = np.concatenate([p[1] for p in parts], axis=0)
    return dtheta, amp


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean, dtype=float)
    return mean, se


def ensemble_stats(config: NoiseConfig, n_samples: int = 20, threads: int = 1) -> EnsembleStats:
    idx = sample_indices(config, n_samples)
    dtheta, amp = ensemble_samples(config, idx, threads)
    times = (idx + 1) * config.fine_dt
    m2, se2 = _mean_se(dtheta ** 2)
    ma, sea = _mean_se(np.abs(amp) ** 2)
    phase = np.exp(1j * dtheta)
    mp = phase.mean(axis=0)
    n = phase.shape[0]
    if n > 1:
        sep = np.sqrt((phase.real.var(axis=0, ddof=1) + phase.imag.var(axis=0, ddof=1)) / n)
    else:
        sep = np.zeros(times.size)
    return EnsembleStats(times, m2, se2, mp, sep, ma, sea, config.trajectories)


# --------------------------------------------------------------------------
# analytic comparisons

def analytic_dtheta_sq(config: NoiseConfig, t, exact: bool = False):
    """Linear growth ``C |dalpha|^2 t / 2``; ``exact`` adds the bounded oscillating terms."""
    t = np.asarray(t, float)
    da = config.delta_alpha
    lin = 0.5 * config.C * abs(da) ** 2 * t
    if not exact:
        return lin
    w = config.omega_x
    osc = (da ** 2 * (1 - np.exp(-2j * w * t)) / (2j * w)).real * config.C / 2
    return lin + osc


def analytic_phase_factor(config: NoiseConfig, t):
    return np.exp(-config.C * abs(config.delta_alpha) ** 2 * np.asarray(t, float) / 4)


def decoherence_time(C: float, delta_alpha: complex) -> float:
    """Time for the rms phase difference to reach about one radian, ``2 / (C |dalpha|^2)``."""
    if C <= 0 or delta_alpha == 0:
        raise ValueError("decoherence time needs C > 0 and delta_alpha != 0")
    return 2.0 / (C * abs(delta_alpha) ** 2)


def fractional_energy_bound(alpha_i0: complex) -> float:
    """Estimate ``sqrt(2) / |alpha_i(0)|^2`` of the fractional energy change at the
    decoherence time for ``alpha_1(0) = -alpha_2(0)``."""
    return math.sqrt(2.0) / abs(alpha_i0) ** 2


def fit_slope(times, values, window=None, omega_x: float = 1.0):
    """Least-squares line through ``values`` for ``omega_x t`` inside ``window``."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if window is not None:
        keep = (omega_x * t >= window[0]) & (omega_x * t <= window[1])
        t, v = t[keep], v[keep]
    slope, intercept = np.polyfit(t, v, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class OffDiagonalDecay:
    times: np.ndarray
    factor: np.ndarray
    se: np.ndarray
    analytic: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    skew_z: np.ndarray
    kurtosis_z: np.ndarray


def offdiag_decay_matrix(config: NoiseConfig, times, threads: int = 1) -> OffDiagonalDecay:
    """Ensemble decay factor of ``|alpha_2><alpha_1|`` at the requested times.

    Also reports sample skewness and excess kurtosis of ``dtheta`` with their
    z-scores under the Gaussian null (standard errors ``sqrt(6/n)`` and
    ``sqrt(24/n)``).
    """
    if abs(config.delta_alpha) <= 1:
        warnings.warn("phase-only decay assumes |delta_alpha| >> 1", RuntimeWarning, stacklevel=2)
    times = np.atleast_1d(np.asarray(times, float))
    idx = np.round(times / config.fine_dt).astype(int) - 1
    at_zero = idx < 0
    idx = np.clip(idx, 0, config.fine_steps - 1)
    dtheta, _ = ensemble_samples(config, idx, threads)
    dtheta[:, at_zero] = 0.0
    phase = np.exp(1j * dtheta)
    n = phase.shape[0]
    factor = phase.mean(axis=0)
    se = np.sqrt((phase.real.var(axis=0, ddof=1) + phase.imag.var(axis=0, ddof=1)) / n) \
        if n > 1 else np.zeros(times.size)
    centred = dtheta - dtheta.mean(axis=0)
    m2 = (centred ** 2).mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(m2 > 0, (centred ** 3).mean(axis=0) / m2 ** 1.5, 0.0)
        kurt = np.where(m2 > 0, (centred ** 4).mean(axis=0) / m2 ** 2 - 3.0, 0.0)
    return OffDiagonalDecay(times, factor, se, analytic_phase_factor(config, times),
                            skew, kurt, skew / math.sqrt(6.0 / n), kurt / math.sqrt(24.0 / n))
