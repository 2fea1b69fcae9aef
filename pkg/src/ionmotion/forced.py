"""Coherent states under a spatially uniform, time-dependent force.

In the interaction picture a coherent state stays coherent:
``|psi(t)> = exp(i theta(t)) |alpha(t)>`` with

    alpha(t) = alpha(0) + i A(t),            A(t) = int_0^t f(s) e^{i w s} ds
    theta(t) = theta(0) + Re(conj(alpha(0)) A(t))
               + int_0^t f(t') int_0^t' f(t'') sin(w (t' - t'')) dt'' dt'

where ``f = x0 F / hbar`` (rad/s) and ``w`` is the trap frequency.  The last
term equals ``int_0^t f(t') Im(e^{i w t'} conj(A(t'))) dt'``, which is what the
code evaluates.  :func:`numeric_propagate` integrates the Schroedinger
equation directly and serves as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .fock import StateVector, coherent_amplitudes

QUAD_TOL = 1e-12


class StepSizeError(RuntimeError):
    """Norm drift of the numerical integrator exceeded tolerance."""


def wrap_phase(theta: float) -> float:
    """Map an angle into ``(-pi, pi]``."""
    return math.pi - (math.pi - theta) % (2 * math.pi)


@dataclass(frozen=True)
class CoherentLabel:
    alpha: complex
    theta: float = 0.0

    def __post_init__(self):
        alpha = complex(self.alpha)
        if not (math.isfinite(alpha.real) and math.isfinite(alpha.imag)):
            raise ValueError("alpha must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", wrap_phase(float(self.theta)))

    def state(self, dim: int) -> StateVector:
        """``e^{i theta}|alpha>`` with untruncated normalisation."""
        return StateVector(np.exp(1j * self.theta) * coherent_amplitudes(self.alpha, dim))


@dataclass(frozen=True)
class ForceProfile:
    """Force in rate units ``f(t) = x0 F(t) / hbar``.

    kinds
        ``constant``  ``value`` for all ``t >= 0``
        ``sinusoid``  ``amplitude * cos(omega_d t + phase)``
        ``table``     piecewise constant: ``values[i]`` on
                      ``[breakpoints[i], breakpoints[i+1])``, zero elsewhere
    """

    kind: str
    value: float = 0.0
    amplitude: float = 0.0
    omega_d: float = 0.0
    phase: float = 0.0
    breakpoints: tuple = field(default=())
    values: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoid", "table"):
            raise ValueError(f"unknown force kind {self.kind!r}")
        if self.kind == "table":
            bp = tuple(float(b) for b in self.breakpoints)
            vals = tuple(float(v) for v in self.values)
            if len(bp) != len(vals) + 1 or len(vals) == 0:
                raise ValueError("table force needs len(breakpoints) == len(values) + 1")
            if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
                raise ValueError("table breakpoints must be strictly increasing")
            if bp[0] < 0:
                raise ValueError("table breakpoints must be non-negative")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float) -> "ForceProfile":
        return cls("constant", value=value)

    @classmethod
    def sinusoid(cls, amplitude: float, omega_d: float, phase: float = 0.0) -> "ForceProfile":
        return cls("sinusoid", amplitude=amplitude, omega_d=omega_d, phase=phase)

    @classmethod
    def table(cls, breakpoints, values) -> "ForceProfile":
        return cls("table", breakpoints=tuple(breakpoints), values=tuple(values))

    def __call__(self, t):
        t = np.asarray(t, float)
        if self.kind == "constant":
            return np.full(t.shape, self.value)
        if self.kind == "sinusoid":
            return self.amplitude * np.cos(self.omega_d * t + self.phase)
        bp = np.asarray(self.breakpoints)
        vals = np.append(np.asarray(self.values), 0.0)
        idx = np.searchsorted(bp, t, side="right") - 1
        return np.where(idx < 0, 0.0, vals[np.clip(idx, 0, len(vals) - 1)])

    def is_zero(self) -> bool:
        if self.kind == "constant":
            return self.value == 0
        if self.kind == "sinusoid":
            return self.amplitude == 0
        return not any(self.values)

    def knots(self, t_end: float) -> list[float]:
        """Points in ``(0, t_end)`` where the force is discontinuous."""
        if self.kind != "table":
            return []
        return [b for b in self.breakpoints if 0 < b < t_end]

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", "amplitude": self.amplitude,
                    "omega_d": self.omega_d, "phase": self.phase}
        return {"kind": "table", "breakpoints": list(self.breakpoints),
                "values": list(self.values)}

    @classmethod
    def from_dict(cls, data: dict) -> "ForceProfile":
        data = dict(data)
        kind = data.pop("kind", None)
        allowed = {"constant": {"value"}, "sinusoid": {"amplitude", "omega_d", "phase"},
                   "table": {"breakpoints", "values"}}
        if kind not in allowed:
            raise ValueError(f"unknown force kind {kind!r}")
        extra = set(data) - allowed[kind]
        if extra:
            raise ValueError(f"unexpected keys for {kind} force: {sorted(extra)}")
        if kind == "table":
            return cls.table(data["breakpoints"], data["values"])
        return cls(kind, **{k: float(v) for k, v in data.items()})


# --------------------------------------------------------------------------
# elementary integrals

def _exp_integral(k: float, a, b):
    """``int_a^b exp(i k s) ds`` without cancellation for small ``k (b - a)``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    half = 0.5 * k * (b - a)
    return np.exp(0.5j * k * (a + b)) * (b - a) * np.sinc(half / np.pi)


def _kernel_integral(omega: float, u):
    """``int_0^u (1 - cos(w s)) / w ds = (w u - sin(w u)) / w^2``."""
    u = np.asarray(u, float)
    x = omega * u
    small = np.abs(x) < 1e-3
    series = omega * u ** 3 / 6 * (1 - x * x / 20)
    xs = np.where(small, 1.0, x)
    exact = (xs - np.sin(xs)) / omega ** 2
    return np.where(small, series, exact)


def drive_integral(force: ForceProfile, t, omega_x: float):
    """``A(t) = int_0^t f(s) exp(i omega_x s) ds``."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if force.kind == "constant":
        return force.value * _exp_integral(omega_x, 0.0, t)
    if force.kind == "sinusoid":
        f0, wd, ph = force.amplitude, force.omega_d, force.phase
        return 0.5 * f0 * (np.exp(1j * ph) * _exp_integral(omega_x + wd, 0.0, t)
                           + np.exp(-1j * ph) * _exp_integral(omega_x - wd, 0.0, t))
    return _table_integrals(force, t, omega_x)[0]


def _table_integrals(force: ForceProfile, t, omega_x: float):
    bp = np.asarray(force.breakpoints)
    vals = np.asarray(force.values)
    seg_a, seg_b = bp[:-1], bp[1:]
    piece_a = vals * _exp_integral(omega_x, seg_a, seg_b)
    a_start = np.concatenate([[0.0], np.cumsum(piece_a)])
    term1 = vals * np.imag(np.conj(a_start[:-1]) * _exp_integral(omega_x, seg_a, seg_b))
    term2 = vals ** 2 * _kernel_integral(omega_x, seg_b - seg_a)
    d_start = np.concatenate([[0.0], np.cumsum(term1 + term2)])

    t = np.asarray(t, float)
    idx = np.clip(np.searchsorted(bp, t, side="right") - 1, -1, len(vals))
    amp = np.zeros(t.shape, complex)
    dbl = np.zeros(t.shape)
    after = idx >= len(vals)
    amp[after] = a_start[-1]
    dbl[after] = d_start[-1]
    inside = (idx >= 0) & ~after
    i = idx[inside]
    a0, tt, fv = seg_a[i], t[inside], vals[i]
    ei = _exp_integral(omega_x, a0, tt)
    amp[inside] = a_start[i] + fv * ei
    dbl[inside] = (d_start[i] + fv * np.imag(np.conj(a_start[i]) * ei)
                   + fv ** 2 * _kernel_integral(omega_x, tt - a0))
    return amp, dbl


def double_integral(force: ForceProfile, t, omega_x: float):
    """``int_0^t f(t') int_0^t' f(t'') sin(w (t'-t'')) dt'' dt'``."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if force.kind == "constant":
        return force.value ** 2 * _kernel_integral(omega_x, t)
    if force.kind == "table":
        return _table_integrals(force, t, omega_x)[1]

    def integrand(s):
        return float(force(s)) * float(np.imag(np.exp(1j * omega_x * s)
                                                * np.conj(drive_integral(force, s, omega_x))))

    def one(tt):
        if tt == 0:
            return 0.0
        # split at oscillation periods so each panel is smooth and short
        period = 2 * math.pi / max(omega_x, abs(force.omega_d), 1e-300)
        edges = np.linspace(0.0, tt, max(2, int(math.ceil(tt / period)) + 1))
        return sum(quad(integrand, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))

    out = np.array([one(float(tt)) for tt in np.atleast_1d(t)])
    return float(out[0]) if t.ndim == 0 else out


# --------------------------------------------------------------------------
# public propagator

def alpha_of_t(alpha0: complex, force: ForceProfile, t, omega_x: float):
    out = complex(alpha0) + 1j * drive_integral(force, t, omega_x)
    return complex(out) if np.ndim(out) == 0 else out


def theta_of_t(label0: CoherentLabel, force: ForceProfile, t, omega_x: float):
    """Unwrapped ``theta(t)`` for the label's initial amplitude and phase."""
    amp = drive_integral(force, t, omega_x)
    out = (label0.theta + np.real(np.conj(label0.alpha) * amp)
           + double_integral(force, t, omega_x))
    return float(out) if np.ndim(out) == 0 else out


def propagate_label(label0: CoherentLabel, force: ForceProfile, t: float,
                    omega_x: float) -> CoherentLabel:
    return CoherentLabel(alpha_of_t(label0.alpha, force, t, omega_x),
                         theta_of_t(label0, force, t, omega_x))


# --------------------------------------------------------------------------
# numerical Schroedinger integration

def _generator(psi: np.ndarray, f: float, t: float, omega_x: float, sq: np.ndarray):
    # i f (a e^{-iwt} + a^dag e^{iwt}) psi
    out = np.zeros_like(psi)
    out[:-1] += sq * psi[1:] * np.exp(-1j * omega_x * t)
    out[1:] += sq * psi[:-1] * np.exp(1j * omega_x * t)
    return 1j * f * out


def numeric_propagate(psi0: StateVector, force: ForceProfile, t: float, dt: float,
                      omega_x: float, norm_tol: float = 1e-9, t0: float = 0.0) -> StateVector:
    """Classical RK4 integration of the interaction-picture equation.

    Steps are aligned with the discontinuities of tabulated forces so the
    fourth-order accuracy holds piece by piece.  Raises :class:`StepSizeError`
    if the norm drifts by more than ``norm_tol``.  Integration runs from ``t0``
    to ``t``.
    """
    if t < t0 or dt <= 0:
        raise ValueError("need t >= t0 and dt > 0")
    psi = np.array(psi0.amplitudes, complex)
    norm0 = np.linalg.norm(psi)
    sq = np.sqrt(np.arange(1, psi.size, dtype=float))
    edges = [float(t0)] + [k for k in force.knots(t) if k > t0] + [float(t)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        nsteps = max(1, int(math.ceil((hi - lo) / dt - 1e-9)))
        h = (hi - lo) / nsteps
        mid_force = float(force(0.5 * (lo + hi))) if force.kind == "table" else None
        for j in range(nsteps):
            s = lo + j * h

            def fval(x):
                return mid_force if mid_force is not None else float(force(x))

            k1 = _generator(psi, fval(s), s, omega_x, sq)
            k2 = _generator(psi + 0.5 * h * k1, fval(s + h / 2), s + h / 2, omega_x, sq)
            k3 = _generator(psi + 0.5 * h * k2, fval(s + h / 2), s + h / 2, omega_x, sq)
            k4 = _generator(psi + h * k3, fval(s + h), s + h, omega_x, sq)
            psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    drift = abs(np.linalg.norm(psi) - norm0)
    if drift > norm_tol:
        raise StepSizeError(f"norm drift {drift:.2e} exceeds {norm_tol:.0e}; reduce dt")
    return StateVector(psi)


def overlap(a: StateVector, b: StateVector) -> complex:
    """``<a|b>`` over the common leading levels."""
    d = min(a.dim, b.dim)
    return complex(np.vdot(a.amplitudes[:d], b.amplitudes[:d]))
