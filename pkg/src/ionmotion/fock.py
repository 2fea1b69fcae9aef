"""Truncated Fock-space states and operators for a single motional mode.

Every state lives on the basis ``|0>, ..., |dim-1>``.  Constructors renormalise
over the truncated basis and emit :class:`TruncationWarning` when the discarded
tail is not negligible.
"""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

DEFAULT_MARGIN = 20


class TruncationWarning(UserWarning):
    """Raised when a state has significant weight beyond the truncated basis."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateVector:
    """Pure motional state, amplitudes over ``|0>..|dim-1>``."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(np.ravel(self.amplitudes))
        if amps.size < 1:
            raise ValueError("dim must be >= 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_dict(self) -> dict:
        return {"dim": self.dim,
                "re": self.amplitudes.real.tolist(),
                "im": self.amplitudes.imag.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "StateVector":
        amps = np.asarray(data["re"], float) + 1j * np.asarray(data["im"], float)
        if amps.size != int(data["dim"]):
            raise ValueError("length of re/im does not match dim")
        return cls(amps)


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed motional state as a ``dim x dim`` Hermitian matrix."""

    entries: np.ndarray

    def __post_init__(self):
        rho = _frozen(self.entries)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 1:
            raise ValueError("density matrix must be square with dim >= 1")
        object.__setattr__(self, "entries", rho)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_state(cls, state: StateVector) -> "DensityMatrix":
        psi = state.amplitudes
        return cls(np.outer(psi, psi.conj()))

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def to_dict(self) -> dict:
        flat = self.entries.ravel(order="C")
        return {"dim": self.dim, "re": flat.real.tolist(), "im": flat.imag.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DensityMatrix":
        dim = int(data["dim"])
        flat = np.asarray(data["re"], float) + 1j * np.asarray(data["im"], float)
        if flat.size != dim * dim:
            raise ValueError("length of re/im does not match dim*dim")
        return cls(flat.reshape(dim, dim))


@dataclass(frozen=True)
class SpinMotionState:
    """Spin-motion state ``|down>|down_branch> + |up>|up_branch>``.

    The branches are unnormalised; their squared norms add to one.
    """

    down: np.ndarray
    up: np.ndarray

    def __post_init__(self):
        down, up = _frozen(np.ravel(self.down)), _frozen(np.ravel(self.up))
        if down.shape != up.shape:
            raise ValueError("branches must share the same dim")
        object.__setattr__(self, "down", down)
        object.__setattr__(self, "up", up)

    @property
    def dim(self) -> int:
        return self.down.size

    def p_down(self) -> float:
        return float(np.vdot(self.down, self.down).real)

    def to_dict(self) -> dict:
        return {"dim": self.dim,
                "down": {"re": self.down.real.tolist(), "im": self.down.imag.tolist()},
                "up": {"re": self.up.real.tolist(), "im": self.up.imag.tolist()}}


@dataclass(frozen=True)
class OscillatorParams:
    """Trap and drive constants.

    omega_x : secular angular frequency (rad/s)
    omega_0 : spin splitting (rad/s)
    eta : Lamb-Dicke parameter
    x0 : ground-state extent ``sqrt(hbar / (2 m omega_x))`` (m)
    raman_detuning : detuning from the intermediate level (rad/s).  Descriptive
        only, no computation in this package depends on it.
    """

    omega_x: float
    omega_0: float = 2 * math.pi * 1.250e9
    eta: float = 0.202
    x0: float = 7e-9
    raman_detuning: float = -2 * math.pi * 12e9

    def __post_init__(self):
        if not self.omega_x > 0:
            raise ValueError("omega_x must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")

    def force_to_rate(self, force_newton: float) -> float:
        """Convert a force in newtons to ``f = x0 F / hbar`` in rad/s."""
        hbar = 1.054571817e-34
        return self.x0 * force_newton / hbar


# --------------------------------------------------------------------------
# ladder operators

def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def creation(dim: int) -> np.ndarray:
    return annihilation(dim).T.copy()


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


# --------------------------------------------------------------------------
# state constructors

def _check_dim(dim: int) -> int:
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return dim


def make_fock(n: int, dim: int) -> StateVector:
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise IndexError(f"Fock index n={n} out of range for dim={dim}")
    amps = np.zeros(dim, complex)
    amps[n] = 1.0
    return StateVector(amps)


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Untruncated-normalisation coefficients ``exp(-|a|^2/2) a^n / sqrt(n!)``."""
    amps = np.empty(dim, complex)
    amps[0] = math.exp(-abs(alpha) ** 2 / 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps


def make_coherent(alpha: complex, dim: int) -> StateVector:
    dim = _check_dim(dim)
    alpha = complex(alpha)
    if abs(alpha) ** 2 > dim / 4:
        warnings.warn(f"|alpha|^2={abs(alpha) ** 2:.3g} exceeds dim/4={dim / 4:.3g}; "
                      "truncation may distort the state", TruncationWarning, stacklevel=2)
    amps = coherent_amplitudes(alpha, dim)
    return StateVector(amps / np.linalg.norm(amps))


def thermal_populations(nbar: float, dim: int) -> np.ndarray:
    """Geometric law ``nbar^n / (nbar+1)^(n+1)`` (not renormalised)."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    n = np.arange(dim)
    q = nbar / (nbar + 1.0)
    return q ** n / (nbar + 1.0)


def make_thermal(nbar: float, dim: int) -> DensityMatrix:
    dim = _check_dim(dim)
    pops = thermal_populations(nbar, dim)
    tail = 1.0 - pops.sum()
    if tail > 1e-6:
        warnings.warn(f"thermal tail mass {tail:.2e} beyond dim={dim}",
                      TruncationWarning, stacklevel=2)
    return DensityMatrix(np.diag(pops / pops.sum()))


def squeeze_r(beta: float) -> float:
    """Squeeze parameter ``r`` with ``beta = exp(2 r)``."""
    if beta < 1:
        raise ValueError(f"squeeze factor beta must be >= 1, got {beta}")
    return 0.5 * math.log(beta)


def squeezed_amplitudes(beta: float, dim: int) -> np.ndarray:
    """Squeezed-vacuum amplitudes before truncation renormalisation.

    Even entries carry ``(-tanh r)^k sqrt((2k)!) / (2^k k! sqrt(cosh r))``;
    odd entries are exactly zero.
    """
    r = squeeze_r(beta)
    amps = np.zeros(dim, complex)
    if r == 0.0:
        amps[0] = 1.0
        return amps
    k = np.arange((dim + 1) // 2)
    t = math.tanh(r)
    logmag = (0.5 * gammaln(2 * k + 1) - k * math.log(2) - gammaln(k + 1)
              + k * math.log(t) - 0.5 * math.log(math.cosh(r)))
    amps[0::2] = np.where(k % 2 == 0, 1.0, -1.0) * np.exp(logmag)
    return amps


def make_squeezed_vacuum(beta: float, dim: int) -> StateVector:
    dim = _check_dim(dim)
    amps = squeezed_amplitudes(beta, dim)
    norm2 = float(np.sum(np.abs(amps) ** 2))
    if 1.0 - norm2 > 1e-6:
        warnings.warn(f"squeezed tail mass {1.0 - norm2:.2e} beyond dim={dim}",
                      TruncationWarning, stacklevel=2)
    return StateVector(amps / math.sqrt(norm2))


def squeezed_mean_n(beta: float) -> float:
    """Ideal mean occupation ``sinh(r)^2`` of the squeezed vacuum."""
    return math.sinh(squeeze_r(beta)) ** 2


# --------------------------------------------------------------------------
# displacement

def displacement_block(alpha: complex, rows: int, cols: int) -> np.ndarray:
    """Closed-form ``<m|D(alpha)|n>`` for ``m < rows``, ``n < cols``."""
    alpha = complex(alpha)
    if alpha == 0:
        return np.eye(rows, cols, dtype=complex)
    return _displacement_laguerre(alpha, rows, cols)


def _displacement_laguerre(alpha: complex, rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    x = abs(alpha) ** 2
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    lo, hi = np.minimum(m, n), np.maximum(m, n)
    k = hi - lo
    logmag = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) - x / 2 + k * math.log(abs(alpha))
    # |L_n^(k)(x)| <= binom(n+k, n) e^{x/2}; entries below exp(-700) are dropped
    bound = logmag + gammaln(hi + 1) - gammaln(lo + 1) - gammaln(k + 1) + x / 2
    keep = bound > -700.0
    out = np.zeros((rows, cols), complex)
    lag = eval_genlaguerre(lo[keep], k[keep], x)
    # alpha^k below the diagonal, (-alpha*)^k above it
    phase = np.where(m >= n, cmath.phase(alpha), cmath.phase(-np.conj(alpha)))
    out[keep] = np.exp(logmag[keep] + 1j * k[keep] * phase[keep]) * lag
    return out


def displacement_matrix(alpha: complex, dim: int, margin: int = DEFAULT_MARGIN,
                        method: str = "laguerre") -> np.ndarray:
    """Matrix of ``D(alpha) = exp(alpha a^dag - alpha^* a)`` on ``dim`` levels.

    ``method="laguerre"`` evaluates the associated-Laguerre closed form, whose
    entries are exact for the infinite oscillator.  ``method="expm"``
    exponentiates the generator on ``dim + margin`` levels and crops, so only
    the block away from the upper edge is trustworthy.
    """
    dim = _check_dim(dim)
    alpha = complex(alpha)
    if alpha == 0:
        return np.eye(dim, dtype=complex)
    if method == "laguerre":
        return _displacement_laguerre(alpha, dim)
    if method == "expm":
        work = dim + int(margin)
        a = annihilation(work)
        gen = alpha * a.conj().T - np.conj(alpha) * a
        return expm(gen)[:dim, :dim]
    raise ValueError(f"unknown displacement method {method!r}")


def safe_margin(alpha: complex, dim: int) -> int:
    """Extra levels needed so that ``D(alpha)`` acting on ``|n < dim>`` leaks
    less than ~1e-12 of its weight past the working dimension."""
    a = abs(alpha)
    return DEFAULT_MARGIN + int(math.ceil(a * a + 8 * a * math.sqrt(dim + a * a)))


def displace(state: StateVector, alpha: complex) -> StateVector:
    """Apply ``D(alpha)`` to a state; the result keeps the input dim."""
    mat = displacement_matrix(alpha, state.dim)
    return StateVector(mat @ state.amplitudes)


def coherent_overlap(a: complex, b: complex) -> complex:
    """``<a|b>`` for untruncated coherent states."""
    return complex(np.exp(-abs(a) ** 2 / 2 - abs(b) ** 2 / 2 + np.conj(a) * b))


def make_cat(alpha: complex, phi: float, dim: int) -> SpinMotionState:
    """``(|up>|alpha e^{i phi}> + |down>|alpha>) / sqrt(2)``.

    With ``phi = pi`` this is ``(|up,-alpha> + |down,alpha>)/sqrt(2)``, the
    two-packet cat with opposite displacements.
    """
    alpha = complex(alpha)
    up = make_coherent(alpha * np.exp(1j * phi), dim).amplitudes
    down = make_coherent(alpha, dim).amplitudes
    return SpinMotionState(down / math.sqrt(2), up / math.sqrt(2))


# --------------------------------------------------------------------------
# observables

def populations(state) -> np.ndarray:
    """Number-state probabilities ``P_n`` of a state, density or spin-motion state."""
    if isinstance(state, StateVector):
        pops = np.abs(state.amplitudes) ** 2
    elif isinstance(state, DensityMatrix):
        pops = np.clip(np.real(np.diag(state.entries)), 0.0, None)
    elif isinstance(state, SpinMotionState):
        pops = np.abs(state.down) ** 2 + np.abs(state.up) ** 2
    else:
        raise TypeError(f"cannot take populations of {type(state).__name__}")
    return pops / pops.sum()


def mean_n(state) -> float:
    pops = populations(state)
    return float(np.dot(np.arange(pops.size), pops))


def as_density(state) -> DensityMatrix:
    if isinstance(state, DensityMatrix):
        return state
    if isinstance(state, StateVector):
        return DensityMatrix.from_state(state)
    raise TypeError(f"cannot convert {type(state).__name__} to a density matrix")
