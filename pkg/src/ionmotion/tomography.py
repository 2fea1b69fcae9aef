"""Density-matrix and Wigner-function reconstruction from displaced populations.

``Q_k(alpha)`` is the probability of ``|k>`` after the state has been
displaced by ``-alpha``.  Sampling it on a circle of ``2N`` displacements fixes
``rho_nm`` for ``n, m <= N - 1``; the parity-weighted sum of ``Q_k(alpha)``
gives the Wigner function at ``alpha``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fock import DensityMatrix, as_density, displacement_block

WIGNER_TAIL_TOL = 1e-9


class RankConditionError(ValueError):
    """The displacement circle is too coarse for the requested ``nmax``."""


@dataclass(frozen=True)
class DisplacementGrid:
    """``2N`` displacements ``radius * exp(i (pi p / N + phase_offset))``, ``p = -N..N-1``."""

    radius: float
    count_N: int
    phase_offset: float = 0.0

    def __post_init__(self):
        if int(self.count_N) < 1:
            raise ValueError("count_N must be a positive integer")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    @property
    def p_values(self) -> np.ndarray:
        return np.arange(-self.count_N, self.count_N)

    @property
    def points(self) -> np.ndarray:
        phases = np.pi * self.p_values / self.count_N + self.phase_offset
        return self.radius * np.exp(1j * phases)

    def to_dict(self) -> dict:
        return {"radius": self.radius, "count_N": self.count_N,
                "phase_offset": self.phase_offset}

    @classmethod
    def from_dict(cls, data: dict) -> "DisplacementGrid":
        return cls(float(data["radius"]), int(data["count_N"]),
                   float(data.get("phase_offset", 0.0)))


@dataclass(frozen=True)
class QTable:
    """Displaced populations, one row per grid point and one column per ``k``."""

    values: np.ndarray
    p_values: np.ndarray

    def __post_init__(self):
        q = np.array(self.values, float)
        p = np.array(self.p_values, int).ravel()
        if q.ndim != 2 or q.shape[0] != p.size:
            raise ValueError("QTable needs one row per grid point")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "values", q)
        object.__setattr__(self, "p_values", p)

    @property
    def kmax(self) -> int:
        return self.values.shape[1] - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "k", "q"])
        for i, p in enumerate(self.p_values):
            for k, q in enumerate(self.values[i]):
                w.writerow([int(p), k, f"{q:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "QTable":
        rows = list(csv.reader(io.StringIO(text)))
        if [h.strip() for h in rows[0]] != ["p", "k", "q"]:
            raise ValueError("QTable CSV header must be p,k,q")
        recs = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:] if r]
        ps = sorted({r[0] for r in recs})
        kmax = max(r[1] for r in recs)
        vals = np.full((len(ps), kmax + 1), np.nan)
        index = {p: i for i, p in enumerate(ps)}
        for p, k, q in recs:
            vals[index[p], k] = q
        if np.isnan(vals).any():
            raise ValueError("QTable CSV is missing entries")
        return cls(vals, ps)


class WignerValue(NamedTuple):
    value: float
    converged: bool


@dataclass(frozen=True)
class WignerField:
    alphas: np.ndarray
    values: np.ndarray
    converged: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_alpha", "im_alpha", "w"])
        for a, v in zip(self.alphas.ravel(), self.values.ravel()):
            w.writerow([f"{a.real:.17g}", f"{a.imag:.17g}", f"{v:.17g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class Reconstruction:
    rho: DensityMatrix
    condition_number: float
    raw: np.ndarray
    residual_norm: float


# --------------------------------------------------------------------------
# forward model

def _effective_dim(rho: np.ndarray, tol: float = 1e-300) -> int:
    diag = np.abs(np.diag(rho))
    nz = np.nonzero(diag > tol)[0]
    return int(nz[-1]) + 1 if nz.size else 1


def simulate_q(rho, alpha: complex, kmax: int) -> np.ndarray:
    """Populations ``Q_0..Q_kmax`` of ``D(-alpha) rho D(-alpha)^dag``.

    Uses exact displacement matrix elements, so no working-dimension margin is
    needed beyond ``kmax``.
    """
    rho = as_density(rho).entries
    d = _effective_dim(rho)
    rho = rho[:d, :d]
    amat = displacement_block(-complex(alpha), kmax + 1, d)
    q = np.einsum("kn,nm,km->k", amat, rho, amat.conj()).real
    return np.where(q < 0, 0.0, q)


def simulate_qtable(rho, grid: DisplacementGrid, kmax: int) -> QTable:
    rows = [simulate_q(rho, a, kmax) for a in grid.points]
    return QTable(np.array(rows), grid.p_values)


def add_projection_noise(qtable: QTable, shots: int, seed) -> QTable:
    """Binomial resampling of each ``Q_k(alpha_p)`` from ``shots`` repetitions."""
    if int(shots) <= 0:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(seed)
    q = np.clip(qtable.values, 0.0, 1.0)
    return QTable(rng.binomial(int(shots), q) / shots, qtable.p_values)


# --------------------------------------------------------------------------
# inversion

def _hermitian_params(nmax: int):
    """Index map for the real parameters of a trace-one Hermitian matrix.

    Free parameters are ``rho_00..rho_{nmax-1,nmax-1}`` followed by
    ``Re rho_nm, Im rho_nm`` for ``n < m``; ``rho_{nmax,nmax}`` is eliminated
    by the trace condition.
    """
    diag = list(range(nmax))
    upper = [(n, m) for n in range(nmax + 1) for m in range(n + 1, nmax + 1)]
    return diag, upper


def design_matrix(grid: DisplacementGrid, kmax: int, nmax: int):
    """Linear model ``Q = M x + b`` over the free Hermitian parameters ``x``."""
    diag, upper = _hermitian_params(nmax)
    rows, offsets = [], []
    for alpha in grid.points:
        amat = displacement_block(-alpha, kmax + 1, nmax + 1)
        weight = np.abs(amat) ** 2
        last = weight[:, nmax]
        cols = [weight[:, n] - last for n in diag]
        for n, m in upper:
            z = amat[:, n] * amat[:, m].conj()
            cols.append(2 * z.real)
            cols.append(-2 * z.imag)
        block = np.column_stack(cols) if cols else np.zeros((kmax + 1, 0))
        rows.append(block)
        offsets.append(last)
    return np.vstack(rows), np.concatenate(offsets)


def _assemble(x: np.ndarray, nmax: int) -> np.ndarray:
    diag, upper = _hermitian_params(nmax)
    rho = np.zeros((nmax + 1, nmax + 1), complex)
    for i, n in enumerate(diag):
        rho[n, n] = x[i]
    rho[nmax, nmax] = 1.0 - x[:len(diag)].sum()
    j = len(diag)
    for n, m in upper:
        rho[n, m] = x[j] + 1j * x[j + 1]
        rho[m, n] = x[j] - 1j * x[j + 1]
        j += 2
    return rho


def project_physical(rho: np.ndarray) -> np.ndarray:
    """Nearest Hermitian, trace-one, eigenvalue-clipped matrix."""
    h = 0.5 * (rho + rho.conj().T)
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise ValueError("reconstructed matrix has no positive spectrum")
    w /= w.sum()
    out = (v * w) @ v.conj().T
    return 0.5 * (out + out.conj().T)


def reconstruct(qtable: QTable, grid: DisplacementGrid, nmax: int) -> Reconstruction:
    """Least-squares inversion of ``Q_k(alpha_p)`` followed by physical projection."""
    n_pts = grid.count_N
    if nmax > n_pts - 1:
        raise RankConditionError(
            f"nmax={nmax} violates nmax <= N-1={n_pts - 1}: a circle of 2N={2 * n_pts} "
            "displacements determines rho_nm only for n, m <= N-1")
    if not np.array_equal(qtable.p_values, grid.p_values):
        raise ValueError("QTable rows do not match the displacement grid")
    if qtable.kmax < nmax:
        raise ValueError(f"QTable kmax={qtable.kmax} must be >= nmax={nmax}")
    mat, offset = design_matrix(grid, qtable.kmax, nmax)
    rhs = qtable.values.ravel() - offset
    if mat.shape[1] == 0:
        x = np.zeros(0)
        cond = 1.0
    else:
        svals = np.linalg.svd(mat, compute_uv=False)
        cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
        rank = int(np.sum(svals > svals[0] * max(mat.shape) * np.finfo(float).eps))
        if rank < mat.shape[1]:
            raise RankConditionError(
                f"design matrix rank {rank} < {mat.shape[1]} parameters; require "
                f"nmax <= N-1 and a non-zero radius (radius={grid.radius})")
        x, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    raw = _assemble(x, nmax)
    resid = float(np.linalg.norm(mat @ x - rhs)) if mat.size else 0.0
    return Reconstruction(DensityMatrix(project_physical(raw)), cond, raw, resid)


def reconstruct_density(qtable: QTable, grid: DisplacementGrid, nmax: int) -> DensityMatrix:
    return reconstruct(qtable, grid, nmax).rho


# --------------------------------------------------------------------------
# Wigner function

def wigner_point(q_at_alpha) -> WignerValue:
    """``(2/pi) sum_n (-1)^n Q_n``; flags a tail that has not died out."""
    q = np.asarray(q_at_alpha, float).ravel()
    signs = np.where(np.arange(q.size) % 2 == 0, 1.0, -1.0)
    value = 2.0 / math.pi * float(np.dot(signs, q))
    tail = np.abs(q[-2:]) if q.size >= 2 else np.abs(q)
    converged = bool(q.size >= 2 and np.all(tail < WIGNER_TAIL_TOL))
    return WignerValue(value, converged)


def wigner_kmax(rho_dim: int, alpha: complex) -> int:
    """Population cutoff that captures a displaced state of support ``rho_dim``."""
    a = abs(alpha)
    return rho_dim + int(math.ceil(a * a + 8 * a * math.sqrt(rho_dim + a * a))) + 12


def wigner_field(rho, re_axis, im_axis) -> WignerField:
    """Wigner function on the rectangular grid ``re_axis x im_axis``.

    Rows follow ``im_axis``, columns ``re_axis``.
    """
    dm = as_density(rho)
    d = _effective_dim(dm.entries)
    rho_eff = DensityMatrix(dm.entries[:d, :d])
    re_axis = np.asarray(re_axis, float)
    im_axis = np.asarray(im_axis, float)
    alphas = re_axis[None, :] + 1j * im_axis[:, None]
    values = np.empty(alphas.shape)
    conv = np.empty(alphas.shape, bool)
    for idx, a in np.ndenumerate(alphas):
        res = wigner_point(simulate_q(rho_eff, a, wigner_kmax(d, a)))
        values[idx], conv[idx] = res
    return WignerField(alphas, values, conv)


def frobenius_error(a, b) -> float:
    a = as_density(a).entries
    b = as_density(b).entries
    d = max(a.shape[0], b.shape[0])
    pa = np.zeros((d, d), complex)
    pb = np.zeros((d, d), complex)
    pa[:a.shape[0], :a.shape[0]] = a
    pb[:b.shape[0], :b.shape[0]] = b
    return float(np.linalg.norm(pa - pb))
