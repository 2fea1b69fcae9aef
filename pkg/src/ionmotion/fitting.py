"""Parameter extraction from sideband and interference traces.

All nonlinear fits go through :func:`damped_gauss_newton`, a small
Levenberg-Marquardt loop that only accepts steps which lower the residual.
Population decomposition of a sideband trace is linear and solved as a
non-negative least-squares problem with a total-probability cap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls
from scipy.special import gammaln

from .signals import DriveParams, SignalTrace, sideband_basis

WEIGHT_EPS = 1e-6


RESIDUAL_FLOOR = 1e-5


class ConditioningError(ValueError):
    """The trace cannot separate the requested sideband frequencies."""

    def __init__(self, message: str, required_duration: float | None = None):
        super().__init__(message)
        self.required_duration = required_duration


@dataclass
class FitResult:
    params: dict
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def stderr(self) -> dict:
        diag = np.clip(np.diag(self.covariance), 0.0, None)
        return {k: float(math.sqrt(v)) for k, v in zip(self.params, diag)}

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            return v

        return {"params": {k: float(v) for k, v in self.params.items()},
                "stderr": self.stderr,
                "covariance": np.asarray(self.covariance).tolist(),
                "residual_norm": float(self.residual_norm),
                "converged": bool(self.converged),
                "iterations": int(self.iterations),
                "diagnostics": {k: plain(v) for k, v in self.diagnostics.items()}}


# --------------------------------------------------------------------------
# optimiser

@dataclass
class _Solve:
    x: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray
    converged: bool
    iterations: int
    costs: list


def damped_gauss_newton(model: Callable, x0, y, weights=None, project=None,
                        max_iter: int = 500, gtol: float = 1e-10, xtol: float = 1e-15) -> _Solve:
    """Minimise ``sum w (model(x) - y)^2``.

    ``model(x)`` returns ``(prediction, jacobian)``.  The damping factor is
    divided by 3 after an accepted step and multiplied by 4 after a rejected
    one; rejected steps never change ``x``, so the cost is non-increasing.
    """
    x = np.array(x0, float)
    y = np.asarray(y, float)
    sw = np.ones_like(y) if weights is None else np.sqrt(np.asarray(weights, float))
    project = project or (lambda v: v)

    def evaluate(v):
        pred, jac = model(v)
        return sw * (pred - y), sw[:, None] * jac

    y_norm = float(np.linalg.norm(sw * y))

    def stationary(r, jac, cost):
        exact = math.sqrt(cost) <= 1e-14 * max(1.0, y_norm)
        grad = np.linalg.norm(jac.T @ r)
        # residual scale: |r| plus a floor at the level where the gradient is
        # dominated by rounding in the data
        scale = math.sqrt(cost) + RESIDUAL_FLOOR * y_norm
        return exact or grad <= gtol * np.linalg.norm(jac) * scale

    r, jac = evaluate(x)
    cost = float(r @ r)
    costs = [cost]
    lam = 1e-3
    it = 0
    while it < max_iter and not stationary(r, jac, cost):
        it += 1
        grad = jac.T @ r
        jtj = jac.T @ jac
        scale = np.maximum(np.diag(jtj), 1e-300)
        accepted = small = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 4
                continue
            x_new = project(x + step)
            r_new, jac_new = evaluate(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                small = np.linalg.norm(x_new - x) <= xtol * (np.linalg.norm(x) + xtol)
                x, r, jac, cost = x_new, r_new, jac_new, cost_new
                lam = max(lam / 3, 1e-12)
                accepted = True
                break
            lam *= 4
        costs.append(cost)
        if not accepted or small:
            break
    converged = bool(stationary(r, jac, cost))
    return _Solve(x, r, jac, converged, it, costs)


def _covariance(jac: np.ndarray, residual: np.ndarray, absolute_sigma: bool) -> np.ndarray:
    n, p = jac.shape
    cov = np.linalg.pinv(jac.T @ jac)
    if not absolute_sigma:
        dof = max(n - p, 1)
        cov = cov * float(residual @ residual) / dof
    return 0.5 * (cov + cov.T)


def _trace_weights(trace: SignalTrace, weighted: bool):
    if not weighted or trace.shots is None:
        return None
    p = trace.values
    return trace.shots / (p * (1 - p) + WEIGHT_EPS)


# --------------------------------------------------------------------------
# damped sinusoid

def damped_sinusoid(t, x):
    """``offset + amplitude cos(2 Omega t) exp(-gamma t)`` and its Jacobian."""
    om, g, amp, off = x
    t = np.asarray(t, float)
    env = np.exp(-g * t)
    c, s = np.cos(2 * om * t), np.sin(2 * om * t)
    pred = off + amp * c * env
    jac = np.column_stack([-2 * t * amp * s * env, -t * amp * c * env,
                           c * env, np.ones_like(t)])
    return pred, jac


def _spectral_peak(t, y) -> float:
    """Angular frequency of the strongest component of ``y - mean``."""
    t = np.asarray(t, float)
    span = t[-1] - t[0]
    dt = np.median(np.diff(t))
    nyq = math.pi / dt
    freqs = np.linspace(0.0, nyq, 16 * t.size)[1:]
    yc = y - y.mean()
    power = np.abs(np.exp(-1j * np.outer(freqs, t)) @ yc) ** 2
    best = freqs[np.argmax(power)]
    # refine on a local grid
    fine = np.linspace(max(best - 4 * math.pi / span, 1e-12), best + 4 * math.pi / span, 801)
    power = np.abs(np.exp(-1j * np.outer(fine, t)) @ yc) ** 2
    return float(fine[np.argmax(power)])


def fit_damped_sinusoid(trace: SignalTrace, weighted: bool = False) -> FitResult:
    t, y = trace.abscissa, trace.values
    if t.size < 8:
        raise ValueError("damped-sinusoid fit needs at least 8 points")
    omega = _spectral_peak(t, y) / 2
    span = t[-1] - t[0]
    best = None
    for g in np.concatenate([[0.0], np.geomspace(0.05, 10, 24) / span]):
        basis = np.column_stack([np.cos(2 * omega * t) * np.exp(-g * t), np.ones_like(t)])
        coef, res, *_ = np.linalg.lstsq(basis, y, rcond=None)
        sse = float(np.sum((basis @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, g, coef)
    _, g0, (amp0, off0) = best
    w = _trace_weights(trace, weighted)
    sol = damped_gauss_newton(lambda x: damped_sinusoid(t, x), [omega, g0, amp0, off0], y, w)
    names = ["Omega", "gamma", "amplitude", "offset"]
    cov = _covariance(sol.jacobian, sol.residual, w is not None)
    return FitResult(dict(zip(names, map(float, sol.x))), cov,
                     float(np.linalg.norm(sol.residual)), sol.converged, sol.iterations,
                     {"cost_history": np.array(sol.costs)})


# --------------------------------------------------------------------------
# population decomposition

def required_duration(drive: DriveParams, nmax: int) -> float:
    """Shortest trace that separates the closest pair of ``cos(2 Omega_n t)`` terms."""
    om = np.sort(drive.rabi(np.arange(nmax + 1)))
    if om.size < 2:
        return 0.0
    gap = float(np.min(np.diff(om)))
    return math.inf if gap <= 0 else math.pi / gap


def _nnls(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Non-negative least squares, reduced to a square problem by a thin QR."""
    if a.shape[0] > 2 * a.shape[1]:
        q, r = np.linalg.qr(a)
        a, b = r, q.T @ b
    x, _ = nnls(a, b, maxiter=50 * a.shape[1])
    return x


def extract_populations(trace: SignalTrace, drive: DriveParams, nmax: int,
                        weighted: bool = False, max_condition: float = 1e12) -> FitResult:
    """Number-state populations ``P_0..P_nmax`` from a blue-sideband trace.

    Solves ``P_down(t) - 1/2 = 1/2 sum_n P_n cos(2 Omega_n t) exp(-gamma_n t)``
    subject to ``P_n >= 0`` and ``sum P_n <= 1``; the frequencies and damping
    rates come from ``drive`` and are not fitted.
    """
    t, y = trace.abscissa, trace.values
    duration = float(t[-1] - t[0])
    need = required_duration(drive, nmax)
    if duration < need:
        raise ConditioningError(
            f"trace duration {duration:.4g} cannot resolve Omega_n for n <= {nmax}; "
            f"need at least {need:.4g}", need)
    basis = 0.5 * sideband_basis(t, nmax, drive)
    rhs = y - 0.5
    w = _trace_weights(trace, weighted)
    if w is not None:
        sw = np.sqrt(w)
        basis, rhs = basis * sw[:, None], rhs * sw
    svals = np.linalg.svd(basis, compute_uv=False)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
    if cond > max_condition:
        raise ConditioningError(
            f"design matrix condition number {cond:.3g} exceeds {max_condition:.0e}; "
            f"lengthen the trace beyond {max(need, duration) * 2:.4g} or lower nmax", need)
    # column scaling keeps the NNLS solve well balanced
    scale = np.linalg.norm(basis, axis=0)
    pops = _nnls(basis / scale, rhs) / scale
    sum_active = False
    if pops.sum() > 1.0:
        big = 1e6 * svals[0]
        aug = np.vstack([basis, big * np.ones(nmax + 1)])
        aug_scale = np.linalg.norm(aug, axis=0)
        pops = _nnls(aug / aug_scale, np.append(rhs, big)) / aug_scale
        sum_active = True
    pops = np.clip(pops, 0.0, None)
    if pops.sum() > 1.0:
        pops = pops / pops.sum()
        # rounding can leave the sum an ulp above one
        while pops.sum() > 1.0:
            k = int(np.argmax(pops))
            pops[k] -= pops.sum() - 1.0
    resid = basis @ pops - rhs
    active = np.nonzero(pops == 0.0)[0]
    free = np.setdiff1d(np.arange(nmax + 1), active)
    cov = np.zeros((nmax + 1, nmax + 1))
    if free.size:
        sub = basis[:, free]
        cov[np.ix_(free, free)] = _covariance(sub, resid, w is not None)
    params = {f"P_{n}": float(p) for n, p in enumerate(pops)}
    return FitResult(params, cov, float(np.linalg.norm(resid)), True, 1,
                     {"active_nonnegativity": active, "sum_constraint_active": sum_active,
                      "condition_number": cond, "required_duration": need})


def populations_from(result: FitResult) -> np.ndarray:
    keys = sorted((k for k in result.params if k.startswith("P_")), key=lambda k: int(k[2:]))
    return np.array([result.params[k] for k in keys])


# --------------------------------------------------------------------------
# parametric population laws (renormalised over the supplied support)

def _normalised(w, dw):
    z, dz = w.sum(), dw.sum()
    return w / z, dw / z - w * dz / z ** 2


def thermal_law(nbar: float, size: int):
    """Renormalised geometric law and its derivative in ``nbar``."""
    nbar = max(float(nbar), 0.0)
    q = nbar / (nbar + 1.0)
    n = np.arange(size)
    w = q ** n
    dw = np.where(n >= 1, n * q ** np.maximum(n - 1, 0), 0.0)
    p, dp = _normalised(w, dw)
    return p, dp / (nbar + 1.0) ** 2


def poisson_law(nbar: float, size: int):
    nbar = max(float(nbar), 0.0)
    n = np.arange(size)
    w = np.zeros(size)
    w[0] = 1.0
    if nbar > 0:
        w[1:] = np.exp(n[1:] * math.log(nbar) - gammaln(n[1:] + 1))
    dw = np.concatenate([[0.0], w[:-1]])
    return _normalised(w, dw)


def squeezed_law(s: float, size: int):
    """Even-only law ``(2k)! s^{2k} / (2^k k!)^2`` with ``s = tanh r``."""
    s = min(max(float(s), 0.0), 1.0 - 1e-15)
    k = np.arange((size + 1) // 2)
    logc = gammaln(2 * k + 1) - 2 * (k * math.log(2) + gammaln(k + 1))
    wk = np.zeros(k.size)
    dwk = np.zeros(k.size)
    wk[0] = 1.0
    if s > 0:
        logs = math.log(s)
        kk = k[1:]
        wk[1:] = np.exp(logc[1:] + 2 * kk * logs)
        dwk[1:] = 2 * kk * np.exp(logc[1:] + (2 * kk - 1) * logs)
    w = np.zeros(size)
    dw = np.zeros(size)
    w[0::2], dw[0::2] = wk, dwk
    return _normalised(w, dw)


def _check_population_input(pops) -> np.ndarray:
    pops = np.asarray(pops, float).ravel()
    if pops.size < 2:
        raise ValueError("need at least two populations")
    if np.any(pops < -1e-9) or abs(pops.sum() - 1.0) > 1e-3:
        raise ValueError(f"populations must be non-negative and sum to ~1 (sum={pops.sum():.6g})")
    return pops


def _one_param_fit(law, pops, x0, lower, upper, rows=None) -> tuple[_Solve, np.ndarray]:
    rows = np.arange(pops.size) if rows is None else rows

    def model(x):
        p, dp = law(x[0], pops.size)
        return p[rows], dp[rows, None]

    sol = damped_gauss_newton(model, [x0], pops[rows],
                              project=lambda v: np.clip(v, lower, upper))
    cov = _covariance(sol.jacobian, sol.residual, False)
    return sol, cov


def fit_thermal(populations) -> FitResult:
    pops = _check_population_input(populations)
    x0 = float(np.dot(np.arange(pops.size), pops))
    sol, cov = _one_param_fit(thermal_law, pops, x0, 0.0, np.inf)
    return FitResult({"nbar": float(sol.x[0])}, cov, float(np.linalg.norm(sol.residual)),
                     sol.converged, sol.iterations)


def fit_poissonian(populations) -> FitResult:
    pops = _check_population_input(populations)
    x0 = float(np.dot(np.arange(pops.size), pops))
    sol, cov = _one_param_fit(poisson_law, pops, x0, 0.0, np.inf)
    return FitResult({"nbar": float(sol.x[0])}, cov, float(np.linalg.norm(sol.residual)),
                     sol.converged, sol.iterations)


def fit_squeezed(populations) -> FitResult:
    """Squeeze factor ``beta = exp(2 r)`` from the even-number populations."""
    pops = _check_population_input(populations)
    nbar = float(np.dot(np.arange(pops.size), pops))
    s0 = math.tanh(math.asinh(math.sqrt(nbar)))
    even = np.arange(0, pops.size, 2)
    sol, cov_s = _one_param_fit(squeezed_law, pops, s0, 0.0, 1.0 - 1e-15, rows=even)
    s = float(sol.x[0])
    beta = (1 + s) / (1 - s)
    dbeta = 2.0 / (1 - s) ** 2
    cov = cov_s * dbeta ** 2
    return FitResult({"beta": beta}, cov, float(np.linalg.norm(sol.residual)),
                     sol.converged, sol.iterations,
                     {"tanh_r": s, "odd_mass": float(pops[1::2].sum())})


# --------------------------------------------------------------------------
# cat fringe

def cat_model(phi, x):
    """Fringe ``1/2 [1 - c E cos(a^2 sin phi)]`` with ``E = exp(-a^2 (1 - cos phi))``."""
    alpha, c = x
    phi = np.asarray(phi, float)
    u = alpha * alpha
    env = np.exp(-u * (1 - np.cos(phi)))
    arg = u * np.sin(phi)
    pred = 0.5 * (1 - c * env * np.cos(arg))
    dpdu = -0.5 * c * env * (-(1 - np.cos(phi)) * np.cos(arg) - np.sin(arg) * np.sin(phi))
    jac = np.column_stack([2 * alpha * dpdu, -0.5 * env * np.cos(arg)])
    return pred, jac


def fit_cat(trace: SignalTrace, weighted: bool = False) -> FitResult:
    """Amplitude ``alpha`` and contrast ``c`` from an interference scan over ``phi``."""
    phi, y = trace.abscissa, trace.values
    if phi[-1] - phi[0] < 1.5 * math.pi:
        raise ValueError("phase scan must cover most of [0, 2 pi)")
    wrapped = np.angle(np.exp(1j * phi))
    c0 = float(np.clip(1 - 2 * y[np.argmin(np.abs(wrapped))], 0.0, 1.0))
    # the fringe narrows as 1/alpha: scan alpha and keep the best match
    grid = np.geomspace(0.05, 12.0, 600)
    sse = [np.sum((cat_model(phi, (a, c0))[0] - y) ** 2) for a in grid]
    a0 = float(grid[int(np.argmin(sse))])
    w = _trace_weights(trace, weighted)
    sol = damped_gauss_newton(lambda x: cat_model(phi, x), [a0, c0], y, w,
                              project=lambda v: np.array([abs(v[0]), min(max(v[1], 0.0), 1.0)]))
    svals = np.linalg.svd(sol.jacobian, compute_uv=False)
    identifiable = svals[-1] > 1e-10 * max(svals[0], 1e-300)
    diag = {}
    converged = sol.converged
    if not identifiable:
        converged = False
        diag["identifiability"] = ("Jacobian is rank deficient: with contrast near zero "
                                   "the fringe carries no information on alpha")
    cov = _covariance(sol.jacobian, sol.residual, w is not None)
    return FitResult({"alpha": float(sol.x[0]), "c": float(sol.x[1])}, cov,
                     float(np.linalg.norm(sol.residual)), converged, sol.iterations, diag)
