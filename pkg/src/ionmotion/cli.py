"""Command-line entry point.

Every subcommand takes its parameters from (in increasing priority) a named
preset, a JSON config file and command-line flags.  Outputs go to the
``--out`` directory together with ``manifest.json``, which records the
toolkit version, the resolved configuration, the wall-clock duration and the
SHA-256 digest of every data file written.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np

from . import __version__
from .decoherence import NoiseConfig, decoherence_time, ensemble_stats, fit_slope
from .fitting import (ConditioningError, extract_populations, fit_cat, fit_damped_sinusoid,
                      fit_poissonian, fit_squeezed, fit_thermal, populations_from)
from .fock import (DensityMatrix, SpinMotionState, StateVector, make_cat, make_coherent,
                   make_fock, make_squeezed_vacuum, make_thermal, mean_n, populations)
from .forced import (CoherentLabel, ForceProfile, StepSizeError, alpha_of_t,
                     numeric_propagate, overlap, theta_of_t)
from .signals import (DriveParams, SignalTrace, cat_fringe, p_down_distribution,
                      simulate_cat_interferometer, simulate_detection)
from .tomography import (DisplacementGrid, QTable, add_projection_noise, frobenius_error,
                         reconstruct, simulate_qtable, wigner_field)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SEED_LIMIT = 2 ** 64


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class NumericalFailure(RuntimeError):
    """A computation finished without meeting its convergence criterion."""


# --------------------------------------------------------------------------
# parameter parsing

def _as_float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    return float(v)


def _as_int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, float) and not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


def _as_complex(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError("expected [re, im]")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    if isinstance(v, bool):
        raise ValueError("expected a number")
    return complex(v)


def _as_bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes"):
        return True
    if isinstance(v, str) and v.lower() in ("false", "0", "no"):
        return False
    raise ValueError("expected true or false")


def _as_str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return conv


def _as_mapping(v):
    """A JSON object given inline, as JSON text or as a path to a JSON file."""
    if isinstance(v, dict):
        return v
    if isinstance(v, str):
        text = v.strip()
        if not text.startswith("{"):
            try:
                text = Path(v).read_text()
            except OSError as exc:
                raise ValueError(f"cannot read {v}: {exc.strerror}") from None
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object")
        return data
    raise ValueError("expected a JSON object")


class Param(NamedTuple):
    name: str
    conv: Callable[[Any], Any]
    default: Any
    help: str
    boolean: bool = False


STATE_PARAMS = [
    Param("kind", _choice("fock", "coherent", "thermal", "squeezed", "cat"), None,
          "state kind"),
    Param("state", _as_str, None, "state JSON file written by the state command"),
    Param("n", _as_int, None, "Fock level"),
    Param("alpha", _as_complex, None, "coherent amplitude (number, 're+imj' or [re, im])"),
    Param("nbar", _as_float, None, "thermal mean occupation"),
    Param("beta", _as_float, None, "squeeze factor exp(2r)"),
    Param("phi", _as_float, math.pi, "cat phase"),
    Param("dim", _as_int, 64, "Fock-space dimension"),
]

DRIVE_PARAMS = [
    Param("omega_base", _as_float, 1.0, "base sideband Rabi rate Omega_{0,1}"),
    Param("eta", _as_float, 0.202, "Lamb-Dicke parameter"),
    Param("gamma0", _as_float, 0.0, "damping rate of the n=0 flop"),
    Param("kappa", _as_float, 0.7, "damping exponent, gamma_n = gamma0 (n+1)^kappa"),
]

GRID_PARAMS = [
    Param("radius", _as_float, 1.0, "displacement circle radius"),
    Param("count_N", _as_int, 4, "number N of the 2N displacement phases"),
    Param("phase_offset", _as_float, 0.0, "phase of the p=0 displacement"),
    Param("grid", _as_str, None, "grid JSON file written by tomo simulate"),
]

COMMAND_PARAMS: dict[str, list[Param]] = {
    "state": STATE_PARAMS,
    "signal": STATE_PARAMS + DRIVE_PARAMS + [
        Param("mode", _choice("sideband", "cat"), "sideband", "signal type"),
        Param("t_start", _as_float, 0.0, "first sample time"),
        Param("t_stop", _as_float, None, "last sample time"),
        Param("points", _as_int, 201, "number of samples"),
        Param("c", _as_float, 1.0, "cat fringe contrast"),
        Param("cat_method", _choice("closed", "evolve"), "closed",
              "closed-form fringe or explicit state evolution"),
        Param("shots", _as_int, None, "repetitions per point for a sampled companion trace"),
        Param("time_unit", _as_str, "", "unit label echoed into the manifest"),
    ],
    "tomo": STATE_PARAMS + GRID_PARAMS + [
        Param("kmax", _as_int, None, "highest recorded Fock level (default nmax + 8)"),
        Param("nmax", _as_int, None, "reconstruction cutoff (default count_N - 1)"),
        Param("shots", _as_int, None, "repetitions per displaced population"),
        Param("qtable", _as_str, None, "QTable file to reconstruct"),
        Param("truth", _as_str, None, "state JSON to compare the reconstruction against"),
        Param("density", _as_str, None, "density JSON for the Wigner field"),
        Param("reconstruct", _as_bool, False, "reconstruct before computing the Wigner field",
              boolean=True),
        Param("extent", _as_float, 3.0, "half-width of the Wigner grid"),
        Param("grid_points", _as_int, 41, "Wigner grid points per axis"),
    ],
    "decohere": [
        Param("C", _as_float, None, "white-noise strength"),
        Param("dt", _as_float, None, "time step"),
        Param("steps", _as_int, None, "number of time steps"),
        Param("trajectories", _as_int, None, "ensemble size"),
        Param("delta_alpha", _as_complex, None, "separation of the two coherent states"),
        Param("omega_x", _as_float, 1.0, "trap frequency"),
        Param("alpha1_0", _as_complex, None, "initial amplitude of component 1"),
        Param("refine", _as_int, 0, "Brownian-bridge refinement levels"),
        Param("n_samples", _as_int, 20, "sampled times"),
        Param("window_start", _as_float, None, "start of the slope-fit window in omega_x t"),
        Param("window_stop", _as_float, None, "end of the slope-fit window in omega_x t"),
    ],
    "fit": DRIVE_PARAMS + [
        Param("data", _as_str, None, "trace or populations file (CSV or JSON)"),
        Param("model", _choice("damped_sinusoid", "populations", "thermal", "poissonian",
                               "squeezed", "cat"), None, "fit model"),
        Param("nmax", _as_int, None, "population cutoff when decomposing a trace"),
        Param("weighted", _as_bool, False, "weight points by shot noise", boolean=True),
    ],
    "propagate": [
        Param("alpha0", _as_complex, 0j, "initial coherent amplitude"),
        Param("theta0", _as_float, 0.0, "initial phase"),
        Param("force", _as_mapping, None, "ForceProfile as JSON text or file"),
        Param("t_final", _as_float, None, "final time"),
        Param("points", _as_int, 101, "number of output times"),
        Param("omega_x", _as_float, 1.0, "trap frequency"),
        Param("oracle", _as_bool, False, "add a numerical-integration fidelity column",
              boolean=True),
        Param("dim", _as_int, 160, "Fock dimension for the numerical oracle"),
        Param("dt", _as_float, 0.005, "oracle step size"),
    ],
}

GLOBAL_KEYS = {"seed", "out", "format", "threads"}
TOMO_ACTIONS = ("simulate", "reconstruct", "wigner")

_FIG_DRIVE = {"omega_base": 2 * math.pi * 0.05, "eta": 0.202, "gamma0": 0.02,
              "t_start": 0.0, "t_stop": 50.0, "points": 501, "time_unit": "us"}

PRESETS: dict[str, tuple[str, str | None, dict]] = {
    "fig2a": ("signal", None, {"kind": "fock", "n": 0, **_FIG_DRIVE}),
    "fig2c": ("signal", None, {"kind": "thermal", "nbar": 1.3, **_FIG_DRIVE}),
    "fig3a": ("signal", None, {"kind": "coherent", "alpha": math.sqrt(3.1), **_FIG_DRIVE}),
    "fig3b": ("signal", None, {"kind": "squeezed", "beta": 40.0, "dim": 300, **_FIG_DRIVE}),
    "fig5": ("signal", None, {"mode": "cat", "alpha": 6.0, "c": 1.0, "points": 721}),
    "fig7": ("tomo", "wigner", {"kind": "fock", "n": 1, "reconstruct": True, "radius": 1.0,
                                "count_N": 4, "extent": 3.0, "grid_points": 41}),
    "fig8": ("tomo", "wigner", {"kind": "coherent", "alpha": 1.5, "reconstruct": True,
                                "radius": 1.5, "count_N": 24, "extent": 3.0,
                                "grid_points": 41}),
}


def _convert(params: list[Param], raw: dict, source: str) -> dict:
    known = {p.name: p for p in params}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown {source} key")
        if value is None:
            continue
        try:
            out[key] = known[key].conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return out


def _parse_seed(v) -> int:
    seed = _as_int(v)
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def resolve(args: argparse.Namespace) -> dict:
    """Merge preset, config file and flags into one validated record."""
    command = args.command
    action = getattr(args, "action", None)
    params = COMMAND_PARAMS[command]
    merged = {p.name: p.default for p in params}
    glob = {"seed": None, "out": "ionmotion-out", "format": "csv", "threads": 1}

    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {args.preset!r}; "
                              f"choose from {', '.join(PRESETS)}")
        p_cmd, p_action, values = PRESETS[args.preset]
        if p_cmd != command or (p_action is not None and p_action != action):
            target = p_cmd + (f" {p_action}" if p_action else "")
            raise ConfigError(f"preset: {args.preset} belongs to '{target}'")
        merged.update(_convert(params, values, "preset"))

    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
        for key in GLOBAL_KEYS & data.keys():
            glob[key] = data.pop(key)
        merged.update(_convert(params, data, "config"))

    flags = {p.name: getattr(args, p.name) for p in params}
    merged.update(_convert(params, flags, "flag"))
    for key in GLOBAL_KEYS:
        if getattr(args, key) is not None:
            glob[key] = getattr(args, key)

    try:
        glob["seed"] = None if glob["seed"] is None else _parse_seed(glob["seed"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"seed: {exc}") from None
    try:
        glob["threads"] = _as_int(glob["threads"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"threads: {exc}") from None
    if glob["threads"] < 1:
        raise ConfigError("threads: must be >= 1")
    if glob["format"] not in ("csv", "json"):
        raise ConfigError("format: expected csv or json")
    if not isinstance(glob["out"], str):
        raise ConfigError("out: expected a path")
    return {"params": merged, **glob}


# --------------------------------------------------------------------------
# output

def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


class Run:
    """Collects output files for one invocation and writes the manifest."""

    def __init__(self, label: str, resolved: dict):
        self.label = label
        self.resolved = resolved
        self.p = resolved["params"]
        self.fmt = resolved["format"]
        self.threads = resolved["threads"]
        self.seed = resolved["seed"]
        self.out = Path(resolved["out"])
        self.digests: dict[str, str] = {}
        self.started = time.perf_counter()

    def require(self, *names):
        for name in names:
            if self.p.get(name) is None:
                raise ConfigError(f"{name}: required for '{self.label}'")

    def require_seed(self, why: str) -> int:
        if self.seed is None:
            raise ConfigError(f"seed: {why} is stochastic and needs an explicit --seed")
        return self.seed

    def _write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def json(self, stem: str, obj):
        self._write(f"{stem}.json", _dumps(obj))

    def table(self, stem: str, columns: dict):
        cols = {k: np.asarray(v).ravel() for k, v in columns.items()}
        if self.fmt == "json":
            self._write(f"{stem}.json", _dumps(cols))
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols.keys())
        for row in zip(*cols.values()):
            w.writerow([_fmt(v) for v in row])
        self._write(f"{stem}.csv", buf.getvalue())

    def finish(self):
        config = {"command": self.label, "params": self.p, "seed": self.seed,
                  "format": self.fmt, "threads": self.threads}
        manifest = {"toolkit": "ionmotion", "version": __version__, "config": config,
                    "duration_s": time.perf_counter() - self.started,
                    "outputs": dict(sorted(self.digests.items()))}
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(_dumps(manifest))


def read_table(path: str) -> dict:
    """Columns of a CSV or JSON table written by :class:`Run`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if path.endswith(".json"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object of columns")
        return {k: np.asarray(v, float) for k, v in data.items()}
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    body = np.array([[float(x) for x in r] for r in rows[1:] if r], float)
    body = body.reshape(-1, len(header))
    return {h: body[:, i] for i, h in enumerate(header)}


# --------------------------------------------------------------------------
# states

def _state_record(state) -> dict:
    if isinstance(state, StateVector):
        return {"type": "state_vector", **state.to_dict()}
    if isinstance(state, DensityMatrix):
        return {"type": "density_matrix", **state.to_dict()}
    return {"type": "spin_motion", **state.to_dict()}


def load_state(path: str):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    kind = data.get("type")
    body = {k: v for k, v in data.items() if k != "type"}
    if kind == "state_vector":
        return StateVector.from_dict(body)
    if kind == "density_matrix":
        return DensityMatrix.from_dict(body)
    raise ConfigError(f"{path}: unsupported state type {kind!r}")


def build_state(p: dict):
    if p.get("state") is not None:
        return load_state(p["state"])
    kind = p.get("kind")
    if kind is None:
        raise ConfigError("kind: required (or give a state file)")
    dim = p["dim"]
    if dim < 1:
        raise ConfigError("dim: must be >= 1")

    def need(name):
        if p.get(name) is None:
            raise ConfigError(f"{name}: required for kind {kind}")
        return p[name]

    if kind == "fock":
        n = need("n")
        if not 0 <= n < dim:
            raise ConfigError(f"n: must satisfy 0 <= n < dim={dim}")
        return make_fock(n, dim)
    if kind == "coherent":
        return make_coherent(need("alpha"), dim)
    if kind == "thermal":
        nbar = need("nbar")
        if nbar < 0:
            raise ConfigError("nbar: must be non-negative")
        return make_thermal(nbar, dim)
    if kind == "squeezed":
        beta = need("beta")
        if beta < 1:
            raise ConfigError("beta: must be >= 1")
        return make_squeezed_vacuum(beta, dim)
    return make_cat(need("alpha"), p["phi"], dim)


def _drive(p: dict) -> DriveParams:
    try:
        return DriveParams(p["omega_base"], p["eta"], p["gamma0"], p["kappa"])
    except ValueError as exc:
        raise ConfigError(f"drive: {exc}") from None


# --------------------------------------------------------------------------
# commands

def cmd_state(run: Run):
    state = build_state(run.p)
    pops = populations(state)
    run.json("state", _state_record(state))
    run.table("populations", {"n": np.arange(pops.size), "p": pops})
    print(f"state: dim={pops.size} mean_n={mean_n(state):.6g}")


def cmd_signal(run: Run):
    p = run.p
    if p["points"] < 2:
        raise ConfigError("points: empty grid, need at least 2 samples")
    if p["mode"] == "cat":
        run.require("alpha")
        alpha = abs(p["alpha"])
        phi = np.linspace(0.0, 2 * math.pi, p["points"], endpoint=False)
        if p["cat_method"] == "evolve":
            values = np.array([simulate_cat_interferometer(alpha, f, p["dim"]) for f in phi])
            values = values * p["c"] + 0.5 * (1 - p["c"])
        else:
            values = cat_fringe(phi, alpha, p["c"])
        trace = SignalTrace(phi, np.clip(values, 0.0, 1.0))
    else:
        run.require("t_stop")
        if not p["t_stop"] > p["t_start"] or p["t_start"] < 0:
            raise ConfigError("t_stop: empty grid, need 0 <= t_start < t_stop")
        state = build_state(p)
        t = np.linspace(p["t_start"], p["t_stop"], p["points"])
        trace = SignalTrace(t, p_down_distribution(t, populations(state), _drive(p)))
    run.table("trace", {"abscissa": trace.abscissa, "value": trace.values})
    if p["shots"] is not None:
        if p["shots"] < 1:
            raise ConfigError("shots: must be positive")
        seed = run.require_seed("shot sampling")
        noisy = simulate_detection(trace, p["shots"], seed)
        run.table("trace_shots", {"abscissa": noisy.abscissa, "value": noisy.values,
                                  "shots": noisy.shots.astype(int)})
    print(f"signal: {len(trace)} points ({p['mode']})")


def _grid(p: dict) -> DisplacementGrid:
    if p.get("grid") is not None:
        try:
            return DisplacementGrid.from_dict(json.loads(Path(p["grid"]).read_text()))
        except OSError as exc:
            raise ConfigError(f"grid: cannot read {p['grid']}: {exc.strerror}") from None
    try:
        return DisplacementGrid(p["radius"], p["count_N"], p["phase_offset"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _simulated_qtable(run: Run, state, grid: DisplacementGrid) -> QTable:
    p = run.p
    nmax = p["nmax"] if p["nmax"] is not None else grid.count_N - 1
    kmax = p["kmax"] if p["kmax"] is not None else nmax + 8
    if kmax < 0:
        raise ConfigError("kmax: must be non-negative")
    qtable = simulate_qtable(state, grid, kmax)
    if p["shots"] is not None:
        if p["shots"] < 1:
            raise ConfigError("shots: must be positive")
        qtable = add_projection_noise(qtable, p["shots"], run.require_seed("projection noise"))
    return qtable


def _qtable_columns(qtable: QTable) -> dict:
    p, k = np.meshgrid(qtable.p_values, np.arange(qtable.kmax + 1), indexing="ij")
    return {"p": p, "k": k, "q": qtable.values}


def _load_qtable(path: str) -> QTable:
    cols = read_table(path)
    if set(cols) != {"p", "k", "q"}:
        raise ConfigError(f"qtable: {path} must have columns p,k,q")
    ps = np.unique(cols["p"].astype(int))
    kmax = int(cols["k"].max())
    vals = np.full((ps.size, kmax + 1), np.nan)
    rows = np.searchsorted(ps, cols["p"].astype(int))
    vals[rows, cols["k"].astype(int)] = cols["q"]
    if np.isnan(vals).any():
        raise ConfigError(f"qtable: {path} is missing entries")
    return QTable(vals, ps)


def _reconstruct(run: Run, qtable: QTable, grid: DisplacementGrid, truth=None) -> DensityMatrix:
    nmax = run.p["nmax"] if run.p["nmax"] is not None else grid.count_N - 1
    rec = reconstruct(qtable, grid, nmax)
    report = {"nmax": nmax, "condition_number": rec.condition_number,
              "residual_norm": rec.residual_norm,
              "diagonal": np.real(np.diag(rec.rho.entries))}
    if truth is not None:
        report["frobenius_error"] = frobenius_error(rec.rho, truth)
    run.json("density", _state_record(rec.rho))
    run.json("reconstruction", report)
    diag = ", ".join(f"{x:.6f}" for x in report["diagonal"])
    print(f"reconstruct: nmax={nmax} condition={rec.condition_number:.4g} rho_nn=[{diag}]")
    if truth is not None:
        print(f"frobenius_error={report['frobenius_error']:.6e}")
    return rec.rho


def _wigner(run: Run, rho) -> None:
    p = run.p
    if p["grid_points"] < 1 or p["extent"] < 0:
        raise ConfigError("grid_points: need at least one point and extent >= 0")
    axis = np.linspace(-p["extent"], p["extent"], p["grid_points"])
    chunks = np.array_split(axis, min(run.threads, axis.size))
    if run.threads > 1:
        with ThreadPoolExecutor(max_workers=run.threads) as pool:
            parts = list(pool.map(lambda im: wigner_field(rho, axis, im), chunks))
    else:
        parts = [wigner_field(rho, axis, im) for im in chunks]
    alphas = np.vstack([f.alphas for f in parts])
    values = np.vstack([f.values for f in parts])
    conv = np.vstack([f.converged for f in parts])
    run.table("wigner", {"re_alpha": alphas.real, "im_alpha": alphas.imag, "w": values})
    i0 = np.unravel_index(np.argmin(np.abs(alphas)), alphas.shape)
    summary = {"min": float(values.min()), "max": float(values.max()),
               "value_nearest_origin": float(values[i0]),
               "nearest_origin": complex(alphas[i0]),
               "all_converged": bool(conv.all())}
    run.json("wigner_summary", summary)
    print(f"wigner: {values.size} points, min={summary['min']:.6g}, "
          f"W(~0)={summary['value_nearest_origin']:.10g}")


def cmd_tomo(run: Run, action: str):
    p = run.p
    grid = _grid(p)
    if action == "simulate":
        state = build_state(p)
        qtable = _simulated_qtable(run, state, grid)
        run.table("qtable", _qtable_columns(qtable))
        run.json("grid", grid.to_dict())
        print(f"simulate: {qtable.values.shape[0]} displacements, kmax={qtable.kmax}")
    elif action == "reconstruct":
        truth = load_state(p["truth"]) if p["truth"] is not None else None
        if p["qtable"] is not None:
            qtable = _load_qtable(p["qtable"])
        else:
            state = build_state(p)
            truth = state if truth is None else truth
            qtable = _simulated_qtable(run, state, grid)
            run.table("qtable", _qtable_columns(qtable))
        _reconstruct(run, qtable, grid, truth)
    else:
        if p["density"] is not None:
            rho = load_state(p["density"])
        else:
            state = build_state(p)
            if isinstance(state, SpinMotionState):
                raise ConfigError("kind: the Wigner field needs a motional state, not a cat")
            if p["reconstruct"]:
                qtable = _simulated_qtable(run, state, grid)
                rho = _reconstruct(run, qtable, grid, state)
            else:
                rho = state
        _wigner(run, rho)


def cmd_decohere(run: Run):
    p = run.p
    run.require("C", "dt", "steps", "trajectories", "delta_alpha")
    seed = run.require_seed("the noise ensemble")
    try:
        config = NoiseConfig(p["C"], p["dt"], p["steps"], p["trajectories"], seed,
                             p["delta_alpha"], p["omega_x"], p["alpha1_0"], p["refine"])
    except ValueError as exc:
        raise ConfigError(f"noise config: {exc}") from None
    if p["n_samples"] < 2:
        raise ConfigError("n_samples: need at least 2 sampled times")
    stats = ensemble_stats(config, p["n_samples"], run.threads)
    t = stats.times
    da2 = abs(config.delta_alpha) ** 2
    analytic_phase = np.exp(-config.C * da2 * t / 4)
    run.table("ensemble", {
        "t": t, "mean_dtheta_sq": stats.mean_dtheta_sq, "se": stats.se_dtheta_sq,
        "re_phase": stats.mean_phase_factor.real, "im_phase": stats.mean_phase_factor.imag,
        "se_phase": stats.se_phase, "amp_diff": stats.mean_amp_diffusion,
        "se_amp": stats.se_amp, "analytic_dtheta_sq": 0.5 * config.C * da2 * t,
        "analytic_phase": analytic_phase, "analytic_amp_diff": config.C * t})
    window = None
    if p["window_start"] is not None or p["window_stop"] is not None:
        window = (p["window_start"] if p["window_start"] is not None else -math.inf,
                  p["window_stop"] if p["window_stop"] is not None else math.inf)
    theta_slope, _ = fit_slope(t, stats.mean_dtheta_sq, window, config.omega_x)
    amp_slope, _ = fit_slope(t, stats.mean_amp_diffusion, window, config.omega_x)
    se = np.where(stats.se_phase > 0, stats.se_phase, np.inf)
    z = np.abs(np.abs(stats.mean_phase_factor) - analytic_phase) / se
    summary = {"dtheta_sq_slope": theta_slope, "expected_dtheta_sq_slope": 0.5 * config.C * da2,
               "amp_diffusion_slope": amp_slope, "expected_amp_diffusion_slope": config.C,
               "max_phase_z": float(z.max()) if z.size else 0.0,
               "decoherence_time": (decoherence_time(config.C, config.delta_alpha)
                                    if config.C > 0 and da2 > 0 else None),
               "trajectories": stats.trajectories}
    run.json("summary", summary)
    print(f"decohere: <dtheta^2> slope {theta_slope:.6g} (expected {0.5 * config.C * da2:.6g}), "
          f"amplitude slope {amp_slope:.6g} (expected {config.C:.6g}), "
          f"max phase z {summary['max_phase_z']:.3g}")


def _trace_from_columns(cols: dict) -> SignalTrace:
    return SignalTrace(cols["abscissa"], cols["value"], cols.get("shots"))


def cmd_fit(run: Run):
    p = run.p
    run.require("data", "model")
    cols = read_table(p["data"])
    is_trace = {"abscissa", "value"} <= cols.keys()
    is_pops = {"n", "p"} <= cols.keys()
    model = p["model"]
    if not (is_trace or is_pops):
        raise ConfigError("data: expected trace columns abscissa,value or populations n,p")
    if model in ("damped_sinusoid", "cat", "populations") and not is_trace:
        raise ConfigError(f"model: {model} needs a trace, got a populations table")
    trace = _trace_from_columns(cols) if is_trace else None
    pops = None
    if model in ("populations", "thermal", "poissonian", "squeezed"):
        if is_trace:
            run.require("nmax")
            extracted = extract_populations(trace, _drive(p), p["nmax"], p["weighted"])
            pops = populations_from(extracted)
            run.table("populations", {"n": np.arange(pops.size), "p": pops})
            if model == "populations":
                result = extracted
        else:
            pops = cols["p"][np.argsort(cols["n"])]
            if pops.sum() > 0:
                pops = pops / pops.sum()
    if model == "damped_sinusoid":
        result = fit_damped_sinusoid(trace, p["weighted"])
    elif model == "cat":
        result = fit_cat(trace, p["weighted"])
    elif model == "thermal":
        result = fit_thermal(pops)
    elif model == "poissonian":
        result = fit_poissonian(pops)
    elif model == "squeezed":
        result = fit_squeezed(pops)
    out = result.to_dict()
    out["model"] = model
    run.json("fit", out)
    shown = {k: v for k, v in result.params.items()} if model != "populations" else {
        "sum": float(sum(result.params.values()))}
    print("fit: " + ", ".join(f"{k}={v:.8g}" for k, v in shown.items())
          + f" converged={result.converged}")
    if not result.converged:
        raise NumericalFailure(f"{model} fit did not converge: {result.diagnostics}")


def cmd_propagate(run: Run):
    p = run.p
    run.require("force", "t_final")
    try:
        force = ForceProfile.from_dict(p["force"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"force: {exc}") from None
    if not p["t_final"] > 0 or p["points"] < 2:
        raise ConfigError("t_final: need t_final > 0 and at least 2 points")
    if p["omega_x"] <= 0:
        raise ConfigError("omega_x: must be positive")
    times = np.linspace(0.0, p["t_final"], p["points"])
    label0 = CoherentLabel(p["alpha0"], p["theta0"])
    alpha = np.array([alpha_of_t(label0.alpha, force, t, p["omega_x"]) for t in times])
    theta = np.array([theta_of_t(label0, force, t, p["omega_x"]) for t in times])
    columns = {"t": times, "re_alpha": alpha.real, "im_alpha": alpha.imag, "theta": theta}
    final = CoherentLabel(alpha[-1], theta[-1])
    if p["oracle"]:
        if p["dt"] <= 0 or p["dim"] < 2:
            raise ConfigError("dt: oracle needs dt > 0 and dim >= 2")
        psi = label0.state(p["dim"])
        fidelity = [1.0]
        for t_prev, t_next, a, th in zip(times[:-1], times[1:], alpha[1:], theta[1:]):
            psi = numeric_propagate(psi, force, t_next, p["dt"], p["omega_x"], t0=t_prev)
            ref = CoherentLabel(a, th).state(p["dim"])
            fidelity.append(overlap(ref, psi).real)
        columns["fidelity"] = np.array(fidelity)
        print(f"propagate: min phase-sensitive fidelity {min(fidelity):.12f}")
    run.table("trajectory", columns)
    run.json("final_label", {"alpha": final.alpha, "theta": final.theta})
    print(f"propagate: alpha(t_final)={final.alpha:.10g}, theta={final.theta:.10g}")


# --------------------------------------------------------------------------
# entry point

def _add_params(sub: argparse.ArgumentParser, params: list[Param]):
    for prm in params:
        flag = "--" + prm.name.replace("_", "-")
        if prm.boolean:
            sub.add_argument(flag, dest=prm.name, action=argparse.BooleanOptionalAction,
                             default=None, help=prm.help)
        else:
            sub.add_argument(flag, dest=prm.name, default=None, help=prm.help)
        if "_" in prm.name and not prm.boolean:
            # also accept the underscore spelling used in config files
            sub.add_argument("--" + prm.name, dest=prm.name, default=None,
                             help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON config file (unknown keys are rejected)")
    g.add_argument("--seed", help="unsigned 64-bit seed for stochastic steps")
    g.add_argument("--out", help="output directory (default ionmotion-out)")
    g.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    g.add_argument("--threads", help="worker threads; results do not depend on it")
    g.add_argument("--preset", help="figure preset: " + ", ".join(PRESETS))

    parser = argparse.ArgumentParser(
        prog="ionmotion",
        description="Trapped-ion motional state simulation, tomography and fitting.")
    parser.add_argument("--version", action="version", version=f"ionmotion {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    helps = {"state": "generate a motional state",
             "signal": "simulate a sideband or cat-fringe trace",
             "decohere": "white-noise decoherence ensemble",
             "fit": "fit a trace or population table",
             "propagate": "forced-oscillator propagation"}
    for name, text in helps.items():
        sub = subs.add_parser(name, parents=[common], help=text, allow_abbrev=False)
        _add_params(sub, COMMAND_PARAMS[name])
    tomo = subs.add_parser("tomo", parents=[common], help="tomography pipelines",
                           allow_abbrev=False)
    tomo.add_argument("action", choices=TOMO_ACTIONS)
    _add_params(tomo, COMMAND_PARAMS["tomo"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    label = args.command + (f" {args.action}" if args.command == "tomo" else "")
    try:
        run = Run(label, resolve(args))
        if args.command == "tomo":
            cmd_tomo(run, args.action)
        else:
            {"state": cmd_state, "signal": cmd_signal, "decohere": cmd_decohere,
             "fit": cmd_fit, "propagate": cmd_propagate}[args.command](run)
    except NumericalFailure as exc:
        run.finish()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StepSizeError, ConditioningError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
