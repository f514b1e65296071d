"""Flat ``key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment, no sections or nesting.
Lists are comma separated; matrices separate rows with ``;``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .. import flow
from ..noise import NoiseModel
from ..paths import GRID_RTOL
from ..rng import stream

KINDS = ("fbm", "flow", "lyapunov", "density", "bridge", "sweep")
DRIFTS = ("double_well", "contraction", "rotational", "linear", "constant", "zero")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _float(key, text):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    return v


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def _floats(key, text):
    return [_float(key, t) for t in text.split(",") if t.strip()]


def _ints(key, text):
    return [_int(key, t.strip()) for t in text.split(",") if t.strip()]


def _matrix(key, text):
    rows = [_floats(key, r) for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError(key, "matrix rows must be non-empty and of equal length")
    return rows


# key -> (parser, description); the README key table is generated from this schema
SCHEMA: dict[str, tuple[Callable, str]] = {
    "kind": (str, "experiment kind: " + " | ".join(KINDS)),
    "drift": (str, "drift name: " + " | ".join(DRIFTS) + " (default double_well)"),
    "drift_a": (_float, "contraction rate a for F(y) = -a y"),
    "drift_R": (_float, "monotonicity radius of the double-well drift"),
    "drift_matrix": (_matrix, "matrix A of the linear drift F(y) = A y"),
    "drift_c": (_floats, "value of the constant drift"),
    "d": (_int, "state dimension when the drift does not fix it"),
    "H": (_float, "Hurst parameter in (0, 1)"),
    "sigma": (_float, "scalar noise intensity (sigma * identity)"),
    "sigma_matrix": (_matrix, "full noise matrix, overrides sigma"),
    "sigma_list": (_floats, "scalar intensities for kind = sweep"),
    "T": (_float, "time horizon"),
    "n": (_int, "number of grid steps; sets T = n * dt when T is absent"),
    "dt": (_float, "grid step"),
    "burn_in": (_float, "discarded initial time for long runs"),
    "t0": (_float, "bridge horizon in (0, 1]"),
    "seeds": (_ints, "explicit replicate seeds"),
    "n_seeds": (_int, "replicate count when seeds are derived from master_seed"),
    "master_seed": (_int, "master seed for derived replicate seeds"),
    "x0": (_floats, "initial state (default 0)"),
    "R": (_float, "ball radius for masses and the Lyapunov bound"),
    "bins": (_int, "histogram bins per axis (default: Freedman-Diaconis)"),
    "stride": (_int, "thinning stride of stored states"),
    "n_blocks": (_int, "batch-means blocks"),
    "n_samples": (_int, "bridge replicates per grid point"),
    "y_min": (_float, "left end of the bridge density grid"),
    "y_max": (_float, "right end of the bridge density grid"),
    "y_points": (_int, "number of bridge density grid points"),
    "out": (str, "output directory"),
    "tol_integral": (_float, "allowed |integral - 1| of a bridge density (default 0.02)"),
    "tol_sigmas": (_float, "confidence multiplier for statistical checks (default 3)"),
    "tol_geweke": (_float, "largest allowed |Geweke z| of a long run (default 4)"),
}

DEFAULTS = {
    "drift": "double_well", "burn_in": 0.0, "t0": 0.25, "R": 2.0, "stride": 10, "n_blocks": 20,
    "n_samples": 2000, "y_points": 81, "tol_integral": 0.02, "tol_sigmas": 3.0, "tol_geweke": 4.0,
    "master_seed": 0,
}


def derive_seeds(master_seed: int, count: int) -> list[int]:
    """Replicate seeds drawn from the counter-based stream (master_seed, i)."""
    return [int(stream(master_seed, i).integers(2**62)) for i in range(count)]


SEED_SCHEME = "replicate i uses seed = Philox(master_seed, i).integers(2**62) unless seeds are listed"


@dataclass
class ExperimentConfig:
    kind: str
    H: float
    drift: str = "double_well"
    drift_params: dict = field(default_factory=dict)
    d: int = 1
    sigma: list = field(default_factory=lambda: [[1.0]])
    sigma_list: Optional[list] = None
    T: float = 1.0
    dt: float = 0.01
    burn_in: float = 0.0
    t0: float = 0.25
    seeds: list = field(default_factory=lambda: [0])
    x0: Optional[list] = None
    R: float = 2.0
    bins: Optional[int] = None
    stride: int = 10
    n_blocks: int = 20
    n_samples: int = 2000
    y_grid: Optional[tuple] = None
    y_points: int = 81
    out: Optional[str] = None
    tolerances: dict = field(default_factory=dict)

    def make_drift(self) -> flow.Drift:
        p = self.drift_params
        if self.drift == "double_well":
            return flow.double_well(self.d, p.get("R", math.sqrt(2.0)))
        if self.drift == "contraction":
            return flow.contraction(p.get("a", 1.0), self.d)
        if self.drift == "rotational":
            return flow.rotational()
        if self.drift == "linear":
            return flow.linear(p["A"])
        if self.drift == "constant":
            return flow.constant(p["c"])
        return flow.zero(self.d)

    def noise_model(self, sigma=None) -> NoiseModel:
        return NoiseModel(self.H, np.asarray(self.sigma if sigma is None else sigma, dtype=float))

    def to_dict(self) -> dict:
        return asdict(self)


def parse_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in raw:
            raise ConfigError(key, "given twice")
        raw[key] = value
    return raw


def _on_grid(key: str, t: float, dt: float):
    k = round(t / dt)
    if abs(k * dt - t) > GRID_RTOL * max(abs(t), dt):
        raise ConfigError(key, f"{t} is not a multiple of dt = {dt}")


def build_config(raw: dict) -> ExperimentConfig:
    """Validate raw string values and produce a config; every error names its key."""
    vals = dict(DEFAULTS)
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        vals[key] = SCHEMA[key][0](key, text) if SCHEMA[key][0] is not str else text
    if "kind" not in vals:
        raise ConfigError("kind", "missing")
    if vals["kind"] not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    if vals["drift"] not in DRIFTS:
        raise ConfigError("drift", f"must be one of {', '.join(DRIFTS)}")
    if "H" not in vals:
        raise ConfigError("H", "missing")
    if not 0.0 < vals["H"] < 1.0:
        raise ConfigError("H", "must lie in (0, 1)")

    params, d = {}, vals.get("d", 1)
    drift = vals["drift"]
    if drift == "contraction":
        params["a"] = vals.get("drift_a", 1.0)
    elif drift == "double_well":
        params["R"] = vals.get("drift_R", math.sqrt(2.0))
        if params["R"] <= 1:
            raise ConfigError("drift_R", "must exceed 1")
    elif drift == "rotational":
        d = 2
    elif drift == "linear":
        if "drift_matrix" not in vals:
            raise ConfigError("drift_matrix", "required for the linear drift")
        params["A"] = vals["drift_matrix"]
        d = len(params["A"])
        if len(params["A"][0]) != d:
            raise ConfigError("drift_matrix", "must be square")
    elif drift == "constant":
        if "drift_c" not in vals:
            raise ConfigError("drift_c", "required for the constant drift")
        params["c"] = vals["drift_c"]
        d = len(params["c"])
    if "d" in vals and vals["d"] != d:
        raise ConfigError("d", f"drift {drift} fixes d = {d}")
    if d < 1:
        raise ConfigError("d", "must be positive")

    if "sigma_matrix" in vals:
        sigma = vals["sigma_matrix"]
        if len(sigma) != d or len(sigma[0]) != d:
            raise ConfigError("sigma_matrix", f"must be {d} x {d}")
        sv = np.linalg.svd(np.asarray(sigma), compute_uv=False)
        if sv[-1] <= 1e-14 * max(sv[0], 1.0):
            raise ConfigError("sigma_matrix", "must be invertible")
    else:
        s = vals.get("sigma", 1.0)
        if s <= 0:
            raise ConfigError("sigma", "must be positive")
        sigma = (s * np.eye(d)).tolist()
    sigma_list = vals.get("sigma_list")
    if vals["kind"] == "sweep":
        if not sigma_list:
            raise ConfigError("sigma_list", "required for kind = sweep")
        if any(s <= 0 for s in sigma_list):
            raise ConfigError("sigma_list", "intensities must be positive")

    if "dt" not in vals:
        raise ConfigError("dt", "missing")
    dt = vals["dt"]
    if dt <= 0:
        raise ConfigError("dt", "must be positive")
    if "T" in vals:
        T = vals["T"]
    elif "n" in vals:
        if vals["n"] < 1:
            raise ConfigError("n", "must be positive")
        T = vals["n"] * dt
    else:
        raise ConfigError("T", "missing (give T or n)")
    if T <= 0:
        raise ConfigError("T", "must be positive")
    if dt > T:
        raise ConfigError("dt", f"dt = {dt} exceeds T = {T}")
    _on_grid("T", T, dt)
    burn_in = vals["burn_in"]
    if not 0.0 <= burn_in < T:
        raise ConfigError("burn_in", "must lie in [0, T)")
    _on_grid("burn_in", burn_in, dt)
    t0 = vals["t0"]
    if vals["kind"] == "bridge":
        if not 0.0 < t0 <= 1.0:
            raise ConfigError("t0", "must lie in (0, 1]")
        _on_grid("t0", t0, dt)

    if "seeds" in vals:
        seeds = vals["seeds"]
        if "n_seeds" in raw:
            raise ConfigError("n_seeds", "give either seeds or n_seeds, not both")
    else:
        count = vals.get("n_seeds", 1)
        if count < 1:
            raise ConfigError("n_seeds", "must be positive")
        seeds = derive_seeds(vals["master_seed"], count)
    if not seeds:
        raise ConfigError("seeds", "empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "must be distinct")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds", "must be non-negative")

    x0 = vals.get("x0")
    if x0 is not None and len(x0) != d:
        raise ConfigError("x0", f"needs {d} components")
    for key in ("stride", "n_blocks", "n_samples", "y_points"):
        if vals[key] < 1:
            raise ConfigError(key, "must be positive")
    if "bins" in vals and vals["bins"] < 1:
        raise ConfigError("bins", "must be positive")
    if vals["R"] <= 0:
        raise ConfigError("R", "must be positive")
    y_grid = None
    if vals["kind"] == "bridge":
        if d != 1 and ("y_min" in vals or "y_max" in vals):
            raise ConfigError("y_min", "an explicit grid is supported for d = 1 only")
        if "y_min" in vals or "y_max" in vals:
            lo, hi = vals.get("y_min"), vals.get("y_max")
            if lo is None or hi is None:
                raise ConfigError("y_min" if lo is None else "y_max", "give both ends of the grid")
            if not lo < hi:
                raise ConfigError("y_max", "must exceed y_min")
            y_grid = (lo, hi, vals["y_points"])
    tolerances = {k: vals[k] for k in ("tol_integral", "tol_sigmas", "tol_geweke")}
    if any(v <= 0 for v in tolerances.values()):
        raise ConfigError(next(k for k, v in tolerances.items() if v <= 0), "must be positive")

    return ExperimentConfig(
        kind=vals["kind"], H=vals["H"], drift=drift, drift_params=params, d=d, sigma=sigma,
        sigma_list=sigma_list, T=T, dt=dt, burn_in=burn_in, t0=t0, seeds=list(seeds), x0=x0,
        R=vals["R"], bins=vals.get("bins"), stride=vals["stride"], n_blocks=vals["n_blocks"],
        n_samples=vals["n_samples"], y_grid=y_grid, y_points=vals["y_points"], out=vals.get("out"), tolerances=tolerances,
    )


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None,
                default_kind: Optional[str] = None) -> ExperimentConfig:
    """File values, then overrides; ``default_kind`` applies only when neither sets ``kind``."""
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = parse_text(fh.read())
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    for k, v in (overrides or {}).items():
        if k not in SCHEMA:
            raise ConfigError(k, "unknown key")
        raw[k] = str(v)
    if default_kind is not None:
        raw.setdefault("kind", default_kind)
    return build_config(raw)
