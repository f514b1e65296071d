"""Execute one experiment config and persist its outputs under a manifest.

Outputs are computed in memory first and written only after every replicate
finished, so a failed run leaves no partial files behind.
"""
from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path as FsPath
from typing import Optional

import numpy as np

from .. import __version__
from .. import bridge as br
from .. import flow, lyapunov as ly, measure as ms, noise as nz
from ..paths import Path, sidecar
from ..rng import SPLIT_SCHEME
from .config import SEED_SCHEME, ConfigError, ExperimentConfig
from .manifest import MANIFEST_NAME, CheckResult, RunManifest, atomic_write, inventory, write_manifest

THREADS_ENV = "FRACLYAP_THREADS"
MIN_LYAPUNOV_WINDOW = 100.0
MIN_REFINEMENT_RATIO = 2.0  # first order at least


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError("--threads", "must be positive")
    return threads


def _map(fn, items, threads: int) -> list:
    """Order-preserving map; results never depend on the thread count."""
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def _prepare_out_dir(out: Optional[str], kind: str) -> FsPath:
    target = FsPath(out if out else f"fraclyap-{kind}")
    if target.exists():
        if not target.is_dir():
            raise ConfigError("out", f"{target} exists and is not a directory")
        if any(target.iterdir()):
            raise ConfigError("out", f"{target} is not empty; every output directory holds exactly one run")
    return target


def _x0(cfg: ExperimentConfig) -> np.ndarray:
    return np.zeros(cfg.d) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)


def _run_fbm(cfg, threads):
    model = cfg.noise_model()
    paths = _map(lambda sd: nz.sample_fbm(model, cfg.T, cfg.dt, sd), cfg.seeds, threads)
    files = {}
    for sd, p in zip(cfg.seeds, paths):
        files[f"fbm_seed{sd}.csv"] = p.to_csv()
        files[f"fbm_seed{sd}.json"] = sidecar({"H": cfg.H, "dt": cfg.dt, "T": cfg.T, "seed": sd,
                                                "rng": SPLIT_SCHEME, "tail_bound": p.tail_bound})
    finite = all(np.all(np.isfinite(p.values)) for p in paths)
    return files, [CheckResult("paths finite", finite)]


def _run_flow(cfg, threads):
    model, drift, x0 = cfg.noise_model(), cfg.make_drift(), _x0(cfg)

    def one(sd):
        noise = nz.sample_fbm(model, cfg.T, cfg.dt, sd)
        tr = flow.solve_flow(drift, model, x0, noise)
        coarse = None
        if noise.n % 2 == 0:
            coarse = flow.solve_flow(drift, model, x0, Path(2 * noise.dt, noise.values[::2]))
        return tr, coarse

    results = _map(one, cfg.seeds, threads)
    files, checks = {}, []
    for sd, (tr, coarse) in zip(cfg.seeds, results):
        files[f"flow_seed{sd}.csv"] = tr.path.to_csv()
        files[f"flow_seed{sd}.json"] = sidecar({"H": cfg.H, "dt": cfg.dt, "T": cfg.T, "seed": sd, "x0": x0,
                                                 "drift": drift.name, "sigma": model.sigma, "steps": tr.steps})
        # the trapezoid defect of Heun is O(dt^2); halving the step on the same noise must shrink it
        r = flow.integral_residual(drift, model, tr)
        if coarse is None:
            checks.append(CheckResult(f"integral form seed {sd}", np.isfinite(r), r, None,
                                      "odd step count, refinement check skipped"))
            continue
        r2 = flow.integral_residual(drift, model, coarse)
        ratio = r2 / r if r > 0 else math.inf
        checks.append(CheckResult(f"integral form converges seed {sd}", ratio >= MIN_REFINEMENT_RATIO or r2 < 1e-12,
                                  ratio, MIN_REFINEMENT_RATIO, f"residual {r:.3e} at dt, {r2:.3e} at 2 dt"))
    return files, checks


def _require_window(cfg):
    if cfg.T - cfg.burn_in < MIN_LYAPUNOV_WINDOW:
        raise ConfigError("T", f"T - burn_in must be at least {MIN_LYAPUNOV_WINDOW:g} for Lyapunov estimates")


def _run_lyapunov(cfg, threads):
    _require_window(cfg)
    model, drift, x0 = cfg.noise_model(), cfg.make_drift(), _x0(cfg)
    est = lambda seed: ly.estimate_top_lyapunov(drift, model, cfg.T, cfg.dt, cfg.burn_in, seed=seed, x0=x0,
                                                n_blocks=cfg.n_blocks)
    per_seed = _map(est, cfg.seeds, threads)
    pooled = est(list(cfg.seeds)) if len(cfg.seeds) > 1 else per_seed[0]
    lines = ["seed,lambda1,stderr,C3"]
    for sd, e in zip(cfg.seeds, per_seed):
        lines.append(f"{sd},{e.lambda1_hat:.17g},{e.stderr:.17g},{e.C3:.17g}")
    lines.append(f"pooled,{pooled.lambda1_hat:.17g},{pooled.stderr:.17g},{pooled.C3:.17g}")
    k = cfg.tolerances["tol_sigmas"]
    checks = [CheckResult(f"Gronwall ceiling seed {sd}", e.within_gronwall, e.lambda1_hat, e.C3 + ly.GRONWALL_TOL)
              for sd, e in zip(cfg.seeds, per_seed)]
    for (sa, a), (sb, b) in itertools.combinations(zip(cfg.seeds, per_seed), 2):
        z = abs(a.lambda1_hat - b.lambda1_hat) / max(math.hypot(a.stderr, b.stderr), 1e-300)
        checks.append(CheckResult(f"seeds {sa} and {sb} agree", z <= k, z, k))
    return {"lyapunov.csv": "\n".join(lines) + "\n"}, checks


def _run_density(cfg, threads):
    drift = cfg.make_drift()
    if not drift.eventually_monotone:
        raise ConfigError("drift", f"{drift.name} in d = {drift.d} is not eventually monotone")
    model = cfg.noise_model()
    est = ms.estimate_invariant_density(drift, model, cfg.T, cfg.dt, cfg.burn_in, bins=cfg.bins, seeds=cfg.seeds,
                                        stride=cfg.stride, x0=cfg.x0)
    gz = est.provenance["geweke_z_max"]
    mass, se = ms.mass_in_ball(est, cfg.R)
    summary = est.summary() | {"mass_in_ball": mass, "mass_stderr": se, "R": cfg.R}
    checks = [CheckResult("Geweke stationarity", abs(gz) <= cfg.tolerances["tol_geweke"], abs(gz),
                          cfg.tolerances["tol_geweke"]),
              CheckResult("histogram mass", abs(est.total_mass() - 1.0) <= 1e-9, abs(est.total_mass() - 1.0), 1e-9)]
    return {"density.csv": est.to_csv(), "density.json": sidecar(summary)}, checks


def _bridge_grid(cfg, spec, drift, x0):
    if cfg.y_grid is not None:
        lo, hi, m = cfg.y_grid
        return np.linspace(lo, hi, m)[:, None]
    half = 6.0 * math.sqrt(spec.endpoint_variance) + cfg.t0 * float(np.linalg.norm(drift.F(x0)))
    axes = [np.linspace(c - half, c + half, cfg.y_points if cfg.d == 1 else min(cfg.y_points, 41)) for c in x0]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cfg.d)


def _grid_integral(Y: np.ndarray, values: np.ndarray) -> float:
    axes = [np.unique(Y[:, i]) for i in range(Y.shape[1])]
    v = values.reshape([a.size for a in axes])
    for a in reversed(axes):
        v = np.trapezoid(v, a, axis=-1)
    return float(v)


def _run_bridge(cfg, threads):
    model, drift, x0 = cfg.noise_model(), cfg.make_drift(), _x0(cfg)
    spec = br.BridgeSpec(np.zeros(cfg.d), cfg.t0, cfg.H, cfg.dt)
    l = Path(cfg.dt, np.tile(x0, (spec.n + 1, 1)))
    Y = _bridge_grid(cfg, spec, drift, x0)
    dens = br.transition_density(drift, model, l, Y, spec, cfg.n_samples, cfg.seeds[0])
    integral = _grid_integral(Y, dens.values)
    tol = cfg.tolerances["tol_integral"]
    bulk = dens.values >= br.BULK_FRACTION * dens.values.max()
    checks = [CheckResult("grid integral", abs(integral - 1.0) <= tol, integral, tol),
              CheckResult("heavy-tail guard on the bulk", not np.any(dens.heavy_tail & bulk),
                          int(np.sum(dens.heavy_tail & bulk)), 0)]
    meta = dens.meta | {"t0": cfg.t0, "dt": cfg.dt, "x0": x0, "integral": integral}
    return {"bridge_density.csv": dens.to_csv(), "bridge_density.json": sidecar(meta)}, checks


def _run_sweep(cfg, threads):
    _require_window(cfg)
    drift = cfg.make_drift()
    if not drift.eventually_monotone:
        raise ConfigError("drift", f"{drift.name} in d = {drift.d} is not eventually monotone")
    direction = np.asarray(cfg.sigma, dtype=float)
    direction = direction / np.linalg.norm(direction, 2)
    mats = [s * direction for s in cfg.sigma_list]
    tab = ly.sigma_sweep(drift, cfg.H, mats, cfg.T, cfg.dt, cfg.seeds, R=cfg.R, burn_in=cfg.burn_in,
                         x0=cfg.x0, n_blocks=cfg.n_blocks, threads=threads)
    k = cfg.tolerances["tol_sigmas"]
    top = tab.rows[-1]
    checks = [
        CheckResult("lambda1 negative at the largest intensity", tab.negative_at_largest(k), top.lambda1 + k * top.stderr, 0.0),
        CheckResult("ball mass decreases", tab.mass_decrease_significant(2.0)),
        CheckResult("lambda1 below the bound", tab.bound_respected(k)),
    ]
    return {"sweep.csv": tab.to_csv()}, checks


RUNNERS = {"fbm": _run_fbm, "flow": _run_flow, "lyapunov": _run_lyapunov, "density": _run_density,
           "bridge": _run_bridge, "sweep": _run_sweep}


def run(cfg: ExperimentConfig, out: Optional[str] = None, threads: Optional[int] = None) -> RunManifest:
    """Run ``cfg``, write its files and manifest under ``out`` (or ``cfg.out``) and return the manifest."""
    threads = resolve_threads(threads)
    target = _prepare_out_dir(out or cfg.out, cfg.kind)
    start = time.perf_counter()
    files, checks = RUNNERS[cfg.kind](cfg, threads)
    wall = time.perf_counter() - start
    target.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        atomic_write(target / name, text)
    manifest = RunManifest(
        config=cfg.to_dict() | {"out": str(target)}, version=__version__, wall_time=wall,
        checks=[c.__dict__ for c in checks], files=inventory(target, files),
        seed_scheme=f"{SEED_SCHEME}; streams: {SPLIT_SCHEME}", threads=threads,
    )
    assert MANIFEST_NAME not in files
    write_manifest(target, manifest)
    return manifest
