"""Top Lyapunov exponent by renormalized tangent-vector growth, and the lambda-plus bound."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import noise as nz
from .flow import BLOWUP, Drift, FlowBlowUp, ergodic_run
from .measure import DensityEstimate, ball_mass_batch_means, histogram_from_samples
from .rng import stream

GRONWALL_TOL = 1e-3


class PreconditionError(ValueError):
    pass


def lambda_plus(drift: Drift, y) -> np.ndarray:
    """Largest eigenvalue of the symmetric part of DF(y); y has shape (..., d)."""
    J = np.asarray(drift.DF(np.asarray(y, dtype=float)))
    S = 0.5 * (J + np.swapaxes(J, -1, -2))
    d = S.shape[-1]
    if d == 1:
        return S[..., 0, 0]
    if d == 2:
        a, b, c = S[..., 0, 0], S[..., 0, 1], S[..., 1, 1]
        return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    return np.linalg.eigvalsh(S)[..., -1]


@dataclass
class LyapunovEstimate:
    lambda1_hat: float
    stderr: float
    T_total: float
    burn_in: float
    seeds: list
    dt: float
    renorm_period: int = 1
    n_blocks: int = 20
    block_means: Optional[np.ndarray] = field(default=None, repr=False)
    C3: float = math.inf

    @property
    def within_gronwall(self) -> bool:
        return self.lambda1_hat <= self.C3 + GRONWALL_TOL

    def upper(self, k: float = 3.0) -> float:
        return self.lambda1_hat + k * self.stderr


def _from_blocks(blocks: np.ndarray, drift: Drift, T, burn_in, seeds, dt, n_blocks) -> LyapunovEstimate:
    flat = blocks.ravel()
    se = float(flat.std(ddof=1) / math.sqrt(flat.size)) if flat.size > 1 else 0.0
    return LyapunovEstimate(float(flat.mean()), se, T, burn_in, list(seeds), dt, 1, n_blocks, blocks, drift.C3)


def estimate_top_lyapunov(drift: Drift, model: nz.NoiseModel, T: float, dt: float, burn_in: Optional[float] = None,
                          seed: int | Sequence[int] = 0, v0=None, x0=None, n_blocks: int = 20,
                          min_window: float = 100.0, probes: int = 0) -> LyapunovEstimate:
    """Birkhoff average of log tangent growth with per-step renormalization.

    ``seed`` may be a list, in which case replicates run in lock-step and the
    blocks of all replicates are pooled. ``probes > 0`` averages over that many
    random orthonormal initial vectors instead of ``v0``.
    """
    burn_in = 0.1 * T if burn_in is None else burn_in
    if T - burn_in < min_window:
        raise PreconditionError(f"post-burn-in window {T - burn_in:g} shorter than {min_window:g}")
    if n_blocks < 20:
        raise PreconditionError("batch means need at least 20 blocks")
    seeds = [seed] if np.isscalar(seed) else list(seed)
    if probes:
        base_seed = seeds[0]
        q, _ = np.linalg.qr(stream(base_seed, 2**32).standard_normal((drift.d, drift.d)))
        vs = [q[:, j] for j in range(min(probes, drift.d))]
    else:
        vs = [v0]
    blocks = []
    for v in vs:
        run = ergodic_run(drift, model, T, dt, burn_in, seeds, x0=x0, v0=v, stride=max(1, round(1.0 / dt)),
                          n_blocks=n_blocks)
        blocks.append(run.block_growth)
    return _from_blocks(np.concatenate(blocks), drift, T, burn_in, seeds, dt, n_blocks)


def lyapunov_bound(drift: Drift, density: DensityEstimate, R: float, grid_points: int = 401) -> float:
    """-C4 * pi(outside B(0,R)) + sup_{B(0,R)} lambda_plus * pi(B(0,R)).

    The sup is taken on a grid over the part of the density box inside the ball.
    """
    from .measure import mass_in_ball

    if R <= 0:
        raise ValueError("radius must be positive")
    if R < drift.R:
        raise ValueError(f"radius {R} is inside the monotonicity radius {drift.R}")
    far = float(np.sqrt(np.sum(np.max(np.abs(density.box), axis=1) ** 2)))
    if R > far:
        raise ValueError(f"radius {R} exceeds the density support box (farthest corner {far:.4g})")
    if not drift.eventually_monotone:
        raise ValueError("bound needs an eventually monotone drift")
    inside, _ = mass_in_ball(density, R)
    per_axis = max(5, int(round(grid_points ** (1.0 / density.d))))
    axes = [np.linspace(max(lo, -R), min(hi, R), per_axis) for lo, hi in density.box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, density.d)
    pts = pts[np.linalg.norm(pts, axis=-1) <= R]
    if drift.d == 1:
        pts = np.vstack([pts, [[0.0]]])
    sup_lp = float(np.max(lambda_plus(drift, pts)))
    if drift.lambda_plus_sup is not None:
        sup_lp = min(sup_lp, drift.lambda_plus_sup)
    return -drift.C4 * (1.0 - inside) + sup_lp * inside


# -- sweeps ----------------------------------------------------------------------

@dataclass
class SweepRow:
    sigma_norm: float
    lambda1: float
    stderr: float
    mass_in_ball: float
    mass_stderr: float
    bound: float
    estimate: Optional[LyapunovEstimate] = field(default=None, repr=False)


@dataclass
class SweepTable:
    H: float
    R: float
    rows: list

    def to_csv(self) -> str:
        lines = ["sigma_norm,lambda1,stderr,mass_in_ball,bound"]
        for r in self.rows:
            lines.append(",".join(f"{v:.17g}" for v in (r.sigma_norm, r.lambda1, r.stderr, r.mass_in_ball, r.bound)))
        return "\n".join(lines) + "\n"

    def mass_decrease_significant(self, k: float = 2.0) -> bool:
        a, b = self.rows[0], self.rows[-1]
        return a.mass_in_ball - b.mass_in_ball > k * math.hypot(a.mass_stderr, b.mass_stderr)

    def mass_monotone(self) -> bool:
        m = [r.mass_in_ball for r in self.rows]
        return all(x > y for x, y in zip(m, m[1:]))

    def bound_respected(self, k: float = 3.0) -> bool:
        return all(r.lambda1 <= r.bound + k * r.stderr for r in self.rows)

    def negative_at_largest(self, k: float = 3.0) -> bool:
        r = self.rows[-1]
        return r.lambda1 + k * r.stderr < 0


def _sweep_row(drift, H, sigma, T, dt, burn_in, seeds, R, sigma_class, x0, n_blocks):
    model = nz.NoiseModel(H, sigma, sigma_class=sigma_class)
    run = ergodic_run(drift, model, T, dt, burn_in, seeds, x0=x0, stride=max(1, round(0.1 / dt)),
                      n_blocks=n_blocks)
    est = _from_blocks(run.block_growth, drift, T, burn_in, seeds, dt, n_blocks)
    mass, mass_se = ball_mass_batch_means(run.samples, R, n_blocks)
    pooled = run.samples.reshape(-1, drift.d)
    lo = np.minimum(pooled.min(axis=0), -R) - 1e-9
    hi = np.maximum(pooled.max(axis=0), R) + 1e-9
    dens = histogram_from_samples(pooled, box=np.column_stack([lo, hi]))
    bound = lyapunov_bound(drift, dens, R)
    return SweepRow(model.sigma_norm, est.lambda1_hat, est.stderr, mass, mass_se, bound, est)


def sigma_sweep(drift: Drift, H: float, sigma_list, T: float, dt: float, seeds: Sequence[int], R: float = 2.0,
                burn_in: Optional[float] = None, sigma_class: Optional[nz.SigmaClass] = None, x0=None,
                n_blocks: int = 20, threads: int = 1) -> SweepTable:
    """lambda1, ball mass and bound for each noise matrix; rows sorted by |sigma|."""
    burn_in = 0.1 * T if burn_in is None else burn_in
    mats = [np.atleast_2d(np.asarray(s, dtype=float)) if np.ndim(s) else float(s) * np.eye(drift.d)
            for s in sigma_list]
    mats.sort(key=lambda m: np.linalg.norm(m, 2))
    args = [(drift, H, m, T, dt, burn_in, seeds, R, sigma_class, x0, n_blocks) for m in mats]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(lambda a: _sweep_row(*a), args))
    else:
        rows = [_sweep_row(*a) for a in args]
    return SweepTable(H, R, rows)


# -- local stability ---------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def drift_difference(drift: Drift, a: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """F(a + delta) - F(a) as [int_0^1 DF(a + s delta) ds] delta.

    Gauss-Legendre in s is exact for polynomial drifts up to degree 8 and keeps
    full relative precision when |delta| is far below the spacing of floats near |a|.
    """
    acc = np.zeros(np.broadcast_shapes(a.shape, delta.shape) + (drift.d,))
    for s, wgt in zip(_GL_NODES, _GL_WEIGHTS):
        acc = acc + wgt * drift.DF(a + s * delta)
    return np.einsum("...ij,...j->...i", acc, delta)


def separation_flow(drift: Drift, base: np.ndarray, deltas: np.ndarray, dt: float) -> np.ndarray:
    """|Phi(x + y) - Phi(x)| for each perturbation y, run under the same Heun scheme as the solver.

    ``base`` is x + sigma*omega at the nodes, shape (n+1, d); ``deltas`` is (P, d).
    The difference of two Heun trajectories is propagated directly.
    """
    n = base.shape[0] - 1
    z = np.zeros(drift.d)
    dl = np.array(deltas, dtype=float)
    out = np.empty((dl.shape[0], n + 1))
    out[:, 0] = np.linalg.norm(dl, axis=-1)
    y = base[0]
    f0 = drift.F(y)
    g0 = drift_difference(drift, y, dl)
    for k in range(n):
        pred = z + dt * f0 + base[k + 1]
        dpred = dl + dt * g0
        f1p = drift.F(pred)
        g1p = drift_difference(drift, pred, dpred)
        z = z + 0.5 * dt * (f0 + f1p)
        dl = dl + 0.5 * dt * (g0 + g1p)
        y = z + base[k + 1]
        big = max(float(np.max(np.abs(y))), float(np.max(np.abs(dl))))
        if not big <= BLOWUP:
            raise FlowBlowUp((k + 1) * dt, big)
        f0 = drift.F(y)
        g0 = drift_difference(drift, y, dl)
        out[:, k + 1] = np.linalg.norm(dl, axis=-1)
    return out


@dataclass
class StabilityReport:
    nu: float
    initial: float
    sup_weighted: float
    ratio: float
    flagged: bool
    per_probe_sup: np.ndarray = field(repr=False)


def local_stability_probe(drift: Drift, model: nz.NoiseModel, x, radius: float, nu: float, T: float, seed: int,
                          prior: LyapunovEstimate, dt: float = 0.01, n_probes: int = 8,
                          flag_factor: float = 10.0) -> StabilityReport:
    """sup_t e^{nu t} |Phi(x + y) - Phi(x)| over probes |y| = radius, driven by one shared noise path."""
    if not prior.lambda1_hat + prior.stderr < -nu:
        raise PreconditionError(f"need lambda1 + stderr < -nu; got {prior.lambda1_hat:.4g} + {prior.stderr:.3g}"
                                f" vs nu = {nu:.4g}")
    if nu <= 0:
        raise PreconditionError("nu must be positive")
    d = drift.d
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        dirs = stream(seed, 2**32 + 1).standard_normal((n_probes, d))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    n = int(round(T / dt))
    w = nz.fbm_batch(model.H, n, dt, d, stream(seed))
    base = x + w.T @ model.sigma.T
    sep = separation_flow(drift, base, radius * dirs, dt)      # (probes, n+1)
    weighted = np.exp(nu * dt * np.arange(n + 1)) * sep
    per_probe = weighted.max(axis=1)
    init = float(sep[:, 0].max())
    sup = float(per_probe.max())
    ratio = sup / init
    return StabilityReport(nu, init, sup, ratio, ratio > flag_factor, per_probe)
