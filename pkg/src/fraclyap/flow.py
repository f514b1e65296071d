"""Pathwise solver for dY = F(Y) dt + sigma dB^H, tangent flow, cocycle checks.

The solver integrates the C^1 remainder Z = Y - x - sigma*omega with Heun
steps, so the rough noise never enters a difference quotient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import noise as nz
from .paths import Path, PastPath, steps_on_grid

BLOWUP = 1e8


class FlowBlowUp(FloatingPointError):
    def __init__(self, time: float, value: float):
        super().__init__(f"|state| = {value:.3e} exceeded {BLOWUP:.0e} at t = {time:.6g}")
        self.time = time


# -- drifts -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Drift:
    """Drift field with Jacobian and its one-sided growth constants.

    ``F`` maps (..., d) -> (..., d) and ``DF`` maps (..., d) -> (..., d, d).
    ``C1 = inf`` marks a drift with no global dissipativity bound.
    """
    name: str
    d: int
    F: Callable[[np.ndarray], np.ndarray]
    DF: Callable[[np.ndarray], np.ndarray]
    C1: float
    C2: float
    C3: float
    C4: float
    C_F: float
    N: float = 1.0
    R: float = 0.0
    has_bounded_DF: bool = True
    eventually_monotone: bool = False
    lambda_plus_sup: Optional[float] = None
    odd: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, y):
        return self.F(np.asarray(y, dtype=float))


def linear(A) -> Drift:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    lmax = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
    stable = lmax < 0
    return Drift(
        name="linear", d=d,
        F=lambda y: y @ A.T,
        DF=lambda y: np.broadcast_to(A, np.shape(y)[:-1] + (d, d)),
        C1=0.0 if stable else math.inf, C2=-lmax if stable else 0.0,
        C3=max(lmax, 0.0), C4=-lmax if stable else 0.0,
        C_F=float(np.linalg.norm(A, 2)), N=1.0, R=0.0,
        has_bounded_DF=True, eventually_monotone=stable,
        lambda_plus_sup=lmax, odd=True, params={"A": A.tolist()},
    )


def contraction(a: float, d: int = 1) -> Drift:
    """F(y) = -a y."""
    return linear(-a * np.eye(d))


def double_well(d: int = 1, R: float = math.sqrt(2.0)) -> Drift:
    """F(y) = y - y**3 per coordinate."""
    if R <= 1:
        raise ValueError("monotonicity radius must exceed 1")
    # per coordinate: <dF, D> <= D^2 (1 - D^2/4) <= 4 - D^2 and <= D^2
    # for |a|, |b| >= R (d = 1): a^2 + ab + b^2 >= R^2
    return Drift(
        name="double_well", d=d,
        F=lambda y: y - y * y * y,
        DF=lambda y: _diag(1.0 - 3.0 * y * y),
        C1=4.0 * d, C2=1.0, C3=1.0, C4=R * R - 1.0 if d == 1 else 0.0,
        C_F=1.0, N=3.0, R=R,
        has_bounded_DF=False, eventually_monotone=(d == 1),
        lambda_plus_sup=1.0, odd=True, params={"R": R},
    )


ROTATION_A = np.array([[-1.0, 2.0], [0.0, -1.0]])


def rotational(R: float = 1.0) -> Drift:
    """F(y) = A y - |y|^2 y in the plane with a non-normal A."""
    A = ROTATION_A

    def F(y):
        return y @ A.T - np.sum(y * y, axis=-1, keepdims=True) * y

    def DF(y):
        r2 = np.sum(y * y, axis=-1)[..., None, None]
        return A - r2 * np.eye(2) - 2.0 * y[..., :, None] * y[..., None, :]

    # <|a|^2 a - |b|^2 b, a - b> >= (|a|^2 + |b|^2) |a - b|^2 / 2
    return Drift(
        name="rotational", d=2, F=F, DF=DF,
        C1=1.0, C2=1.0, C3=0.0, C4=R * R, C_F=float(np.linalg.norm(A, 2)), N=3.0, R=R,
        has_bounded_DF=False, eventually_monotone=True, lambda_plus_sup=0.0, odd=True,
        params={"R": R},
    )


def constant(c) -> Drift:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = c.size
    return Drift(
        name="constant", d=d,
        F=lambda y: np.broadcast_to(c, np.shape(y)).copy(),
        DF=lambda y: np.zeros(np.shape(y)[:-1] + (d, d)),
        C1=0.0, C2=0.0, C3=0.0, C4=0.0, C_F=float(np.linalg.norm(c)), N=1.0,
        has_bounded_DF=True, eventually_monotone=False, lambda_plus_sup=0.0,
        odd=bool(np.all(c == 0)), params={"c": c.tolist()},
    )


def zero(d: int = 1) -> Drift:
    return constant(np.zeros(d))


def _diag(v):
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


LIBRARY = {
    "linear": linear,
    "contraction": contraction,
    "double_well": double_well,
    "rotational": rotational,
    "constant": constant,
    "zero": zero,
}


def rescaled_drift(drift: Drift, sigma_norm: float) -> Drift:
    """F^s(xi) = F(s xi) / s, the drift of Z = Y / s."""
    s = float(sigma_norm)
    return Drift(
        name=f"{drift.name}/rescaled", d=drift.d,
        F=lambda y: drift.F(s * np.asarray(y)) / s,
        DF=lambda y: drift.DF(s * np.asarray(y)),
        C1=drift.C1 / s**2, C2=drift.C2, C3=drift.C3, C4=drift.C4,
        C_F=drift.C_F * max(s, 1.0) ** drift.N / s, N=drift.N, R=drift.R / s,
        has_bounded_DF=drift.has_bounded_DF, eventually_monotone=drift.eventually_monotone,
        lambda_plus_sup=drift.lambda_plus_sup, odd=drift.odd,
        params=dict(drift.params, rescale=s),
    )


@dataclass
class DriftAudit:
    one_sided_ok: bool
    monotone_ok: bool
    jacobian_ok: bool
    worst_one_sided: float
    worst_monotone: float
    worst_jacobian_rel: float

    @property
    def ok(self) -> bool:
        return self.one_sided_ok and self.monotone_ok and self.jacobian_ok


def audit_drift(drift: Drift, rng: np.random.Generator, n: int = 2000, box: float = 4.0) -> DriftAudit:
    d = drift.d
    a = rng.uniform(-box, box, (n, d))
    b = rng.uniform(-box, box, (n, d))
    delta = b - a
    inner = np.sum((drift.F(b) - drift.F(a)) * delta, axis=-1)
    sq = np.sum(delta**2, axis=-1)
    cap = np.minimum(drift.C1 - drift.C2 * sq, drift.C3 * sq)
    excess = inner - cap
    tol = 1e-9 * (1.0 + np.abs(inner))
    one_sided = float(np.max(excess / (1.0 + np.abs(inner))))

    mono = -math.inf
    if drift.eventually_monotone:
        # both points outside the monotonicity ball
        dirs = rng.standard_normal((2, n, d))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        rad = drift.R + rng.exponential(1.0, (2, n, 1))
        p, q = dirs[0] * rad[0], dirs[1] * rad[1]
        dl = q - p
        val = np.sum((drift.F(q) - drift.F(p)) * dl, axis=-1) + drift.C4 * np.sum(dl**2, axis=-1)
        mono = float(np.max(val / (1.0 + np.abs(val))))

    y = rng.uniform(-box, box, (200, d))
    J = drift.DF(y)
    fd = np.empty_like(J)
    for k in range(d):
        h = 1e-6 * np.maximum(1.0, np.abs(y[:, k]))
        e = np.zeros_like(y)
        e[:, k] = h
        fd[:, :, k] = (drift.F(y + e) - drift.F(y - e)) / (2 * h[:, None])
    rel = np.linalg.norm(fd - J, axis=(1, 2)) / np.maximum(np.linalg.norm(J, axis=(1, 2)), 1.0)
    worst_j = float(rel.max())
    return DriftAudit(
        one_sided_ok=bool(np.all(excess <= tol)), monotone_ok=mono <= 1e-9,
        jacobian_ok=worst_j <= 1e-5, worst_one_sided=one_sided,
        worst_monotone=mono, worst_jacobian_rel=worst_j,
    )


# -- solver --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    path: Path
    driving_noise: Path
    x0: np.ndarray
    steps: int
    max_abs_F: float


def heun_remainder(F, x0: np.ndarray, shift: np.ndarray, dt: float, t0: float = 0.0) -> np.ndarray:
    """Heun steps for Z' = F(Z + x0 + shift(t)), Z(0) = 0, returning Y = Z + x0 + shift.

    ``shift`` holds sigma*omega at grid nodes with time on axis -2, so
    batches of shape (..., n+1, d) are integrated in lock-step.
    """
    n = shift.shape[-2] - 1
    base = x0[..., None, :] + shift
    Y = np.empty_like(base)
    z = np.zeros(base.shape[:-2] + base.shape[-1:])
    Y[..., 0, :] = base[..., 0, :]
    f0 = F(Y[..., 0, :])
    for k in range(n):
        pred = z + dt * f0
        f1p = F(pred + base[..., k + 1, :])
        z = z + 0.5 * dt * (f0 + f1p)
        y = z + base[..., k + 1, :]
        big = np.max(np.abs(y))
        if not big <= BLOWUP:
            raise FlowBlowUp(t0 + (k + 1) * dt, float(big))
        Y[..., k + 1, :] = y
        f0 = F(y)
    return Y


def solve_flow(drift: Drift, model: nz.NoiseModel, x0, noise: Path, dt: Optional[float] = None) -> Trajectory:
    dt = noise.dt if dt is None else dt
    if abs(dt - noise.dt) > 1e-12 * dt:
        raise ValueError(f"noise grid step {noise.dt} does not match dt = {dt}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != drift.d or noise.d != drift.d or model.d != drift.d:
        raise ValueError("dimension mismatch between drift, noise model, x0 and noise path")
    shift = noise.values @ model.sigma.T
    Y = heun_remainder(drift.F, x0, shift, dt)
    maxF = float(np.max(np.linalg.norm(drift.F(Y), axis=-1)))
    return Trajectory(Path(dt, Y), noise, x0, noise.n, maxF)


def integral_residual(drift: Drift, model: nz.NoiseModel, traj: Trajectory) -> float:
    """sup_t |Phi(t) - x - sigma*omega(t) - int_0^t F(Phi)| with trapezoid quadrature."""
    Y = traj.path.values
    f = drift.F(Y)
    quad = np.zeros_like(Y)
    np.cumsum(0.5 * traj.path.dt * (f[1:] + f[:-1]), axis=0, out=quad[1:])
    resid = Y - traj.x0 - traj.driving_noise.values @ model.sigma.T - quad
    return float(np.max(np.linalg.norm(resid, axis=-1)))


# -- tangent flow ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TangentTrajectory:
    matrices: np.ndarray
    log_norm_running: np.ndarray
    dt: float


def tangent_step(M, A0, A1, dt):
    """Heun step of M' = A(t) M along a frozen trajectory."""
    k0 = A0 @ M
    return M + 0.5 * dt * (k0 + A1 @ (M + dt * k0))


def tangent_flow(drift: Drift, traj: Trajectory) -> TangentTrajectory:
    Y = traj.path.values
    n, d = Y.shape[0] - 1, Y.shape[1]
    A = drift.DF(Y)
    Ms = np.empty((n + 1, d, d))
    Ms[0] = np.eye(d)
    dt = traj.path.dt
    for k in range(n):
        Ms[k + 1] = tangent_step(Ms[k], A[k], A[k + 1], dt)
    if not np.all(np.isfinite(Ms)):
        raise FloatingPointError("tangent flow produced non-finite entries")
    logn = np.log(np.linalg.norm(Ms, ord=2, axis=(1, 2)))
    return TangentTrajectory(Ms, logn, dt)


# -- cocycle ----------------------------------------------------------------------

def driving_fbm(model: nz.NoiseModel, pair, T: float) -> Path:
    om, op = pair
    return nz.mvn_fbm(om, op, model.H, T)


def cocycle_residual(drift: Drift, model: nz.NoiseModel, x, omega_minus: PastPath, omega_plus: PastPath,
                     t: float, s: float) -> float:
    """|Phi^{t+s}(x) - Phi^s_{shifted}(Phi^t(x))| with both noises built from the Wiener pair."""
    dt = omega_plus.dt
    steps_on_grid(t, dt)
    steps_on_grid(s, dt)
    if t + s > omega_plus.T_past + 1e-12:
        raise ValueError("t + s exceeds the future horizon")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if s == 0:
        return 0.0
    full = driving_fbm(model, (omega_minus, omega_plus), t + s)
    lhs = solve_flow(drift, model, x, full).path.values[-1]
    if t == 0:
        first = x
    else:
        head = driving_fbm(model, (omega_minus, omega_plus), t)
        first = solve_flow(drift, model, x, head).path.values[-1]
    shifted = nz.shift_theta(t, (omega_minus, omega_plus))
    tail = driving_fbm(model, shifted, s)
    rhs = solve_flow(drift, model, first, tail).path.values[-1]
    return float(np.linalg.norm(lhs - rhs))


# -- a-priori bound ---------------------------------------------------------------

@dataclass
class APrioriReport:
    L: float
    sigma_envelope: float
    violations: int
    n_validation: int
    growth_ratio: dict
    self_consistent_exceedances: int


def a_priori_bound_check(drift: Drift, model: nz.NoiseModel, trajectories: Sequence[Trajectory],
                         quantile: float = 0.999) -> APrioriReport:
    """Fit L in sup|Phi| <= L (1 + |x|^N + Sigma) on half the replicates, test on the rest.

    Sigma of a replicate is the sup of |sigma * omega| over its window.
    """
    if len(trajectories) < 100:
        raise ValueError("need at least 100 replicates")
    S = np.array([np.max(np.linalg.norm(tr.path.values, axis=-1)) for tr in trajectories])
    Sig = np.array([np.max(np.linalg.norm(tr.driving_noise.values @ model.sigma.T, axis=-1)) for tr in trajectories])
    xn = np.array([np.linalg.norm(tr.x0) for tr in trajectories])
    base = 1.0 + xn**drift.N
    cal = np.arange(len(trajectories)) % 2 == 0
    L = float(np.max(S[cal] / (base[cal] + Sig[cal])))
    env = float(np.quantile(Sig, quantile))
    val = ~cal & (Sig <= env)
    violations = int(np.sum(S[val] > L * (base[val] + env)))
    exceed = int(np.sum(S[~cal] > L * (base[~cal] + Sig[~cal])))
    growth = {}
    for r in np.unique(np.round(xn, 12)):
        sel = np.isclose(xn, r)
        growth[float(r)] = float(np.max(S[sel] / base[sel]))
    return APrioriReport(L, env, violations, int(val.sum()), growth, exceed)


# -- long runs ----------------------------------------------------------------------

@dataclass
class ErgodicRun:
    """Per-replicate block statistics and thinned post-burn-in states."""
    dt: float
    T: float
    burn_in: float
    seeds: list
    block_growth: Optional[np.ndarray]   # (replicates, blocks) mean log growth rate per block
    samples: np.ndarray                  # (replicates, m, d)
    stride: int


def ergodic_run(drift: Drift, model: nz.NoiseModel, T: float, dt: float, burn_in: float, seeds: Sequence[int],
                x0=None, v0=None, stride: int = 1, n_blocks: int = 20, tangent: bool = True,
                stream_index: int = 0) -> ErgodicRun:
    """Integrate one trajectory per seed in lock-step, optionally with a renormalized tangent vector.

    The noise of each replicate is one exact fBm draw over the whole horizon;
    steps are taken sequentially so the result equals a restart-chained run.
    """
    from .rng import stream

    n = steps_on_grid(T, dt)
    nb = steps_on_grid(burn_in, dt)
    if n - nb < n_blocks:
        raise ValueError("too few post-burn-in steps for the requested number of blocks")
    d = drift.d
    B = len(seeds)
    shift = np.empty((B, n + 1, d))
    for r, sd in enumerate(seeds):
        w = nz.fbm_batch(model.H, n, dt, d, stream(sd, stream_index))
        shift[r] = w.T @ model.sigma.T
    x0 = np.zeros((B, d)) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (B, d)).copy()
    base_prev = x0 + shift[:, 0]
    z = np.zeros((B, d))
    y = base_prev.copy()
    f0 = drift.F(y)
    if tangent:
        v = np.zeros((B, d))
        if v0 is None:
            v[:, 0] = 1.0
        else:
            v[:] = np.asarray(v0, dtype=float)
            v /= np.linalg.norm(v, axis=-1, keepdims=True)
        A0 = drift.DF(y)
        edges = nb + np.linspace(0, n - nb, n_blocks + 1).round().astype(int)
        growth = np.zeros((B, n_blocks))
        blk = 0
    keep = np.arange(nb + stride, n + 1, stride)
    samples = np.empty((B, keep.size, d))
    si = 0
    for k in range(n):
        base = x0 + shift[:, k + 1]
        f1p = drift.F(z + dt * f0 + base)
        z = z + 0.5 * dt * (f0 + f1p)
        y = z + base
        if not np.max(np.abs(y)) <= BLOWUP:
            raise FlowBlowUp((k + 1) * dt, float(np.max(np.abs(y))))
        f0 = drift.F(y)
        if tangent:
            A1 = drift.DF(y)
            k0 = np.einsum("bij,bj->bi", A0, v)
            v = v + 0.5 * dt * (k0 + np.einsum("bij,bj->bi", A1, v + dt * k0))
            norm = np.linalg.norm(v, axis=-1)
            if not np.all(np.isfinite(norm)) or np.any(norm == 0):
                raise FloatingPointError(f"tangent vector degenerate at t = {(k + 1) * dt:.6g}")
            v /= norm[:, None]
            A0 = A1
            if k >= nb:
                while k >= edges[blk + 1]:
                    blk += 1
                growth[:, blk] += np.log(norm)
        if si < keep.size and k + 1 == keep[si]:
            samples[:, si] = y
            si += 1
    block_growth = None
    if tangent:
        block_growth = growth / (np.diff(edges) * dt)
    return ErgodicRun(dt, T, burn_in, list(seeds), block_growth, samples, stride)
