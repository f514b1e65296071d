"""Fractional Brownian noise and the stationary-noise-process algebra.

Paths are piecewise linear between grid nodes. Every singular kernel is
integrated exactly over each grid cell against that interpolant, so a kernel
is never evaluated at its singularity.

Lag convention used internally: for a ``PastPath`` with ``n`` steps, cell
``m`` is ``[-(m+1)dt, -m dt]`` and ``incr[m] = w(-m dt) - w(-(m+1) dt)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, linalg, signal, special

from ._kernels import pair_sup, power_cell_integral, unit_cell_weights
from .paths import Path, PastPath, steps_on_grid
from .rng import stream

CHOLESKY_MAX_N = 4096


class TailTruncationError(RuntimeError):
    def __init__(self, estimate: float, tol: float):
        super().__init__(f"tail truncation estimate {estimate:.3e} exceeds tolerance {tol:.3e}; lengthen T_past")
        self.estimate = estimate
        self.tol = tol


class CovarianceFactorizationError(RuntimeError):
    pass


# -- constants -----------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def mvn_constant(H: float) -> float:
    """Normalization of the moving-average representation, by adaptive quadrature."""
    _check_hurst(H)
    if H == 0.5:
        return 1.0
    p = H - 0.5
    f = lambda s: ((1.0 + s) ** p - s**p) ** 2
    # s > 1 folded onto (0, 1] by u = 1/s, written without cancellation
    g = lambda u: u ** (-2 * p - 2) * np.expm1(p * np.log1p(u)) ** 2
    head, _ = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=400)
    tail, _ = integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=400)
    return math.sqrt(1.0 / (2.0 * H) + head + tail)


def _check_hurst(H):
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0, 1), got {H}")


@dataclass(frozen=True)
class SigmaClass:
    """Diffusion matrices with condition number <= theta and norm >= kappa."""
    theta: float
    kappa: float

    def __post_init__(self):
        if self.theta < 1 or self.kappa <= 0:
            raise ValueError("need theta >= 1 and kappa > 0")

    def contains(self, sigma) -> bool:
        sv = np.linalg.svd(np.atleast_2d(sigma), compute_uv=False)
        if sv[-1] <= 0:
            return False
        return bool(sv[0] / sv[-1] <= self.theta * (1 + 1e-12) and sv[0] >= self.kappa)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    H: float
    sigma: np.ndarray = field(default_factory=lambda: np.eye(1))
    past_factor: float = 50.0          # T_past = past_factor * T
    quad_refine: int = 1
    sigma_class: Optional[SigmaClass] = None

    def __post_init__(self):
        _check_hurst(self.H)
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sig.shape[0] != sig.shape[1]:
            raise ValueError(f"sigma must be square, got {sig.shape}")
        sv = np.linalg.svd(sig, compute_uv=False)
        if sv[-1] <= 1e-14 * max(sv[0], 1.0):
            raise ValueError("sigma must be invertible")
        if self.sigma_class is not None and not self.sigma_class.contains(sig):
            raise ValueError(f"sigma (norm {sv[0]:.4g}, condition {sv[0] / sv[-1]:.4g}) is outside {self.sigma_class}")
        if self.quad_refine < 1:
            raise ValueError("quad_refine must be a positive integer")
        sig.setflags(write=False)
        object.__setattr__(self, "sigma", sig)

    @classmethod
    def scalar(cls, H: float, sigma: float, d: int = 1, **kw) -> "NoiseModel":
        return cls(H, sigma * np.eye(d), **kw)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def alpha_H(self) -> float:
        return mvn_constant(self.H)

    @property
    def rho_H(self) -> float:
        # calibrated: rho_H * int_0^t (t-u)^(H-1/2) dW_u is the Liouville fBm of liouville_fbm
        return 1.0 / self.alpha_H

    @property
    def sigma_norm(self) -> float:
        return float(np.linalg.norm(self.sigma, 2))

    def past_horizon(self, T: float) -> float:
        return self.past_factor * T


# -- exact fBm sampling ----------------------------------------------------------

def fgn_autocovariance(H: float, n: int) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at lags 0..n-1."""
    k = np.arange(n, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


@functools.lru_cache(maxsize=4)
def _fgn_cholesky(H: float, n: int) -> np.ndarray:
    cov = linalg.toeplitz(fgn_autocovariance(H, n))
    for jitter in (0.0, 1e-14, 1e-12, 1e-10):
        try:
            return linalg.cholesky(cov + jitter * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
    raise CovarianceFactorizationError(f"fGn covariance not positive definite after jitter (H={H}, n={n})")


@functools.lru_cache(maxsize=8)
def _circulant_sqrt_eigs(H: float, n: int) -> np.ndarray:
    r = fgn_autocovariance(H, n + 1)
    row = np.concatenate([r, r[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise CovarianceFactorizationError(f"circulant embedding has negative eigenvalues (H={H}, n={n})")
    return np.sqrt(np.clip(lam, 0.0, None) / row.size)


def fbm_batch(H: float, n: int, dt: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent fBm samples on {0, dt, ..., n dt}, shape (size, n+1)."""
    _check_hurst(H)
    if not dt > 0:
        raise ValueError("grid step must be positive")
    if H == 0.5:
        incr = rng.standard_normal((size, n))
    elif n <= CHOLESKY_MAX_N:
        incr = rng.standard_normal((size, n)) @ _fgn_cholesky(H, n).T
    else:
        s = _circulant_sqrt_eigs(H, n)
        z = rng.standard_normal((size, s.size)) + 1j * rng.standard_normal((size, s.size))
        incr = np.fft.fft(s * z, axis=1).real[:, :n]
    out = np.zeros((size, n + 1))
    np.cumsum(incr * dt**H, axis=1, out=out[:, 1:])
    return out


def sample_fbm(model: NoiseModel, T: float, dt: float, seed: int, index: int = 0) -> Path:
    """One d-dimensional fBm path with independent coordinates."""
    if not dt > 0:
        raise ValueError("grid step must be positive")
    if dt > T:
        raise ValueError("need dt <= T")
    n = steps_on_grid(T, dt)
    vals = fbm_batch(model.H, n, dt, model.d, stream(seed, index))
    return Path(dt, vals.T)


def liouville_covariance(H: float, times: np.ndarray) -> np.ndarray:
    """Covariance of the Liouville fBm of ``liouville_fbm`` at positive ``times``."""
    c2 = 1.0 / mvn_constant(H) ** 2
    s = np.minimum.outer(times, times)
    t = np.maximum.outer(times, times)
    hyp = special.hyp2f1(0.5 - H, 1.0, H + 1.5, s / t)
    return c2 * s ** (H + 0.5) * t ** (H - 0.5) * hyp / (H + 0.5)


def liouville_batch(H: float, n: int, dt: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact Gaussian samples of the Liouville fBm on {0, ..., n dt}; shape (size, n+1)."""
    times = dt * np.arange(1, n + 1)
    L = linalg.cholesky(liouville_covariance(H, times) + 1e-14 * np.eye(n), lower=True)
    out = np.zeros((size, n + 1))
    out[:, 1:] = rng.standard_normal((size, n)) @ L.T
    return out


def sample_wiener_past(T_past: float, dt: float, d: int, rng: np.random.Generator) -> PastPath:
    n = steps_on_grid(T_past, dt)
    lag = np.zeros((n + 1, d))
    np.cumsum(rng.standard_normal((n, d)) * math.sqrt(dt), axis=0, out=lag[1:])
    return PastPath(dt, lag[::-1])


def wiener_pair(T_minus: float, T_plus: float, dt: float, d: int, seed: int, index: int = 0):
    rng = stream(seed, index)
    return sample_wiener_past(T_minus, dt, d, rng), sample_wiener_past(T_plus, dt, d, rng)


# -- norm and tail bound ---------------------------------------------------------

def bnorm(omega: PastPath, H: float) -> float:
    """Discrete weighted-Hoelder norm; a lower bound on the continuum sup."""
    p = (1.0 - H) / 2.0
    scale = lambda s, t: np.sqrt(1.0 + np.abs(s) + np.abs(t)) * np.abs(t - s) ** p
    return pair_sup(omega.values, omega.times, scale)


def _bnorm_dyadic(omega: PastPath, H: float) -> float:
    p = (1.0 - H) / 2.0
    scale = lambda s, t: np.sqrt(1.0 + np.abs(s) + np.abs(t)) * np.abs(t - s) ** p
    return pair_sup(omega.values, omega.times, scale, all_pairs_max=0)


def tail_estimate(H: float, tau: float, omega: PastPath) -> float:
    """Bound on the kernel mass beyond -T_past for evaluation lag ``tau``.

    Assumes the path continues past its window with the same weighted norm.
    Inside the window the path is extended by its last value (zero slope).
    """
    if H == 0.5 or tau == 0.0:
        return 0.0
    Tp = omega.T_past
    if Tp < max(2.0 * tau, 1.0):
        return math.inf
    p = abs(H - 0.5)
    end = float(np.linalg.norm(omega.values[0]))
    norm = _bnorm_dyadic(omega, H)
    boundary = p * tau * (Tp - tau) ** (H - 1.5) * end
    body = p * (1.5 - H) * tau * norm * 2 ** (2.5 - H) * math.sqrt(2) * Tp ** ((H - 1) / 2) / ((1 - H) / 2)
    return (boundary + body) / mvn_constant(H)


def _enforce(est: float, tail_tol: Optional[float]):
    if tail_tol is not None and est > tail_tol:
        raise TailTruncationError(est, tail_tol)


# -- kernel operators ------------------------------------------------------------

def _lag_increments(omega: PastPath) -> np.ndarray:
    rev = omega.reversed_values()
    return rev[:-1] - rev[1:]


def _conv_columns(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.stack([signal.convolve(a[:, k], w, method="auto") for k in range(a.shape[1])], axis=1)


def mvn_operator(omega: PastPath, H: float, tail_tol: Optional[float] = None,
                 accurate_lag: Optional[float] = None) -> PastPath:
    """Discretized moving-average operator on an anchored past path; zero at time 0.

    Values are returned at every lag of the window. The reported tail bound
    covers lags up to ``accurate_lag`` (default: 1/50 of the window).
    """
    _check_hurst(H)
    if not omega.anchored:
        raise ValueError("path must vanish at time 0")
    if H == 0.5 or omega.n == 0:
        return PastPath(omega.dt, omega.values.copy())
    n = omega.n
    incr = _lag_increments(omega)
    w = unit_cell_weights(H + 0.5, n)
    conv = _conv_columns(incr[::-1], w)[:n]
    S = np.zeros((n + 1, omega.d))
    S[:n] = conv[::-1]
    lag_vals = omega.dt ** (H - 0.5) / mvn_constant(H) * (S - S[0])
    lag = omega.T_past / 50.0 if accurate_lag is None else accurate_lag
    est = tail_estimate(H, lag, omega)
    _enforce(est, tail_tol)
    return PastPath(omega.dt, lag_vals[::-1], est)


def history_operator(omega_minus: PastPath, H: float, T: float, dt: Optional[float] = None,
                     tail_tol: Optional[float] = None) -> Path:
    """Contribution of the past window to future fBm increments, on [0, T]."""
    _check_hurst(H)
    if not omega_minus.anchored:
        raise ValueError("past path must vanish at time 0")
    dt = omega_minus.dt if dt is None else dt
    J = steps_on_grid(T, dt)
    d = omega_minus.d
    if H == 0.5:
        return Path(dt, np.zeros((J + 1, d)))
    est = tail_estimate(H, T, omega_minus)
    _enforce(est, tail_tol)
    incr = _lag_increments(omega_minus)
    n = omega_minus.n
    c = 1.0 / mvn_constant(H)
    ratio = dt / omega_minus.dt
    r = int(round(ratio))
    if abs(r - ratio) < 1e-9 * ratio and r >= 1:
        Jf = J * r
        w = unit_cell_weights(H + 0.5, n + Jf)
        conv = _conv_columns(incr[::-1], w)
        vals = conv[n - 1 : n + Jf : r] - conv[n - 1]
        vals = c * omega_minus.dt ** (H - 0.5) * vals
    else:
        h = omega_minus.dt
        t = dt * np.arange(J + 1)
        m = np.arange(n, dtype=float)
        base = power_cell_integral(m * h, (m + 1) * h, H + 0.5)
        vals = np.zeros((J + 1, d))
        for j in range(1, J + 1):
            kern = power_cell_integral(t[j] + m * h, t[j] + (m + 1) * h, H + 0.5) - base
            vals[j] = c * (kern @ incr) / h
    return Path(dt, vals, est)


def liouville_fbm(omega_plus: PastPath, H: float, T: float) -> Path:
    """Liouville fBm driven by the fresh window ``omega_plus`` on [0, T]."""
    _check_hurst(H)
    J = steps_on_grid(T, omega_plus.dt)
    if J > omega_plus.n:
        raise ValueError(f"T = {T} exceeds the horizon {omega_plus.T_past} of the fresh window")
    if H == 0.5:
        return Path(omega_plus.dt, omega_plus.reversed_values()[: J + 1].copy())
    incr = _lag_increments(omega_plus)[:J]
    w = unit_cell_weights(H + 0.5, J)
    conv = _conv_columns(incr, w)[:J]
    vals = np.zeros((J + 1, omega_plus.d))
    vals[1:] = -omega_plus.dt ** (H - 0.5) / mvn_constant(H) * conv
    return Path(omega_plus.dt, vals)


# -- concatenation and shifts ------------------------------------------------------

def _same_grid(a: PastPath, b: PastPath):
    if a.dt != b.dt:
        raise ValueError(f"grid mismatch: {a.dt} vs {b.dt}")
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")


def concat_P(t: float, omega_minus: PastPath, omega_plus: PastPath) -> PastPath:
    """Past seen from time t: fresh noise on [-t, 0] glued onto the old past."""
    _same_grid(omega_minus, omega_plus)
    k = steps_on_grid(t, omega_plus.dt)
    if k < 0 or k > omega_plus.n:
        raise ValueError(f"t = {t} outside [0, {omega_plus.T_past}]")
    n_plus = omega_plus.n
    anchor = omega_plus.values[n_plus - k]
    recent = omega_plus.values[n_plus - np.arange(1, k + 1)]
    vals = np.concatenate([omega_minus.values, recent]) - anchor
    return PastPath(omega_minus.dt, vals)


def shift_vartheta(t: float, omega: PastPath) -> PastPath:
    k = steps_on_grid(t, omega.dt)
    if k < 0:
        raise ValueError("shift must be non-negative")
    if k > omega.n:
        raise ValueError(f"shift {t} exceeds horizon {omega.T_past}")
    n = omega.n
    return PastPath(omega.dt, omega.values[: n - k + 1] - omega.values[n - k])


def shift_theta(t: float, pair):
    """Two-sided shift of a (past, future) Wiener pair by signed time t."""
    om, op = pair
    _same_grid(om, op)
    if t >= 0:
        if t > op.T_past + 1e-12 * op.dt:
            raise ValueError(f"shift {t} exceeds future horizon {op.T_past}")
        return concat_P(t, om, op), shift_vartheta(t, op)
    if -t > om.T_past + 1e-12 * om.dt:
        raise ValueError(f"shift {t} exceeds past horizon {om.T_past}")
    return shift_vartheta(-t, om), concat_P(-t, op, om)


# -- fBm from a Wiener pair --------------------------------------------------------

def mvn_fbm(omega_minus: PastPath, omega_plus: PastPath, H: float, T: float,
            tail_tol: Optional[float] = None) -> Path:
    """fBm on [0, T] built from a Wiener pair as history part plus Liouville part."""
    hist = history_operator(omega_minus, H, T, tail_tol=tail_tol)
    fresh = liouville_fbm(omega_plus, H, T)
    return Path(hist.dt, hist.values + fresh.values, hist.tail_bound)


def two_sided_fbm_at(t: float, omega_minus: PastPath, omega_plus: PastPath, H: float) -> np.ndarray:
    """fBm value at t >= 0 through the moving-average operator on the concatenated past."""
    if t == 0:
        return np.zeros(omega_minus.d)
    past = concat_P(t, omega_minus, omega_plus)
    return -mvn_operator(past, H).at(-t)
