"""Riemann-Liouville fractional integrals and regularized derivatives on [0, T].

Functions are piecewise linear between grid nodes and every kernel cell
integral is exact, so ``frac_integral`` is exact for piecewise-linear input
and the regularized derivative is the classical L1 scheme.
"""
from __future__ import annotations

import functools
import math
import warnings
from typing import NamedTuple, Optional

import numpy as np
from scipy import signal

from ._kernels import pair_sup, unit_cell_weights
from .paths import Path


class HolderWarning(UserWarning):
    pass


def _check_order(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {alpha}")


def _integral_weights(alpha: float, n: int):
    """Convolution kernel for interior hats and the separate first-node weights."""
    q = alpha + 1.0
    D = q * unit_cell_weights(q, n + 1)          # (i+1)^q - i^q
    a = np.empty(n + 1)
    a[0] = 1.0
    a[1:] = D[1:] - D[:-1]
    j = np.arange(1, n + 1, dtype=float)
    first = q * j**alpha - D[:-1]                 # (j-1)^q - (j-q) j^alpha
    return a, first


def _derivative_weights(alpha: float, n: int) -> np.ndarray:
    return (1.0 - alpha) * unit_cell_weights(1.0 - alpha, n)


def integral_values(alpha: float, values: np.ndarray, dt: float) -> np.ndarray:
    """Fractional integral of node values along axis 0 (any trailing shape)."""
    _check_order(alpha)
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    flat = v.reshape(n + 1, -1)
    a, first = _integral_weights(alpha, n)
    out = np.zeros_like(flat)
    for k in range(flat.shape[1]):
        col = flat[:, k]
        conv = signal.convolve(col, a, method="auto")[: n + 1]
        out[1:, k] = conv[1:] + (first - a[1:]) * col[0]
    out *= dt**alpha / math.gamma(alpha + 2.0)
    return out.reshape(v.shape)


def derivative_values(alpha: float, values: np.ndarray, dt: float) -> np.ndarray:
    """Regular part of the fractional derivative of node values along axis 0."""
    _check_order(alpha)
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    flat = v.reshape(n + 1, -1)
    b = _derivative_weights(alpha, n)
    inc = np.diff(flat, axis=0)
    out = np.zeros_like(flat)
    for k in range(flat.shape[1]):
        out[1:, k] = signal.convolve(inc[:, k], b, method="auto")[:n]
    out *= dt ** (-alpha) / math.gamma(2.0 - alpha)
    return out.reshape(v.shape)


@functools.lru_cache(maxsize=32)
def integral_matrix(alpha: float, n: int, dt: float) -> np.ndarray:
    """Lower-triangular matrix M with M @ f equal to ``integral_values``."""
    a, first = _integral_weights(alpha, n)
    idx = np.arange(n + 1)
    lag = idx[:, None] - idx[None, :]
    M = np.where(lag >= 0, a[np.clip(lag, 0, n)], 0.0)
    M[1:, 0] = first
    M[0, :] = 0.0
    M *= dt**alpha / math.gamma(alpha + 2.0)
    M.setflags(write=False)
    return M


@functools.lru_cache(maxsize=32)
def derivative_matrix(alpha: float, n: int, dt: float) -> np.ndarray:
    """Matrix form of ``derivative_values``."""
    b = _derivative_weights(alpha, n)
    idx = np.arange(n + 1)
    # out_j = sum_{k<j} (f_{k+1} - f_k) b_{j-1-k}
    lag = idx[:, None] - 1 - idx[None, :]
    B = np.where(lag >= 0, b[np.clip(lag, 0, max(n - 1, 0))], 0.0) if n else np.zeros((1, 1))
    M = np.zeros((n + 1, n + 1))
    M[:, 1:] += B[:, :-1]
    M[:, :-1] -= B[:, :-1]
    M *= dt ** (-alpha) / math.gamma(2.0 - alpha)
    M.setflags(write=False)
    return M


def frac_integral(alpha: float, f: Path) -> Path:
    return Path(f.dt, integral_values(alpha, f.values, f.dt))


class RegularizedDerivative(NamedTuple):
    regular: Path
    singular_coef: np.ndarray     # multiplies t**(-alpha)
    warning: Optional[str] = None


def singular_coefficient(alpha: float, f0) -> np.ndarray:
    return np.asarray(f0, dtype=float) * (1.0 - alpha) / math.gamma(2.0 - alpha)


def frac_derivative_regularized(alpha: float, f: Path, check_holder: bool = True) -> RegularizedDerivative:
    """Split the fractional derivative into a regular part and a t**(-alpha) term."""
    _check_order(alpha)
    msg = None
    if check_holder:
        beta = estimate_holder_exponent(f)
        if beta <= alpha:
            msg = f"estimated Hoelder exponent {beta:.3f} <= derivative order {alpha:.3f}"
            warnings.warn(msg, HolderWarning, stacklevel=2)
    reg = Path(f.dt, derivative_values(alpha, f.values, f.dt))
    return RegularizedDerivative(reg, singular_coefficient(alpha, f.values[0]), msg)


def holder_norm(f: Path, beta: float) -> float:
    """Discrete Hoelder seminorm; a lower bound on the continuum value."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("Hoelder order must lie in (0, 1]")
    return pair_sup(f.values, f.times, lambda s, t: np.abs(t - s) ** beta)


def estimate_holder_exponent(f: Path, scales: int = 6) -> float:
    """Slope of log max-oscillation against log separation over the finest dyadic scales."""
    v = f.values
    seps, osc = [], []
    sep = 1
    while sep <= f.n and len(seps) < scales:
        m = np.linalg.norm(v[sep:] - v[:-sep], axis=1).max()
        if m > 0:
            seps.append(sep * f.dt)
            osc.append(m)
        sep *= 2
    if len(seps) < 2:
        return 1.0
    slope = np.polyfit(np.log(seps), np.log(osc), 1)[0]
    return float(min(slope, 1.0))
