"""Wiener-Liouville bridge sampling, the Girsanov factor G and bridge-based densities.

Two normalizations appear. The bridge drift and the Gaussian prefactor use
``rho_H = 1/alpha_H``, the scale that maps the Wiener kernel integral to the
Liouville fBm. The Girsanov integrand uses ``rho_L = Gamma(H + 1/2)/alpha_H``,
the scale that maps the fractional derivative of the bridge path to the same
Liouville fBm. With these choices the F = const density is exactly the shifted
Gaussian, which the tests check.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import noise as nz
from ._kernels import power_cell_integral
from .flow import Drift, heun_remainder, rescaled_drift
from .fraccalc import derivative_matrix, integral_matrix, singular_coefficient
from .paths import Path, PastPath, steps_on_grid
from .rng import stream

HEAVY_TAIL_SHARE = 0.5
BULK_FRACTION = 0.01      # heavy-tail flags below this fraction of the peak density do not trigger halving


@dataclass(frozen=True)
class BridgeSpec:
    z: np.ndarray
    t0: float
    H: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        if not 0.0 < self.t0 <= 1.0:
            raise ValueError("bridge horizon t0 must lie in (0, 1]")
        if not 0.0 < self.H < 1.0:
            raise ValueError("H must lie in (0, 1)")
        steps_on_grid(self.t0, self.dt)

    @property
    def n(self) -> int:
        return steps_on_grid(self.t0, self.dt)

    @property
    def d(self) -> int:
        return self.z.size

    @property
    def rho_H(self) -> float:
        return 1.0 / nz.mvn_constant(self.H)

    @property
    def rho_L(self) -> float:
        return math.gamma(self.H + 0.5) / nz.mvn_constant(self.H)

    @property
    def endpoint_variance(self) -> float:
        """Per-component variance of the Liouville fBm at t0."""
        return self.rho_H**2 * self.t0 ** (2 * self.H) / (2 * self.H)

    def with_z(self, z) -> "BridgeSpec":
        return BridgeSpec(z, self.t0, self.H, self.dt)


@dataclass(frozen=True, eq=False)
class BridgePath:
    X: Path
    W: Path
    K: np.ndarray          # cell-averaged drift, shape (n, d)


@dataclass
class BridgeBatch:
    """Bridge paths for z = 0 plus the deterministic unit-z mean, so X(z) = X0 + mean_unit * z."""
    spec: BridgeSpec
    X0: np.ndarray          # (N, n+1, d)
    dW: np.ndarray          # (N, n, d)
    dA0: np.ndarray         # (N, n, d) drift increments at z = 0
    mean_unit: np.ndarray   # (n+1,)
    dmean_unit: np.ndarray  # (n,)

    def paths(self, z) -> np.ndarray:
        return self.X0 + self.mean_unit[:, None] * np.asarray(z, dtype=float)

    def drift_increments(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.dA0 + self.dmean_unit[:, None] * z


def _cell_kernels(H: float, t0: float, n: int):
    """Per-cell integrals of (t0-s)^(H-1/2), (t0-s)^(-H-1/2), (t0-s)^(-2H-1)."""
    k = np.arange(n)
    far = t0 * (n - k) / n                        # t0 - t_k
    near = t0 * (n - 1 - k) / n                   # t0 - t_{k+1}; exactly 0 on the last cell
    P = power_cell_integral(near, far, H + 0.5)
    with np.errstate(divide="ignore"):
        C = np.empty(n)
        V = np.empty(n)
        C[:-1] = power_cell_integral(near[:-1], far[:-1], 0.5 - H)
        V[:-1] = power_cell_integral(near[:-1], far[:-1], -2.0 * H)
    C[-1] = V[-1] = np.inf                        # never used: the last cell freezes the inner integral
    return P, C, V


def bridge_batch(spec: BridgeSpec, size: int, rng: np.random.Generator) -> BridgeBatch:
    """Euler-Maruyama for dX = K ds + dW with the inner Wiener integral sampled jointly per cell.

    On each cell the kernel factor (t0-s)^(H-1/2) is integrated exactly with the
    inner integral frozen at its left value. (dW, dI) over a cell is an exact
    bivariate Gaussian draw.
    """
    H, t0, n, d = spec.H, spec.t0, spec.n, spec.d
    dt = spec.dt
    rho = spec.rho_H
    P, C, V = _cell_kernels(H, t0, n)
    xi = rng.standard_normal((2, size, n, d))
    sd = math.sqrt(dt)
    dW = sd * xi[0]
    dI = np.zeros_like(dW)
    cov = C[:-1] / sd
    resid = np.sqrt(np.maximum(V[:-1] - cov**2, 0.0))
    dI[:, :-1] = cov[:, None] * xi[0, :, :-1] + resid[:, None] * xi[1, :, :-1]
    I_left = np.zeros_like(dW)
    np.cumsum(dI[:, :-1], axis=1, out=I_left[:, 1:])
    dA0 = -2.0 * H * P[:, None] * I_left
    X0 = np.zeros((size, n + 1, d))
    np.cumsum(dA0 + dW, axis=1, out=X0[:, 1:])
    dmean = 2.0 * H / (rho * t0 ** (2 * H)) * P
    mean = np.concatenate([[0.0], np.cumsum(dmean)])
    return BridgeBatch(spec, X0, dW, dA0, mean, dmean)


def sample_bridge(spec: BridgeSpec, seed: int, index: int = 0) -> BridgePath:
    b = bridge_batch(spec, 1, stream(seed, index))
    X = b.paths(spec.z)[0]
    dA = b.drift_increments(spec.z)[0]
    W = np.zeros((spec.n + 1, spec.d))
    np.cumsum(b.dW[0], axis=0, out=W[1:])
    return BridgePath(Path(spec.dt, X), Path(spec.dt, W), dA / spec.dt)


def bridge_mean(spec: BridgeSpec, s) -> np.ndarray:
    """Closed-form mean path, linear in z."""
    H, t0 = spec.H, spec.t0
    s = np.asarray(s, dtype=float)
    coef = 2 * H / (t0 ** (2 * H) * spec.rho_H * (H + 0.5))
    return (coef * (t0 ** (H + 0.5) - (t0 - s) ** (H + 0.5)))[..., None] * spec.z


def endpoint_functional(X: np.ndarray, spec: BridgeSpec) -> np.ndarray:
    """rho_H * int_0^t0 (t0-s)^(H-1/2) dX_s with the kernel averaged over each cell; X is (..., n+1, d)."""
    P, _, _ = _cell_kernels(spec.H, spec.t0, spec.n)
    dX = np.diff(X, axis=-2)
    return spec.rho_H * np.einsum("k,...kd->...d", P / spec.dt, dX)


# -- Girsanov integrand ------------------------------------------------------------

@dataclass
class GirsanovIntegrand:
    """Regular part on the grid plus the coefficient of s^(1/2-H) (non-zero only for H > 1/2)."""
    regular: np.ndarray      # (..., n+1, d)
    singular: np.ndarray     # (d,)
    warning: Optional[str] = None


def _fractional_ops(H: float, n: int, dt: float):
    """(inner, outer) matrices: inner maps X to J^{H-1/2} X, outer maps f to the regular part of J^{1/2-H} f."""
    if H < 0.5:
        return derivative_matrix(0.5 - H, n, dt), integral_matrix(0.5 - H, n, dt)
    if H > 0.5:
        return integral_matrix(H - 0.5, n, dt), derivative_matrix(H - 0.5, n, dt)
    eye = np.eye(n + 1)
    return eye, eye


def _apply_time(M: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a (n+1, n+1) time operator along axis -2."""
    return M @ values


def _integrand(drift: Drift, model: nz.NoiseModel, l_vals: np.ndarray, X: np.ndarray, spec: BridgeSpec):
    s_norm = model.sigma_norm
    sigma_inv = np.linalg.inv(model.sigma)
    inner_M, outer_M = _fractional_ops(spec.H, spec.n, spec.dt)
    # |sigma| * Psi = |sigma| l + rho_L sigma J^{H-1/2} X
    psi_scaled = s_norm * l_vals + spec.rho_L * _apply_time(inner_M, X) @ model.sigma.T
    f = drift.F(psi_scaled) @ sigma_inv.T / spec.rho_L
    reg = _apply_time(outer_M, f)
    sing = np.zeros(spec.d)
    if spec.H > 0.5:
        f0 = drift.F(s_norm * l_vals[0]) @ sigma_inv.T / spec.rho_L
        sing = singular_coefficient(spec.H - 0.5, f0)
    return reg, sing


def girsanov_L(drift: Drift, model: nz.NoiseModel, l: Path, bridge: BridgePath, spec: BridgeSpec) -> GirsanovIntegrand:
    """Integrand of the Girsanov exponent along one bridge path."""
    l_vals = _l_on_grid(l, spec)
    msg = None
    if spec.H > 0.5:
        from .fraccalc import estimate_holder_exponent
        beta = estimate_holder_exponent(l.truncate(spec.t0)) if np.ptp(l_vals) > 0 else 1.0
        if beta <= spec.H - 0.5:
            msg = f"path l looks only {beta:.3f}-Hoelder, below the derivative order {spec.H - 0.5:.3f}"
            warnings.warn(msg)
    reg, sing = _integrand(drift, model, l_vals, bridge.X.values, spec)
    return GirsanovIntegrand(reg, sing, msg)


def _l_on_grid(l: Path, spec: BridgeSpec) -> np.ndarray:
    if abs(l.dt - spec.dt) > 1e-12 * spec.dt:
        raise ValueError("path l must share the bridge grid step")
    if l.T < spec.t0 - 1e-12:
        raise ValueError("path l is shorter than t0")
    return l.values[: spec.n + 1]


def _singular_cell_moments(H: float, n: int, dt: float):
    """Per-cell averages of s^(1/2-H) and integrals of s^(1-2H)."""
    edges = dt * np.arange(n + 1)
    avg = power_cell_integral(edges[:-1], edges[1:], 1.5 - H) / dt
    sq = power_cell_integral(edges[:-1], edges[1:], 2.0 - 2.0 * H)
    return avg, sq


def girsanov_exponent(reg: np.ndarray, sing: np.ndarray, dA: np.ndarray, dW: np.ndarray, spec: BridgeSpec):
    """int <L, dX> - 1/2 int |L|^2 per path.

    K ds part: trapezoid in L against exact cell drift increments. dW part:
    left-point sums. The s^(1/2-H) part enters through exact cell moments.
    """
    dt = spec.dt
    mid = 0.5 * (reg[..., 1:, :] + reg[..., :-1, :])
    left = reg[..., :-1, :]
    drift_term = np.sum(mid * dA, axis=(-2, -1))
    noise_term = np.sum(left * dW, axis=(-2, -1))
    sq_reg = np.sum(reg**2, axis=-1)
    energy = 0.5 * dt * np.sum(sq_reg[..., 1:] + sq_reg[..., :-1], axis=-1)
    if np.any(sing != 0):
        avg, sq = _singular_cell_moments(spec.H, spec.n, dt)
        s_cells = avg[:, None] * sing
        drift_term = drift_term + np.sum(s_cells * dA, axis=(-2, -1))
        noise_term = noise_term + np.sum(s_cells * dW, axis=(-2, -1))
        energy = energy + 2.0 * dt * np.sum(np.sum(mid * sing, axis=-1) * avg, axis=-1) + sq.sum() * float(sing @ sing)
    return drift_term + noise_term - 0.5 * energy


@dataclass
class GirsanovEstimate:
    value: float
    stderr: float
    heavy_tail: bool
    top_share: float


def _weights_summary(expo: np.ndarray) -> GirsanovEstimate:
    if not np.all(np.isfinite(expo)):
        raise FloatingPointError("non-finite Girsanov exponent")
    w = np.exp(expo)
    N = w.size
    top = np.sort(w)[::-1][: max(1, N // 100)].sum() / w.sum() if w.sum() > 0 else 0.0
    se = float(w.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return GirsanovEstimate(float(w.mean()), se, bool(top > HEAVY_TAIL_SHARE), float(top))


def _z_of(model: nz.NoiseModel, y: np.ndarray, l_end: np.ndarray) -> np.ndarray:
    return model.sigma_norm * (y - l_end) @ np.linalg.inv(model.sigma).T


def girsanov_factor(drift: Drift, model: nz.NoiseModel, l: Path, y, spec: BridgeSpec, n_samples: int,
                    seed: int, batch: Optional[BridgeBatch] = None) -> GirsanovEstimate:
    """Monte-Carlo G at one target point y."""
    l_vals = _l_on_grid(l, spec)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = _z_of(model, y, l_vals[-1])
    b = bridge_batch(spec, n_samples, stream(seed)) if batch is None else batch
    X = b.paths(z)
    reg, sing = _integrand(drift, model, l_vals, X, spec)
    expo = girsanov_exponent(reg, sing, b.drift_increments(z), b.dW, spec)
    return _weights_summary(expo)


def gaussian_factor(model: nz.NoiseModel, spec: BridgeSpec, z: np.ndarray) -> np.ndarray:
    """Law of sigma/|sigma| times the Liouville fBm at t0, evaluated in y-coordinates."""
    v = spec.endpoint_variance
    d = spec.d
    jac = abs(np.linalg.det(model.sigma_norm * np.linalg.inv(model.sigma)))
    return jac * np.exp(-0.5 * np.sum(z**2, axis=-1) / v) / (2 * math.pi * v) ** (d / 2)


@dataclass
class DensityOnGrid:
    y: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    heavy_tail: np.ndarray
    t0: float
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        if self.y.shape[1] != 1:
            raise NotImplementedError("grid integral is implemented for d = 1")
        return float(np.trapezoid(self.values, self.y[:, 0]))

    def to_csv(self) -> str:
        d = self.y.shape[1]
        header = ",".join([f"y_{i + 1}" for i in range(d)] + ["density"])
        rows = np.column_stack([self.y, self.values])
        return header + "\n" + "\n".join(",".join(f"{v:.17g}" for v in r) for r in rows) + "\n"


def _as_grid(y_grid, d: int) -> np.ndarray:
    y = np.asarray(y_grid, dtype=float)
    return y[:, None] if y.ndim == 1 else y.reshape(-1, d)


CHUNK_ELEMENTS = 4_000_000


def _densities_for_l(drift, model, l_vals, Y, spec, b: BridgeBatch, keep_weights: bool = False):
    """Density values, standard errors and heavy-tail flags (or the weighted contributions) over a y grid."""
    per_point = b.X0.size
    step = max(1, CHUNK_ELEMENTS // per_point)
    if Y.shape[0] > step:
        parts = [_densities_for_l(drift, model, l_vals, Y[i:i + step], spec, b, keep_weights) for i in range(0, Y.shape[0], step)]
        return tuple(np.concatenate(p) for p in zip(*parts))
    Z = _z_of(model, Y, l_vals[-1])                       # (G, d)
    X = b.X0[None] + b.mean_unit[None, None, :, None] * Z[:, None, None, :]
    dA = b.dA0[None] + b.dmean_unit[None, None, :, None] * Z[:, None, None, :]
    reg, sing = _integrand(drift, model, l_vals, X, spec)
    expo = girsanov_exponent(reg, sing, dA, b.dW[None], spec)   # (G, N)
    if not np.all(np.isfinite(expo)):
        raise FloatingPointError("non-finite Girsanov exponent")
    w = np.exp(expo)
    G = w.mean(axis=1)
    se = w.std(axis=1, ddof=1) / math.sqrt(w.shape[1])
    gauss = gaussian_factor(model, spec, Z)
    if keep_weights:
        return gauss * G, gauss * se, gauss[:, None] * w
    return gauss * G, gauss * se, _top_share(w) > HEAVY_TAIL_SHARE


def _top_share(w: np.ndarray) -> np.ndarray:
    """Fraction of each row's total carried by its largest 1% of entries."""
    k = max(1, w.shape[1] // 100)
    top = -np.partition(-w, k - 1, axis=1)[:, :k]
    return top.sum(axis=1) / np.maximum(w.sum(axis=1), 1e-300)


def transition_density(drift: Drift, model: nz.NoiseModel, l: Path, y_grid, spec: BridgeSpec, n_samples: int,
                       seed: int) -> DensityOnGrid:
    """Density of the rescaled solution at t0 started from path l, on a grid of target points.

    One batch of bridge noise is shared by every grid point.
    """
    d = model.d
    Y = _as_grid(y_grid, d)
    l_vals = _l_on_grid(l, spec)
    z_all = _z_of(model, Y, l_vals[-1])
    if np.max(gaussian_factor(model, spec, z_all)) < 1e-12:
        raise ValueError("grid misses the bulk of the Gaussian factor")
    b = bridge_batch(spec.with_z(np.zeros(d)), n_samples, stream(seed))
    vals, se, heavy = _densities_for_l(drift, model, l_vals, Y, spec, b)
    return DensityOnGrid(Y, vals, se, heavy, spec.t0, {"n_samples": n_samples, "seed": seed, "H": spec.H,
                                                         "rho_H": spec.rho_H, "rho_L": spec.rho_L})


# -- stationary density --------------------------------------------------------------

@dataclass
class HistorySample:
    x: np.ndarray
    omega_minus: PastPath


@dataclass
class HistoryHarvest:
    samples: list
    decorrelation_time: float
    spacing: float
    trajectory_tail: np.ndarray = field(repr=False)


def _decorrelation_time(y: np.ndarray, dt: float) -> float:
    """Largest per-coordinate lag at which the autocorrelation first drops below 1/e."""
    worst = 0.0
    for col in np.atleast_2d(y.T):
        x = col - col.mean()
        n = x.size
        spec = np.fft.rfft(x, 2 * n)
        acf = np.fft.irfft(spec * np.conj(spec))[:n] / np.arange(n, 0, -1)
        if acf[0] <= 0:
            continue
        below = np.nonzero(acf / acf[0] < math.exp(-1.0))[0]
        worst = max(worst, (below[0] if below.size else n) * dt)
    return worst


def harvest_history(drift: Drift, model: nz.NoiseModel, n_samples: int, spacing: float, T_past: float,
                    dt: float, seed: int, warmup: float = 20.0, chains: int = 32) -> HistoryHarvest:
    """(x, omega_minus) pairs from long runs of the rescaled SDE.

    Each chain's Wiener path drives its fBm through the moving-average
    operator; at each harvest time x is the state and omega_minus the trailing
    Wiener window re-anchored to 0. Chains run in lock-step with independent streams.
    """
    d = model.d
    s = model.sigma_norm
    resc = rescaled_drift(drift, s)
    per_chain = -(-n_samples // chains)
    n_pre = steps_on_grid(T_past, dt)
    n_warm = steps_on_grid(warmup, dt)
    n_gap = steps_on_grid(spacing, dt)
    n_total = n_pre + n_warm + per_chain * n_gap
    W = np.zeros((chains, n_total + 1, d))
    shift = np.empty((chains, n_total + 1 - n_pre, d))
    for c in range(chains):
        rng = stream(seed, c)
        np.cumsum(math.sqrt(dt) * rng.standard_normal((n_total, d)), axis=0, out=W[c, 1:])
        B = nz.mvn_operator(PastPath(dt, W[c] - W[c, -1]), model.H).values   # node k <-> time (k - n_total) dt
        shift[c] = (B[n_pre:] - B[n_pre]) @ (model.sigma / s).T
    Y = heun_remainder(resc.F, np.zeros((chains, d)), shift, dt)
    tail = Y[:, n_warm:]
    tau = max(_decorrelation_time(tail[c], dt) for c in range(chains))
    if spacing < 5.0 * tau:
        warnings.warn(f"harvest spacing {spacing:g} is below five decorrelation times ({tau:.3g})")
    samples = []
    for j in range(1, per_chain + 1):
        k = n_warm + n_gap * j
        g = n_pre + k
        for c in range(chains):
            if len(samples) < n_samples:
                samples.append(HistorySample(Y[c, k].copy(), PastPath(dt, W[c, g - n_pre: g + 1] - W[c, g])))
    return HistoryHarvest(samples, tau, spacing, tail)


def stationary_density_via_bridge(drift: Drift, model: nz.NoiseModel, history_samples: Sequence[HistorySample],
                                  y_grid, spec: BridgeSpec, n_samples: int = 64, seed: int = 0,
                                  max_halvings: int = 3) -> DensityOnGrid:
    """Average of transition densities over harvested (x, omega_minus); t0 halves while the heavy-tail guard trips."""
    if len(history_samples) < 200:
        raise ValueError("need at least 200 history samples")
    d = model.d
    Y = _as_grid(y_grid, d)
    s = model.sigma_norm
    cur = spec
    for attempt in range(max_halvings + 1):
        acc = np.zeros(Y.shape[0])
        acc2 = np.zeros(Y.shape[0])
        pooled = []
        base_spec = cur.with_z(np.zeros(d))
        for j, hs in enumerate(history_samples):
            # fresh bridge noise per history sample, so Girsanov noise averages out over the mixture
            b = bridge_batch(base_spec, n_samples, stream(seed, attempt * len(history_samples) + j))
            hist = nz.history_operator(hs.omega_minus, cur.H, cur.t0, dt=cur.dt).values
            l_vals = hs.x + hist @ (model.sigma / s).T
            vals, _, contrib = _densities_for_l(drift, model, l_vals, Y, cur, b, keep_weights=True)
            acc += vals
            acc2 += vals**2
            pooled.append(contrib)
        # the guard looks at all history x bridge contributions to each grid value
        heavy = _top_share(np.concatenate(pooled, axis=1)) > HEAVY_TAIL_SHARE
        bulk = acc >= BULK_FRACTION * acc.max()
        if not (heavy & bulk).any() or attempt == max_halvings:
            break
        cur = BridgeSpec(cur.z, cur.t0 / 2, cur.H, cur.dt / 2)
    m = len(history_samples)
    mean = acc / m
    se = np.sqrt(np.maximum(acc2 / m - mean**2, 0.0) / m)
    return DensityOnGrid(Y, mean, se, heavy, cur.t0, {"history": m, "n_samples": n_samples, "seed": seed,
                                                      "halvings": attempt})
