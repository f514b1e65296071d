"""Invariant-density histograms, ball masses, Gaussian-tail fits and the fOU covariance."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from . import noise as nz
from .flow import Drift, ergodic_run, rescaled_drift

MAX_BINS = 512
BOX_QUANTILE = 1e-4
MAX_OUTSIDE = 1e-3


class BoxTooSmall(ValueError):
    def __init__(self, outside: float):
        super().__init__(f"mass outside the histogram box is {outside:.3g} > {MAX_OUTSIDE}; enlarge the box")
        self.outside = outside


class InsufficientTailData(ValueError):
    pass


@dataclass
class DensityEstimate:
    box: np.ndarray                 # (d, 2)
    edges: list                     # per-axis bin edges
    counts: np.ndarray              # d-dimensional integer histogram
    total_samples: int
    outside: int = 0
    normalized: bool = True
    provenance: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.box.shape[0]

    @property
    def inside(self) -> int:
        return int(self.counts.sum())

    def probability(self) -> np.ndarray:
        return self.counts / self.inside

    def bin_volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        return _outer_product(widths)

    def density(self) -> np.ndarray:
        return self.probability() / self.bin_volumes()

    def centers(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def total_mass(self) -> float:
        return float(self.probability().sum())

    def to_csv(self) -> str:
        grids = np.meshgrid(*self.centers(), indexing="ij")
        cols = [g.ravel() for g in grids] + [self.probability().ravel()]
        header = ",".join([f"bin_center_{i + 1}" for i in range(self.d)] + ["probability_mass"])
        rows = np.column_stack(cols)
        return header + "\n" + "\n".join(",".join(f"{v:.17g}" for v in r) for r in rows) + "\n"

    def summary(self) -> dict:
        return {"box": self.box.tolist(), "bins": [len(e) - 1 for e in self.edges],
                "samples": self.total_samples, "outside": self.outside, **self.provenance}


def _outer_product(vectors) -> np.ndarray:
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def _fd_bins(x: np.ndarray, lo: float, hi: float) -> int:
    q75, q25 = np.percentile(x, [75, 25])
    h = 2.0 * (q75 - q25) * x.size ** (-1.0 / 3.0)
    if h <= 0:
        return 1
    return int(min(MAX_BINS, max(1, math.ceil((hi - lo) / h))))


def histogram_from_samples(samples, bins=None, box=None, provenance: Optional[dict] = None) -> DensityEstimate:
    """Freedman-Diaconis histogram; the default box spans the 1e-4 and 1 - 1e-4 quantiles per axis."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N, d = x.shape
    if box is None:
        lo = np.quantile(x, BOX_QUANTILE, axis=0)
        hi = np.quantile(x, 1.0 - BOX_QUANTILE, axis=0)
        pad = 0.05 * (hi - lo)
        box = np.column_stack([lo - pad, hi + pad])
    box = np.asarray(box, dtype=float).reshape(d, 2)
    if bins is None:
        bins = [_fd_bins(x[:, k], *box[k]) for k in range(d)]
    elif np.isscalar(bins):
        bins = [int(bins)] * d
    edges = [np.linspace(box[k, 0], box[k, 1], bins[k] + 1) for k in range(d)]
    counts, _ = np.histogramdd(x, bins=edges)
    counts = counts.astype(np.int64)
    outside = N - int(counts.sum())
    if outside / N > MAX_OUTSIDE:
        raise BoxTooSmall(outside / N)
    return DensityEstimate(box, edges, counts, N, outside, True, dict(provenance or {}))


def geweke_z(series: np.ndarray, blocks: int = 20) -> float:
    """Mean difference between the second and last quarter, in units of batch-means standard errors."""
    x = np.asarray(series, dtype=float)
    m = x.shape[0] // 4
    a, b = x[m:2 * m], x[3 * m:]

    def var_of_mean(s):
        k = max(2, min(blocks, s.shape[0]))
        bm = np.array([c.mean() for c in np.array_split(s, k)])
        return bm.var(ddof=1) / k

    denom = math.sqrt(var_of_mean(a) + var_of_mean(b))
    return float(abs(a.mean() - b.mean()) / denom) if denom > 0 else 0.0


def estimate_invariant_density(drift: Drift, model: nz.NoiseModel, T: float, dt: float, burn_in: float,
                               bins=None, seeds: Sequence[int] = (0,), stride: int = 1, x0=None,
                               box=None) -> DensityEstimate:
    """Time-average histogram of the post-burn-in trajectory, pooled over seeds."""
    if not drift.eventually_monotone:
        raise ValueError(f"drift {drift.name!r} is not flagged eventually monotone")
    run = ergodic_run(drift, model, T, dt, burn_in, seeds, x0=x0, stride=stride, tangent=False)
    pooled = run.samples.reshape(-1, drift.d)
    zs = [geweke_z(np.linalg.norm(run.samples[r], axis=-1)) for r in range(len(seeds))]
    prov = {"T": T, "burn_in": burn_in, "dt": dt, "seeds": list(seeds), "stride": stride,
            "geweke_z_max": float(max(zs)), "geweke_ok": bool(max(zs) < 3.0)}
    return histogram_from_samples(pooled, bins=bins, box=box, provenance=prov)


# -- ball masses -------------------------------------------------------------------

def _ball_fraction(edges: list, R: float, sub: int = 16) -> np.ndarray:
    """Volume fraction of each bin inside the closed ball of radius R."""
    d = len(edges)
    if d == 1:
        e = edges[0]
        lo = np.clip(e[:-1], -R, R)
        hi = np.clip(e[1:], -R, R)
        return np.maximum(hi - lo, 0.0) / np.diff(e)
    # midpoint sub-grid per bin
    offs = (np.arange(sub) + 0.5) / sub
    frac = np.zeros([len(e) - 1 for e in edges])
    for idx in itertools.product(*[range(len(e) - 1) for e in edges]):
        pts = [edges[k][idx[k]] + offs * (edges[k][idx[k] + 1] - edges[k][idx[k]]) for k in range(d)]
        g = np.meshgrid(*pts, indexing="ij")
        r2 = sum(c**2 for c in g)
        frac[idx] = np.mean(r2 <= R * R)
    return frac


def mass_in_ball(density: DensityEstimate, R: float):
    """(mass, binomial stderr) of the closed ball B(0, R); partial bins count by volume fraction."""
    if R <= 0:
        raise ValueError("radius must be positive")
    p = float(np.sum(density.probability() * _ball_fraction(density.edges, R)))
    p = min(max(p, 0.0), 1.0)
    se = math.sqrt(p * (1.0 - p) / density.inside)
    return p, se


def ball_mass_batch_means(samples: np.ndarray, R: float, blocks: int = 20):
    """Ball mass from raw samples (replicates, m, d) with a batch-means stderr."""
    inside = np.linalg.norm(samples, axis=-1) <= R
    per = np.concatenate([[c.mean() for c in np.array_split(row, blocks)] for row in inside])
    return float(inside.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


# -- fractional OU ------------------------------------------------------------------

def fou_kernel_integral(H: float, t: float) -> float:
    """int_0^t s^(2H-1) cosh(t - s) ds; the algebraic endpoint factor is integrated by the QAWS weight."""
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda s: math.cosh(t - s), 0.0, t, weight="alg", wvar=(2.0 * H - 1.0, 0.0),
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def fou_covariance(model: nz.NoiseModel, t: float) -> np.ndarray:
    """Covariance of the fOU stochastic convolution int_0^t e^{-(t-s)} sigma dB^H_s."""
    if t < 0:
        raise ValueError("t must be non-negative")
    S = model.sigma @ model.sigma.T
    return 2.0 * model.H * math.exp(-t) * fou_kernel_integral(model.H, t) * S


def fou_stationary_variance(H: float) -> float:
    """Limit of the scalar fOU variance as t -> infinity, Gamma(2H + 1) / 2."""
    return 0.5 * math.gamma(2.0 * H + 1.0)


# -- rescaling -----------------------------------------------------------------------

@dataclass
class ErgodicParams:
    T: float
    dt: float
    burn_in: float
    seeds: Sequence[int]
    stride: int = 10
    blocks: int = 20
    x0: Optional[Sequence[float]] = None


@dataclass
class RescaleReport:
    mass_original: float
    se_original: float
    mass_rescaled: float
    se_rescaled: float

    @property
    def difference(self) -> float:
        return abs(self.mass_original - self.mass_rescaled)

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.se_original, self.se_rescaled)

    def within(self, k: float = 3.0) -> bool:
        return self.difference <= k * self.combined_stderr


def rescale_density_check(drift: Drift, model: nz.NoiseModel, R: float, params: ErgodicParams,
                          rescaled_seed_offset: int = 1_000_003) -> RescaleReport:
    """Compare pi(B(0,R)) for Y with the mass of B(0, R/|sigma|) for Z = Y/|sigma|.

    The rescaled run uses the drift F(s z)/s and noise matrix sigma/s. Seeds are
    offset so the two estimates are independent.
    """
    s = model.sigma_norm
    run = ergodic_run(drift, model, params.T, params.dt, params.burn_in, params.seeds,
                      x0=params.x0, stride=params.stride, tangent=False)
    m1, se1 = ball_mass_batch_means(run.samples, R, params.blocks)
    resc = rescaled_drift(drift, s)
    model_r = nz.NoiseModel(model.H, model.sigma / s, past_factor=model.past_factor)
    seeds_r = [sd + rescaled_seed_offset for sd in params.seeds]
    x0_r = None if params.x0 is None else np.asarray(params.x0, dtype=float) / s
    run_r = ergodic_run(resc, model_r, params.T, params.dt, params.burn_in, seeds_r,
                        x0=x0_r, stride=params.stride, tangent=False)
    m2, se2 = ball_mass_batch_means(run_r.samples, R / s, params.blocks)
    return RescaleReport(m1, se1, m2, se2)


# -- tails ------------------------------------------------------------------------------

@dataclass
class TailFit:
    slope: float
    r2: float
    radii: np.ndarray
    log_survival: np.ndarray


def tail_fit(density: DensityEstimate, min_bins: int = 10, min_count: int = 100,
             min_r2: float = 0.9) -> TailFit:
    """Fit log P(|Y| >= r) = a + slope * r^2 + c * log r over the outer bins.

    Tail bins are those whose radius exceeds the median radius of the mass and
    which hold at least ``min_count`` samples each. The log r term absorbs the
    polynomial prefactor of a Gaussian survival function.
    """
    grids = np.meshgrid(*density.centers(), indexing="ij")
    radius = np.sqrt(sum(g**2 for g in grids)).ravel()
    prob = density.probability().ravel()
    counts = density.counts.ravel()
    order = np.argsort(radius)
    radius, prob, counts = radius[order], prob[order], counts[order]
    cum = np.cumsum(prob)
    r_med = radius[np.searchsorted(cum, 0.5)]
    # survival at each distinct radius: mass of bins at or beyond it
    uniq, first = np.unique(radius, return_index=True)
    surv = 1.0 - np.concatenate([[0.0], cum])[first]
    cnt_at = np.add.reduceat(counts, first)
    sel = (uniq > r_med) & (cnt_at >= min_count) & (surv > 0)
    if sel.sum() < min_bins:
        raise InsufficientTailData(f"only {int(sel.sum())} tail radii with >= {min_count} samples")
    r = uniq[sel]
    ls = np.log(surv[sel])
    X = np.column_stack([np.ones_like(r), r**2, np.log(r)])
    coef, *_ = np.linalg.lstsq(X, ls, rcond=None)
    resid = ls - X @ coef
    ss_tot = float(np.sum((ls - ls.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    if not (coef[1] < 0 and r2 >= min_r2):
        raise InsufficientTailData(f"no Gaussian decay detected (slope {coef[1]:.3g}, r2 {r2:.3f})")
    return TailFit(float(coef[1]), r2, r, ls)


def normal_ball_mass(var: float, R: float) -> float:
    """P(|X| <= R) for a centered scalar normal."""
    return float(2.0 * stats.norm.cdf(R / math.sqrt(var)) - 1.0)
