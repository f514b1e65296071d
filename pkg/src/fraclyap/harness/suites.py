"""Named verification suites; each produces a machine-readable pass/fail report."""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import bridge as br
from .. import flow, fraccalc, lyapunov as ly, measure as ms, noise as nz
from ..paths import PastPath, Path, _json_default
from ..rng import stream
from . import acceptance as acc
from .manifest import CheckResult


class UnknownSuite(KeyError):
    pass


@dataclass
class VerifyReport:
    suite: str
    results: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def to_json(self) -> str:
        body = {"suite": self.suite, "passed": self.passed, "wall_time": self.wall_time,
                "results": [asdict(r) for r in self.results]}
        return json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n"


def _exact(name: str, gap: float) -> CheckResult:
    return CheckResult(name, gap == 0.0, float(gap), 0.0)


def trivial_checks() -> list:
    """Checks whose expected value is exact by construction."""
    out = []
    z = PastPath.zeros(400, 0.01)
    out.append(_exact("mvn operator of zero path", np.abs(nz.mvn_operator(z, 0.3).values).max()))
    out.append(_exact("history operator of zero path", np.abs(nz.history_operator(z, 0.7, 1.0).values).max()))
    om, op = nz.wiener_pair(2.0, 1.0, 0.01, 1, seed=11)
    out.append(_exact("history operator at H=1/2", np.abs(nz.history_operator(om, 0.5, 1.0).values).max()))
    lv = nz.liouville_fbm(op, 0.5, 1.0).values
    out.append(_exact("Liouville fBm at H=1/2 is the reversed future path", np.abs(lv - op.values[::-1]).max()))
    out.append(_exact("concatenation at t=0", np.abs(nz.concat_P(0.0, om, op).values - om.values).max()))
    out.append(_exact("zero shift", np.abs(nz.shift_vartheta(0.0, op).values - op.values).max()))
    n = 256
    t = np.arange(n + 1) / n
    out.append(_exact("fractional integral of zero", np.abs(fraccalc.integral_values(0.4, 0 * t, 1 / n)).max()))
    c, a = 2.5, 0.3
    rd = fraccalc.frac_derivative_regularized(a, Path(1 / n, np.full(n + 1, c)), check_holder=False)
    expected = c * (1 - a) / math.gamma(2 - a)
    out.append(_exact("derivative of a constant", np.abs(rd.regular.values).max() + abs(rd.singular_coef[0] - expected)))
    out.append(_exact("Hoelder norm of a constant", fraccalc.holder_norm(Path(1 / n, np.full(n + 1, 3.0)), 0.5)))
    ys = stream(5).standard_normal((50, 1))
    out.append(_exact("lambda_plus of F(y) = -2y", np.abs(ly.lambda_plus(flow.contraction(2.0), ys) + 2.0).max()))
    out.append(_exact("lambda_plus of the double well at 0", abs(float(ly.lambda_plus(flow.double_well(), [[0.0]])[0]) - 1.0)))
    lp = ly.lambda_plus(flow.linear([[-1.0, 2.0], [0.0, -1.0]]), np.zeros((1, 2)))
    out.append(CheckResult("lambda_plus of a non-normal matrix", abs(float(lp[0])) <= 1e-15, abs(float(lp[0])), 1e-15))
    model = nz.NoiseModel.scalar(0.7, 1.3)
    noise = nz.sample_fbm(model, 1.0, 0.01, seed=4)
    tr = flow.solve_flow(flow.zero(), model, [0.4], noise)
    out.append(_exact("zero drift flow is x + sigma omega", np.abs(tr.path.values - (0.4 + 1.3 * noise.values)).max()))
    spec = br.BridgeSpec([0.0], 0.25, 0.3, 0.25 / 32)
    l = Path(spec.dt, np.zeros((spec.n + 1, 1)))
    g = br.girsanov_factor(flow.zero(), nz.NoiseModel.scalar(0.3, 1.0), l, [0.2], spec, 64, seed=1)
    out.append(_exact("Girsanov factor of zero drift", abs(g.value - 1.0) + g.stderr))
    x = stream(6).standard_normal(10_000)
    dens = ms.histogram_from_samples(x)
    out.append(CheckResult("histogram mass", abs(dens.total_mass() - 1.0) <= 1e-12, abs(dens.total_mass() - 1.0), 1e-12))
    inside = ms.histogram_from_samples(stream(7).uniform(-0.5, 0.5, 1000), bins=10, box=[[-3.0, 3.0]])
    outside = ms.histogram_from_samples(stream(8).uniform(2.5, 3.0, 1000), bins=10, box=[[-3.0, 3.0]])
    dw = flow.double_well()
    out.append(_exact("bound with all mass inside the ball", abs(ly.lyapunov_bound(dw, inside, 2.0) - 1.0)))
    out.append(_exact("bound with all mass outside the ball", abs(ly.lyapunov_bound(dw, outside, 2.0) + dw.C4)))
    return out


def noise_identity_checks() -> list:
    out = acc.criterion_2() + acc.criterion_4()
    p1, p2 = acc.smooth_test_paths()
    a, b = 1.7, -0.4
    combo = PastPath(p1.dt, a * p1.values + b * p2.values)
    for H in (0.3, 0.7):
        lhs = nz.mvn_operator(combo, H).values
        rhs = a * nz.mvn_operator(p1, H).values + b * nz.mvn_operator(p2, H).values
        gap = float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1.0))
        out.append(CheckResult(f"mvn operator linearity H={H}", gap <= 1e-12, gap, 1e-12))
        lhs = nz.history_operator(combo, H, 1.0).values
        rhs = a * nz.history_operator(p1, H, 1.0).values + b * nz.history_operator(p2, H, 1.0).values
        gap = float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1.0))
        out.append(CheckResult(f"history operator linearity H={H}", gap <= 1e-12, gap, 1e-12))
    return out


def constant_drift_gap(H: float, n: int, c: float = 0.7, y: float = 0.0, l0: float = 0.3, size: int = 20_000,
                       seed: int = 3):
    """(MC G, stderr, exact G) for F = c, where the density is the Gaussian shifted by c t0."""
    t0 = 0.25
    spec = br.BridgeSpec([0.0], t0, H, t0 / n)
    l = Path(spec.dt, np.full((n + 1, 1), l0))
    v = spec.endpoint_variance
    z = y - l0
    exact = math.exp(z * c * t0 / v - (c * t0) ** 2 / (2 * v))
    g = br.girsanov_factor(flow.constant([c]), nz.NoiseModel.scalar(H, 1.0), l, [y], spec, size, seed)
    return g.value, g.stderr, exact


def bridge_oracle_checks() -> list:
    out = acc.criterion_10()
    for H, n in ((0.3, 512), (0.7, 64)):
        for y in (0.0, 0.5, 1.0):
            val, se, exact = constant_drift_gap(H, n, y=y)
            out.append(CheckResult(f"constant drift G H={H} y={y}", abs(val - exact) <= 3 * se,
                                   abs(val - exact) / se, 3.0, f"MC {val:.6f}, exact {exact:.6f}"))
    return out


def acceptance_checks() -> list:
    out = []
    for res in acc.run_all():
        for c in res.checks:
            out.append(CheckResult(f"criterion {res.number}: {c.name}", c.passed, c.value, c.threshold, c.detail))
    return out


SUITES = {
    "trivial": trivial_checks,
    "noise-identities": noise_identity_checks,
    "bridge-oracles": bridge_oracle_checks,
    "acceptance": acceptance_checks,
}


def verify(suite: str) -> VerifyReport:
    if suite not in SUITES:
        raise UnknownSuite(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = SUITES[suite]()
    return VerifyReport(suite, results, time.perf_counter() - start)
