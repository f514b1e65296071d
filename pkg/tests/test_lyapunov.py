import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from fraclyap import flow, lyapunov as ly, measure as ms, noise as nz
from fraclyap.rng import stream

entries = st.floats(-5, 5)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
@given(data=st.data())
def test_lambda_plus_matches_symmetric_eigensolver(d, data):
    A = data.draw(hnp.arrays(float, (d, d), elements=entries))
    got = ly.lambda_plus(flow.linear(A), np.zeros((1, d)))[0]
    want = np.linalg.eigvalsh(0.5 * (A + A.T))[-1]
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


@given(a=hnp.arrays(float, (6, 2), elements=st.floats(-3, 3)),
       delta=hnp.arrays(float, (6, 2), elements=st.floats(-1, 1)))
def test_drift_difference_is_exact_for_polynomial_drift(a, delta):
    dr = flow.rotational()
    direct = dr.F(a + delta) - dr.F(a)
    assert np.allclose(ly.drift_difference(dr, a, delta), direct, rtol=1e-10, atol=1e-11)


def test_drift_difference_keeps_relative_precision_for_tiny_perturbations():
    dr = flow.double_well()
    a = np.array([[1.3]])
    delta = np.array([[1e-13]])
    exact = (1.0 - 3.0 * 1.3**2) * 1e-13 - 3 * 1.3 * 1e-26 - 1e-39
    assert ly.drift_difference(dr, a, delta)[0, 0] == pytest.approx(exact, rel=1e-12)


@given(a=st.floats(0.1, 4), n=st.integers(1, 200))
def test_separation_under_contraction_follows_heun_multiplier(a, n):
    dt = 0.01
    base = np.zeros((n + 1, 1))
    sep = ly.separation_flow(flow.contraction(a), base, np.array([[1e-3], [-2e-3]]), dt)
    q = 1.0 - a * dt + 0.5 * (a * dt) ** 2
    assert sep[0, -1] == pytest.approx(1e-3 * q**n, rel=1e-10)
    assert sep[1, -1] == pytest.approx(2e-3 * q**n, rel=1e-10)


@pytest.mark.parametrize("a", [0.5, 2.0])
def test_contraction_exponent_recovered(a):
    est = ly.estimate_top_lyapunov(flow.contraction(a), nz.NoiseModel(0.3), 110.0, 0.01, 10.0, seed=1)
    assert abs(est.lambda1_hat + a) < 1e-3
    assert est.within_gronwall


def test_pooled_seeds_agree_with_single_runs():
    dr = flow.double_well()
    m = nz.NoiseModel(0.7, np.array([[2.0]]))
    pooled = ly.estimate_top_lyapunov(dr, m, 120.0, 0.01, 20.0, seed=[3, 4])
    single = [ly.estimate_top_lyapunov(dr, m, 120.0, 0.01, 20.0, seed=s) for s in (3, 4)]
    assert pooled.lambda1_hat == pytest.approx(np.mean([s.lambda1_hat for s in single]), rel=1e-12)
    assert pooled.block_means.shape == (2, 20)
    assert pooled.lambda1_hat <= dr.C3 + ly.GRONWALL_TOL


def test_short_window_and_few_blocks_refused():
    dr = flow.contraction(1.0)
    m = nz.NoiseModel(0.3)
    with pytest.raises(ly.PreconditionError):
        ly.estimate_top_lyapunov(dr, m, 50.0, 0.01, 0.0)
    with pytest.raises(ly.PreconditionError):
        ly.estimate_top_lyapunov(dr, m, 150.0, 0.01, 10.0, n_blocks=10)


def test_bound_for_linear_contraction_equals_rate():
    # with C4 = a and lambda_plus = -a everywhere the bound is -a regardless of the density
    a = 1.7
    samples = stream(2).standard_normal((5000, 1))
    dens = ms.histogram_from_samples(samples, bins=30)
    assert ly.lyapunov_bound(flow.contraction(a), dens, 1.0) == pytest.approx(-a, rel=1e-12)


def test_bound_preconditions():
    dens = ms.histogram_from_samples(stream(3).standard_normal((4000, 1)), bins=20)
    dw = flow.double_well()
    with pytest.raises(ValueError, match="monotonicity radius"):
        ly.lyapunov_bound(dw, dens, 1.0)
    with pytest.raises(ValueError, match="support box"):
        ly.lyapunov_bound(dw, dens, 50.0)
    with pytest.raises(ValueError, match="positive"):
        ly.lyapunov_bound(dw, dens, -1.0)


def _row(sig, lam, se, mass, mse, bound):
    return ly.SweepRow(sig, lam, se, mass, mse, bound)


def test_sweep_table_predicates():
    good = ly.SweepTable(0.3, 2.0, [_row(0.5, 0.2, 0.01, 0.9, 0.01, 0.5), _row(5.0, -1.0, 0.05, 0.4, 0.01, -0.5)])
    assert good.negative_at_largest() and good.mass_decrease_significant() and good.bound_respected()
    assert good.mass_monotone()
    bad = ly.SweepTable(0.3, 2.0, [_row(0.5, 0.2, 0.01, 0.5, 0.1, 0.0), _row(5.0, -0.01, 0.05, 0.45, 0.1, -2.0)])
    assert not bad.negative_at_largest()
    assert not bad.mass_decrease_significant()
    assert not bad.bound_respected()
    header, *rows = good.to_csv().strip().split("\n")
    assert header == "sigma_norm,lambda1,stderr,mass_in_ball,bound"
    assert len(rows) == 2


def test_sweep_rows_sorted_and_thread_count_irrelevant():
    dr = flow.double_well()
    kw = dict(T=110.0, dt=0.01, seeds=[0], burn_in=10.0, R=2.0)
    one = ly.sigma_sweep(dr, 0.7, [2.0, 0.5], threads=1, **kw)
    two = ly.sigma_sweep(dr, 0.7, [2.0, 0.5], threads=2, **kw)
    assert [r.sigma_norm for r in one.rows] == [0.5, 2.0]
    assert one.to_csv() == two.to_csv()


def test_stability_probe_requires_margin_and_positive_rate():
    prior = ly.LyapunovEstimate(-1.0, 0.1, 100.0, 10.0, [0], 0.01)
    dr = flow.contraction(1.0)
    m = nz.NoiseModel(0.3)
    with pytest.raises(ly.PreconditionError):
        ly.local_stability_probe(dr, m, [0.0], 1e-2, 0.95, 5.0, 0, prior)
    with pytest.raises(ly.PreconditionError):
        ly.local_stability_probe(dr, m, [0.0], 1e-2, -0.5, 5.0, 0, prior)


def test_stability_probe_on_contraction_stays_bounded():
    a = 2.0
    prior = ly.LyapunovEstimate(-a, 1e-6, 100.0, 10.0, [0], 0.01)
    rep = ly.local_stability_probe(flow.contraction(a), nz.NoiseModel(0.3), [0.5], 1e-2, 1.0, 10.0, 0, prior)
    # e^{t} e^{-2t} decays, so the weighted sup is the initial separation
    assert rep.ratio == pytest.approx(1.0, rel=1e-12)
    assert not rep.flagged
