import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import special

from fraclyap import flow, measure as ms, noise as nz
from fraclyap.rng import stream

finite = st.floats(-50, 50, allow_nan=False)


@given(x=hnp.arrays(float, st.tuples(st.integers(20, 300), st.integers(1, 3)), elements=finite),
       bins=st.integers(1, 12))
def test_histogram_is_a_probability_measure(x, bins):
    lo, hi = x.min(axis=0) - 1.0, x.max(axis=0) + 1.0
    dens = ms.histogram_from_samples(x, bins=bins, box=np.column_stack([lo, hi]))
    assert dens.outside == 0
    assert dens.inside == x.shape[0]
    assert dens.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert np.sum(dens.density() * dens.bin_volumes()) == pytest.approx(1.0, abs=1e-12)


def test_too_small_box_raises():
    x = stream(0).standard_normal(1000)
    with pytest.raises(ms.BoxTooSmall):
        ms.histogram_from_samples(x, bins=10, box=[[-0.5, 0.5]])


def test_default_box_uses_freedman_diaconis_bins():
    x = stream(1).standard_normal(20000)
    dens = ms.histogram_from_samples(x)
    q75, q25 = np.percentile(x, [75, 25])
    h = 2 * (q75 - q25) * x.size ** (-1 / 3)
    width = dens.box[0, 1] - dens.box[0, 0]
    assert len(dens.edges[0]) - 1 == math.ceil(width / h)


def test_ball_mass_counts_partial_bins_by_length():
    # one sample per bin on [0, 1): the ball [-0.25, 0.25] covers 2.5 of 10 bins
    x = (np.arange(10) + 0.5) / 10
    dens = ms.histogram_from_samples(x, bins=10, box=[[0.0, 1.0]])
    mass, se = ms.mass_in_ball(dens, 0.25)
    assert mass == pytest.approx(0.25, abs=1e-15)
    assert se == pytest.approx(math.sqrt(0.25 * 0.75 / 10))


def test_ball_mass_in_the_plane_approximates_disc_area():
    g = (np.arange(200) + 0.5) / 200 * 2 - 1
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    dens = ms.histogram_from_samples(pts, bins=20, box=[[-1, 1], [-1, 1]])
    mass, _ = ms.mass_in_ball(dens, 0.8)
    assert mass == pytest.approx(math.pi * 0.64 / 4, abs=2e-3)


@given(var=st.floats(0.01, 100), R=st.floats(0.01, 20))
def test_normal_ball_mass_matches_error_function(var, R):
    assert ms.normal_ball_mass(var, R) == pytest.approx(special.erf(R / math.sqrt(2 * var)), abs=1e-12)


def test_geweke_separates_stationary_from_trending_series():
    iid = stream(4).standard_normal(20000)
    assert ms.geweke_z(iid) < 4.0
    assert ms.geweke_z(iid + np.linspace(0, 3, iid.size)) > 10.0


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
def test_fou_covariance_reduces_to_ou_at_half(t):
    m = nz.NoiseModel(0.5, np.array([[1.5]]))
    assert ms.fou_covariance(m, t)[0, 0] == pytest.approx(2.25 * (1 - math.exp(-2 * t)) / 2, rel=1e-12)


@pytest.mark.parametrize("H", [0.2, 0.3, 0.7, 0.9])
def test_fou_variance_tends_to_stationary_value(H):
    assert ms.fou_covariance(nz.NoiseModel(H), 60.0)[0, 0] == pytest.approx(ms.fou_stationary_variance(H), rel=1e-9)


def test_fou_covariance_scales_with_sigma_outer_product():
    S = np.array([[1.0, 0.5], [0.0, 2.0]])
    m = nz.NoiseModel(0.3, S)
    scalar = ms.fou_covariance(nz.NoiseModel(0.3), 0.7)[0, 0]
    assert np.allclose(ms.fou_covariance(m, 0.7), scalar * S @ S.T, rtol=1e-13)


@given(scale=st.floats(0.2, 5))
def test_tail_slope_scales_inversely_with_variance(scale):
    x = stream(1).standard_normal(100000)
    base = ms.tail_fit(ms.histogram_from_samples(x, bins=100)).slope
    scaled = ms.tail_fit(ms.histogram_from_samples(scale * x, bins=100)).slope
    assert scaled == pytest.approx(base / scale**2, rel=1e-9)


@pytest.mark.parametrize("sd", [0.5, 2.0])
def test_tail_slope_close_to_gaussian_exponent(sd):
    # the three-term model omits the 1/r^2 correction of the normal tail; that costs under 10 %
    x = sd * stream(1).standard_normal(400000)
    fit = ms.tail_fit(ms.histogram_from_samples(x, bins=200))
    assert fit.slope == pytest.approx(-1 / (2 * sd * sd), rel=0.1)
    assert fit.r2 > 0.99


def test_tail_fit_rejects_light_data():
    with pytest.raises(ms.InsufficientTailData):
        ms.tail_fit(ms.histogram_from_samples(stream(2).standard_normal(500), bins=10))


def test_invariant_density_refuses_non_monotone_drift():
    with pytest.raises(ValueError, match="eventually monotone"):
        ms.estimate_invariant_density(flow.constant([1.0]), nz.NoiseModel(0.3), 10.0, 0.01, 1.0)


def test_invariant_density_of_linear_contraction_matches_fou_variance():
    est = ms.estimate_invariant_density(flow.contraction(1.0), nz.NoiseModel(0.7), 520.0, 0.01, 20.0,
                                        bins=60, seeds=(0, 1), stride=10)
    c = est.centers()[0]
    p = est.probability()
    var = float(np.sum(p * c * c))
    assert var == pytest.approx(ms.fou_stationary_variance(0.7), rel=0.15)
    assert est.provenance["geweke_ok"]


def test_rescaled_ball_masses_agree():
    rep = ms.rescale_density_check(flow.double_well(), nz.NoiseModel(0.7, np.array([[3.0]])), 1.0,
                                   ms.ErgodicParams(T=220.0, dt=0.01, burn_in=20.0, seeds=[0, 1]))
    assert rep.within(3.0)
