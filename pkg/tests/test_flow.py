import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from fraclyap import flow, noise as nz
from fraclyap.paths import Path
from fraclyap.rng import stream

LIBRARY_CASES = {
    "contraction": lambda: flow.contraction(1.5, 2),
    "linear": lambda: flow.linear([[-1.0, 0.5], [0.0, -2.0]]),
    "double_well": lambda: flow.double_well(1),
    "double_well_3d": lambda: flow.double_well(3),
    "rotational": lambda: flow.rotational(),
    "constant": lambda: flow.constant([1.0, -2.0]),
    "zero": lambda: flow.zero(2),
}


@pytest.mark.parametrize("name", sorted(LIBRARY_CASES))
def test_library_drifts_satisfy_their_declared_constants(name):
    audit = flow.audit_drift(LIBRARY_CASES[name](), stream(10, 1))
    assert audit.ok, audit


def test_double_well_radius_must_exceed_one():
    with pytest.raises(ValueError):
        flow.double_well(R=1.0)


@given(s=st.floats(0.1, 10), y=st.floats(-3, 3))
def test_rescaled_drift_is_conjugate(s, y):
    dw = flow.double_well()
    resc = flow.rescaled_drift(dw, s)
    assert resc.F(np.array([y]))[0] == pytest.approx(dw.F(np.array([s * y]))[0] / s, rel=1e-12, abs=1e-12)
    assert resc.R == pytest.approx(dw.R / s)


@given(a=st.floats(0.1, 5), dt=st.sampled_from([0.01, 0.02, 0.05]), n=st.integers(1, 60))
def test_heun_matches_exact_multiplier_for_linear_ode(a, dt, n):
    dr = flow.contraction(a)
    Y = flow.heun_remainder(dr.F, np.array([1.0]), np.zeros((n + 1, 1)), dt)
    q = 1.0 - a * dt + 0.5 * (a * dt) ** 2
    assert Y[-1, 0] == pytest.approx(q**n, rel=1e-12)


@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
def test_zero_drift_flow_is_shifted_noise(H):
    m = nz.NoiseModel(H, np.array([[2.0, 0.0], [1.0, 1.0]]))
    w = nz.sample_fbm(m, 1.0, 1 / 128, seed=2)
    tr = flow.solve_flow(flow.zero(2), m, [0.5, -1.0], w)
    assert np.allclose(tr.path.values, np.array([0.5, -1.0]) + w.values @ m.sigma.T, rtol=0, atol=1e-14)


@pytest.mark.parametrize("H", [0.3, 0.7])
@pytest.mark.parametrize("make", [lambda: flow.double_well(), lambda: flow.contraction(2.0)])
def test_integral_form_residual_converges_under_refinement(H, make):
    dr = make()
    m = nz.NoiseModel(H)
    w = nz.sample_fbm(m, 2.0, 0.0025, seed=1)
    res = []
    for k in (1, 2, 4):
        tr = flow.solve_flow(dr, m, [1.5], Path(w.dt * k, w.values[::k]))
        res.append(flow.integral_residual(dr, m, tr))
    # at least first order in dt; Heun is second order on smooth coefficients
    assert res[1] / res[0] >= 2.0
    assert res[2] / res[1] >= 2.0


def test_tangent_flow_of_linear_drift_converges_to_matrix_exponential():
    A = flow.ROTATION_A
    dr = flow.linear(A)
    m = nz.NoiseModel(0.3, np.eye(2))
    errs = []
    for dt in (0.02, 0.01, 0.005):
        w = nz.sample_fbm(m, 1.0, dt, seed=1)
        tg = flow.tangent_flow(dr, flow.solve_flow(dr, m, [0.3, 0.1], w))
        errs.append(np.abs(tg.matrices[-1] - linalg.expm(A)).max())
    assert errs[0] < 2e-4
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("t,s", [(0.5, 0.5), (1.0, 0.3), (0.0, 1.0), (0.7, 0.0)])
def test_cocycle_property_holds_to_roundoff(H, t, s):
    om, op = nz.wiener_pair(40.0, 2.0, 0.01, 1, seed=3)
    r = flow.cocycle_residual(flow.double_well(), nz.NoiseModel(H), [0.4], om, op, t, s)
    assert r <= 1e-13


def test_explosive_drift_raises_blowup_with_time():
    m = nz.NoiseModel(0.3)
    w = nz.sample_fbm(m, 20.0, 0.01, seed=0)
    with pytest.raises(flow.FlowBlowUp) as info:
        flow.solve_flow(flow.linear([[3.0]]), m, [1.0], w)
    assert 0 < info.value.time < 20.0


def test_solver_rejects_dimension_and_grid_mismatch():
    m = nz.NoiseModel(0.3)
    w = nz.sample_fbm(m, 1.0, 0.01, seed=0)
    with pytest.raises(ValueError, match="dimension"):
        flow.solve_flow(flow.zero(2), m, [0.0, 0.0], w)
    with pytest.raises(ValueError, match="does not match"):
        flow.solve_flow(flow.zero(1), m, [0.0], w, dt=0.02)


def test_lockstep_batch_equals_individual_solves():
    dr = flow.double_well()
    m = nz.NoiseModel(0.7)
    paths = [nz.sample_fbm(m, 1.0, 0.01, seed=s) for s in range(3)]
    batch = flow.heun_remainder(dr.F, np.zeros((3, 1)), np.stack([p.values for p in paths]), 0.01)
    for k, p in enumerate(paths):
        single = flow.solve_flow(dr, m, [0.0], p).path.values
        assert np.array_equal(batch[k], single)


def test_ergodic_run_is_seed_deterministic_and_batch_invariant():
    dr = flow.double_well()
    m = nz.NoiseModel(0.3)
    a = flow.ergodic_run(dr, m, 30.0, 0.01, 5.0, [4, 9], stride=10)
    b = flow.ergodic_run(dr, m, 30.0, 0.01, 5.0, [9], stride=10)
    assert np.array_equal(a.samples[1], b.samples[0])
    assert np.array_equal(a.block_growth[1], b.block_growth[0])
    assert a.samples.shape == (2, 250, 1)


def test_a_priori_bound_validates_on_held_out_replicates():
    dr = flow.double_well()
    m = nz.NoiseModel(0.5)
    trajs = []
    for r in range(120):
        x0 = [(-1.0, 0.0, 2.0)[r % 3]]
        trajs.append(flow.solve_flow(dr, m, x0, nz.sample_fbm(m, 2.0, 0.01, seed=r)))
    rep = flow.a_priori_bound_check(dr, m, trajs)
    assert rep.L > 0 and math.isfinite(rep.L)
    assert rep.n_validation > 50
    assert rep.violations == 0
    with pytest.raises(ValueError):
        flow.a_priori_bound_check(dr, m, trajs[:10])
