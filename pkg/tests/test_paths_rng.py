import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from fraclyap.paths import Path, PastPath, read_path_csv, sidecar, steps_on_grid
from fraclyap.rng import stream, streams


@given(k=st.integers(0, 10**6), dt=st.sampled_from([0.1, 0.01, 1 / 3, 1 / 256]))
def test_grid_steps_recover_integer_multiples(k, dt):
    assert steps_on_grid(k * dt, dt) == k


def test_off_grid_time_rejected():
    with pytest.raises(ValueError):
        steps_on_grid(0.015, 0.01)


@given(values=hnp.arrays(float, st.tuples(st.integers(2, 40), st.integers(1, 3)),
                         elements=st.floats(-1e6, 1e6)))
def test_path_csv_round_trip_is_exact(values):
    p = Path(0.125, values)
    q = read_path_csv(p.to_csv())
    assert np.array_equal(q.values, p.values)
    assert q.dt == p.dt


def test_past_path_times_and_lookup():
    p = PastPath.from_function(lambda t: t**2, 1.0, 0.25)
    assert np.allclose(p.times, [-1.0, -0.75, -0.5, -0.25, 0.0])
    assert p.at(-0.5)[0] == pytest.approx(0.25)
    assert p.anchored
    with pytest.raises(ValueError):
        p.at(-2.0)


def test_paths_are_read_only():
    p = Path(0.1, np.zeros(5))
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0


def test_truncate_keeps_prefix():
    p = Path(0.1, np.arange(11.0))
    assert np.array_equal(p.truncate(0.5).values[:, 0], np.arange(6.0))
    with pytest.raises(ValueError):
        p.truncate(2.0)


def test_sidecar_serializes_numpy_values():
    body = json.loads(sidecar({"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True)}))
    assert body == {"a": 1.5, "b": [0, 1, 2], "c": True}


@given(seed=st.integers(0, 2**40), index=st.integers(0, 2**20))
def test_streams_reproducible_and_index_separated(seed, index):
    a = stream(seed, index).standard_normal(4)
    assert np.array_equal(a, stream(seed, index).standard_normal(4))
    assert not np.array_equal(a, stream(seed, index + 1).standard_normal(4))


def test_stream_list_matches_individual_streams():
    many = streams(5, 3, offset=2)
    for k, g in enumerate(many):
        assert np.array_equal(g.integers(2**32, size=3), stream(5, 2 + k).integers(2**32, size=3))
