import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from dtsync.traces import (DeviceProfile, PhysicalTrace, TraceParseError, generate_scalar_trace,
                           generate_trajectory_trace, load_csv_traces, write_csv_traces)


def test_zero_noise_scalar_trace_is_constant():
    tr = generate_scalar_trace(0, 5, base=20, walk_sigma=0, jump_prob=0)
    assert tr.samples.tolist() == [20.0] * 5


def test_scalar_trace_deterministic():
    a = generate_scalar_trace(3, 200)
    b = generate_scalar_trace(3, 200)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, generate_scalar_trace(4, 200).samples)


def test_zero_length_rejected():
    with pytest.raises(ValueError):
        generate_scalar_trace(0, 0)


def test_mean_step_matches_mixture_moment():
    sigma, p, s = 0.05, 0.01, 2.0
    tr = generate_scalar_trace(7, 10_000, walk_sigma=sigma, jump_prob=p, jump_scale=s)
    d = np.abs(np.diff(tr.samples))
    # |N(0, v)| has mean sqrt(2 v / pi); the step is a two-component normal mixture
    quiet = math.sqrt(2 * sigma**2 / math.pi)
    jumpy = math.sqrt(2 * (sigma**2 + s**2) / math.pi)
    mean = (1 - p) * quiet + p * jumpy
    second = (1 - p) * sigma**2 + p * (sigma**2 + s**2)
    se = math.sqrt((second - mean**2) / len(d))
    assert abs(d.mean() - mean) < 2 * se


def test_trajectory_constant_velocity_line():
    tr = generate_trajectory_trace(0, 20, [(0, 0), (10, 0)], speed=1.0)
    assert tr.samples[3].tolist() == [3.0, 0.0]
    assert tr.samples[10].tolist() == [10.0, 0.0]


def test_trajectory_hits_waypoint_exactly():
    tr = generate_trajectory_trace(0, 30, [(0, 0), (0, 5), (5, 5)], speed=0.5)
    assert tr.samples[10].tolist() == [0.0, 5.0]


def test_trajectory_needs_two_waypoints():
    with pytest.raises(ValueError):
        generate_trajectory_trace(0, 10, [(0, 0)], speed=1.0)
    with pytest.raises(ValueError):
        generate_trajectory_trace(0, 10, [(2, 2), (2, 2)], speed=1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), speed=st.floats(0.01, 5.0), dwell=st.integers(0, 20),
       pts=st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=2, max_size=6))
def test_trajectory_step_never_exceeds_speed(seed, speed, dwell, pts):
    assume(len(set(pts)) > 1)
    tr = generate_trajectory_trace(seed, 300, pts, speed, max_dwell=dwell)
    step = np.hypot(*np.diff(tr.samples, axis=0).T)
    assert np.all(step <= speed + 1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), dwell=st.integers(0, 30))
def test_trajectory_deterministic(seed, dwell):
    pts = [(1, 1), (9, 1), (5, 9)]
    a = generate_trajectory_trace(seed, 200, pts, 0.3, max_dwell=dwell)
    b = generate_trajectory_trace(seed, 200, pts, 0.3, max_dwell=dwell)
    assert np.array_equal(a.samples, b.samples)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_csv_three_rows(tmp_path):
    p = _write(tmp_path / "t.csv", "slot,device_id,value_x,value_y\n0,4,1.5,\n1,4,2.5,\n2,4,-1,\n")
    (tr,) = load_csv_traces(p)
    assert tr.device_id == 4 and tr.samples.tolist() == [1.5, 2.5, -1.0]


def test_csv_gap_rejected(tmp_path):
    p = _write(tmp_path / "t.csv", "slot,device_id,value_x,value_y\n0,0,1,\n2,0,2,\n")
    with pytest.raises(TraceParseError, match="line 3"):
        load_csv_traces(p)


def test_csv_missing_column(tmp_path):
    p = _write(tmp_path / "t.csv", "slot,device_id,value_x\n0,0,1\n")
    with pytest.raises(TraceParseError, match="value_y"):
        load_csv_traces(p)


def test_csv_mixed_arity(tmp_path):
    p = _write(tmp_path / "t.csv", "slot,device_id,value_x,value_y\n0,0,1,\n1,0,2,3\n")
    with pytest.raises(TraceParseError, match="line 3"):
        load_csv_traces(p)


def test_csv_round_trip_bitwise(tmp_path):
    traces = [generate_scalar_trace(1, 300, device_id=0),
              generate_trajectory_trace(2, 300, [(1, 1), (9, 1), (5, 9)], 0.07, 15, device_id=1)]
    p = tmp_path / "rt.csv"
    write_csv_traces(p, traces)
    back = load_csv_traces(p)
    for a, b in zip(traces, back):
        assert a.device_id == b.device_id
        assert np.array_equal(a.samples, b.samples)


def test_physical_trace_rejects_nonfinite():
    with pytest.raises(ValueError):
        PhysicalTrace(0, np.array([1.0, np.nan]))


def test_profile_validation():
    with pytest.raises(ValueError):
        DeviceProfile(0, "thermo_hygro", 0.1, 0, 0.01, 2000, 0.5, 100.0)
    with pytest.raises(ValueError):
        DeviceProfile(0, "camera", 0.1, 1, 0.01, 2000, 0.5, 100.0)
