import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtsync.baselines import (FixedIntervalScheduler, InfeasibleSchedule, PollingScheduler,
                              fixed_interval_schedule, polling_schedule)


def test_polling_hand_sequence():
    # devices are 0-based here; the first scan starts at device 0
    ptr, seen = 0, []
    for _ in range(3):
        u, ptr = polling_schedule([1, 1, 1], 2, ptr)
        seen.append(set(np.flatnonzero(u).tolist()))
    assert seen == [{0, 1}, {2, 0}, {1, 2}]


def test_polling_everything_fits():
    u, _ = polling_schedule([1, 2, 5], 8, 1)
    assert u.tolist() == [1, 1, 1]


def test_polling_skips_oversized_device():
    ptr = 0
    for _ in range(10):
        u, ptr = polling_schedule([1, 6, 1], 5, ptr)
        assert u[1] == 0 and u.sum() == 2


def test_polling_serves_expensive_devices():
    # mixed costs like the default fleet: every device must get a turn
    b = [1] * 16 + [5] * 4
    s = PollingScheduler(b)
    counts = np.zeros(20)
    for _ in range(200):
        counts += s(None, 9)
    assert np.all(counts > 0)


@settings(max_examples=60, deadline=None)
@given(b=st.lists(st.integers(1, 6), min_size=1, max_size=12), M=st.integers(1, 20),
       ptr=st.integers(0, 50), slots=st.integers(1, 30))
def test_polling_never_exceeds_budget(b, M, ptr, slots):
    p = ptr % len(b)
    for _ in range(slots):
        u, p = polling_schedule(b, M, p)
        assert int(np.dot(b, u)) <= M
        assert 0 <= p < len(b)


def test_fixed_interval_two_identical_devices():
    assert fixed_interval_schedule([1, 1], [1, 1], 1, [1.0, 1.0], [1, 2, 4]) == [2, 2]


def test_fixed_interval_unconstrained_and_zero_change():
    assert fixed_interval_schedule([1, 2, 3], [1, 2, 5], 8, [0.1, 0.2, 0.3], [1, 2, 4]) == [1, 1, 1]
    T = fixed_interval_schedule([1, 1], [1, 1], 1, [0.0, 1.0], [1, 2, 4])
    assert T[0] == 4


def test_fixed_interval_infeasible_lists_devices():
    with pytest.raises(InfeasibleSchedule, match="device"):
        fixed_interval_schedule([1, 1], [5, 5], 1, [1, 1], [1, 2, 4])


def _brute(w, s, b, M, cands):
    best = None
    for T in itertools.product(cands, repeat=len(w)):
        if sum(bi / Ti for bi, Ti in zip(b, T)) <= M + 1e-12:
            v = sum(wi * si * Ti / 2 for wi, si, Ti in zip(w, s, T))
            best = v if best is None else min(best, v)
    return best


@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_fixed_interval_matches_enumeration(data):
    n = data.draw(st.integers(1, 4))
    cands = sorted(data.draw(st.sets(st.integers(1, 8), min_size=1, max_size=4)))
    w = data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))
    s = data.draw(st.lists(st.floats(0, 2), min_size=n, max_size=n))
    b = data.draw(st.lists(st.integers(1, 5), min_size=n, max_size=n))
    M = data.draw(st.integers(1, 12))
    best = _brute(w, s, b, M, cands)
    if best is None:
        with pytest.raises(InfeasibleSchedule):
            fixed_interval_schedule(w, b, M, s, cands)
        return
    T = fixed_interval_schedule(w, b, M, s, cands)
    assert sum(bi / Ti for bi, Ti in zip(b, T)) <= M + 1e-12
    got = sum(wi * si * Ti / 2 for wi, si, Ti in zip(w, s, T))
    assert got == pytest.approx(best, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(b=st.lists(st.integers(1, 5), min_size=1, max_size=8), M=st.integers(5, 20),
       seed=st.integers(0, 1000))
def test_fixed_interval_execution_within_budget(b, M, seed):
    rng = np.random.default_rng(seed)
    w, s = rng.random(len(b)), rng.random(len(b))
    sched = FixedIntervalScheduler.plan(w, b, M, s, [1, 2, 4, 8, 16])
    for _ in range(64):
        assert int(np.dot(b, sched(None, M))) <= M


def test_fixed_interval_offsets_and_priority():
    sched = FixedIntervalScheduler([1.0, 2.0, 1.0], [1, 1, 1], [1.0, 1.0, 1.0], [2, 2, 1])
    # offsets n mod T: device 0 due at even slots, device 1 at odd, device 2 always
    assert sched(None, 3).tolist() == [1, 0, 1]
    assert sched(None, 3).tolist() == [0, 1, 1]
    sched.reset()
    # budget 1: order is device 1, then 0 and 2 tied on w*s and broken by index
    assert sched.order == [1, 0, 2]
    assert sched(None, 1).tolist() == [1, 0, 0]
    assert sched(None, 1).tolist() == [0, 1, 0]
    # device 2 was due twice and never fit; it is still pending
    assert sched.pending.tolist() == [False, False, True]
