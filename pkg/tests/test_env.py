import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtsync import kernels
from dtsync.channel import ChannelParams
from dtsync.env import (EPISODE_LOG_HEADER, TwinEnv, mismatch_jnd, mismatch_positioning, nrmse,
                        step_cost, weighted_mismatch)
from dtsync.fleet import FleetSpec, build_profiles, build_traces
from dtsync.traces import POSITIONING, THERMO_HYGRO, DeviceProfile, PhysicalTrace

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def small_env(M=18, seed=0, length=200, record=False, backend=None):
    spec = FleetSpec()
    return TwinEnv(build_profiles(spec, seed), build_traces(spec, seed, length), ChannelParams(),
                   M, seed=seed, record=record, backend=backend)


def test_mismatch_jnd_examples():
    assert mismatch_jnd(20, 20, 0.01) == 0
    assert mismatch_jnd(21, 20, 0.01) == pytest.approx(0.04, abs=1e-15)
    assert mismatch_jnd(20.1, 20, 0.01) == 0


def test_mismatch_jnd_zero_twin_falls_back(caplog):
    assert mismatch_jnd(0.5, 0.0, 0.01) == pytest.approx(0.49)
    assert "zero twin value" in caplog.text


def test_mismatch_positioning_examples():
    assert mismatch_positioning((1, 2), (1, 2), 0.01) == 0
    assert mismatch_positioning((3, 4), (0, 0), 0.01) == pytest.approx(4.99, abs=1e-15)
    assert mismatch_positioning((3, 4), (0, 0), 5.0) == 0


def test_weighted_mismatch_examples():
    assert weighted_mismatch(np.zeros((4, 3)), [1, 2, 3]) == 0
    assert weighted_mismatch([[2.0], [4.0]], [1.0]) == 3.0


def test_nrmse_examples():
    assert nrmse([0, 1, 2, 3], [0, 1, 2, 3]) == 0
    assert nrmse([0, 1, 2, 3], [0, 1, 2, 5]) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        nrmse([2, 2, 2], [1, 2, 3])


def test_cost_branches():
    assert step_cost(7, 18) == 18
    assert step_cost(36, 18) == 36
    assert step_cost(36, 36) == 36


def _two_device_env(M=5):
    profs = [DeviceProfile(0, THERMO_HYGRO, 0.15, 1, 0.01, 2000, 0.5, 100.0),
             DeviceProfile(1, POSITIONING, 0.05, 1, 0.01, 2000, 0.5, 100.0)]
    traces = [PhysicalTrace(0, np.array([20.0, 21.0, 21.0])),
              PhysicalTrace(1, np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]))]
    return TwinEnv(profs, traces, ChannelParams(), M, seed=0)


def test_step_reward_hand_example():
    env = _two_device_env()
    out = env.step(np.array([0, 0]))
    assert out.truth.mismatch_Z.tolist() == pytest.approx([0.04, 4.99], abs=1e-15)
    # -(0.15 * 0.04 + 0.05 * 4.99) / 2
    assert out.reward_r == pytest.approx(-0.12775, abs=1e-15)
    assert out.cost_c == 5


def test_idle_step_with_static_world_is_free():
    profs = [DeviceProfile(0, THERMO_HYGRO, 0.5, 1, 0.01, 2000, 0.5, 100.0)]
    env = TwinEnv(profs, [PhysicalTrace(0, np.full(4, 20.0))], ChannelParams(), 3, seed=0)
    out = env.step(np.array([0]))
    assert out.reward_r == 0 and out.cost_c == 3


def test_cost_example_from_fleet():
    profs = [DeviceProfile(i, THERMO_HYGRO, 0.1, b, 0.01, 2000, 0.5, 100.0)
             for i, b in enumerate((1, 1, 5))]
    traces = [PhysicalTrace(i, np.full(5, 20.0)) for i in range(3)]
    env = TwinEnv(profs, traces, ChannelParams(), 18, seed=0)
    assert env.step(np.ones(3, dtype=int)).cost_c == 18
    full = small_env(M=18)
    assert full.b.sum() == 36
    assert full.step(np.ones(20, dtype=int)).cost_c == 36
    full.set_rb_budget(36)
    assert full.step(np.ones(20, dtype=int)).cost_c == 36


def test_budget_change_affects_only_cost():
    a, b = small_env(M=30), small_env(M=30)
    rng = np.random.default_rng(2)
    b.set_rb_budget(10)
    for _ in range(50):
        u = (rng.random(20) < 0.4).astype(int)
        oa, ob = a.step(u), b.step(u)
        assert oa.reward_r == ob.reward_r
        assert np.array_equal(oa.next_observation.staleness_phi, ob.next_observation.staleness_phi)
        assert ob.cost_c >= 10 and oa.cost_c >= 30
    with pytest.raises(ValueError):
        a.set_rb_budget(0)


def test_action_validation():
    env = small_env()
    with pytest.raises(ValueError):
        env.step(np.ones(3, dtype=int))
    with pytest.raises(ValueError):
        env.step(np.full(20, 2))


def test_episode_ends_with_trace():
    env = small_env(length=4)
    for _ in range(3):
        out = env.step(np.zeros(20, dtype=int))
    assert out.done and env.done
    with pytest.raises(RuntimeError):
        env.step(np.zeros(20, dtype=int))


def _rollout(env, T, seed=5, p=0.35):
    rng = np.random.default_rng(seed)
    outs = []
    for _ in range(T):
        outs.append(env.step((rng.random(env.N) < p).astype(int)))
    return outs


def test_invariants_along_rollout():
    env = small_env(length=400, record=True)
    prev_phi = env.observation().staleness_phi
    prev_xhat = env.xhat.copy()
    Zs = []
    rewards = []
    for out in _rollout(env, 399):
        s = out.truth
        assert np.all(s.mismatch_Z >= 0)
        assert out.cost_c >= env.M and (out.cost_c > env.M) == (out.rb_used > env.M)
        ack = out.events == 1
        phi = out.next_observation.staleness_phi
        assert np.all(phi[ack] == 0) and np.all(phi[~ack] == prev_phi[~ack] + 1)
        # twin only moves on a successful delivery, and always to a past physical sample
        changed = np.any(s.virtual_Xhat != prev_xhat, axis=1)
        assert not np.any(changed & ~ack)
        for n in np.flatnonzero(ack):
            past = env.physical[: s.slot_t, n]
            assert np.any(np.all(past == s.virtual_Xhat[n], axis=1))
        prev_phi, prev_xhat = phi, s.virtual_Xhat.copy()
        Zs.append(s.mismatch_Z)
        rewards.append(out.reward_r)
    # episode-average reward is exactly minus the weighted mismatch
    assert -np.mean(rewards) == pytest.approx(weighted_mismatch(Zs, env.w), abs=1e-12)


def test_observation_ignores_unscheduled_truth():
    # two worlds that differ only in an unscheduled device's physical path
    spec = FleetSpec()
    profs = build_profiles(spec, 0)
    tr1 = build_traces(spec, 0, 60)
    tr2 = list(tr1)
    tr2[3] = PhysicalTrace(3, tr1[3].samples + np.linspace(0, 5, 60))
    e1 = TwinEnv(profs, tr1, ChannelParams(), 18, seed=1)
    e2 = TwinEnv(profs, tr2, ChannelParams(), 18, seed=1)
    rng = np.random.default_rng(0)
    for _ in range(59):
        u = (rng.random(20) < 0.4).astype(int)
        u[3] = 0
        o1, o2 = e1.step(u).next_observation, e2.step(u).next_observation
        for f in ("staleness_phi", "last_mismatch_Y", "last_gamma"):
            assert np.array_equal(getattr(o1, f), getattr(o2, f))


def test_rerun_is_bitwise_identical():
    a = [o.reward_r for o in _rollout(small_env(seed=3), 150)]
    b = [o.reward_r for o in _rollout(small_env(seed=3), 150)]
    assert a == b


@needs_ext
def test_backends_bitwise_equal():
    ea, eb = small_env(length=1000, backend="python"), small_env(length=1000, backend="cython")
    for oa, ob in zip(_rollout(ea, 999), _rollout(eb, 999)):
        assert oa.reward_r == ob.reward_r and oa.rb_used == ob.rb_used
        assert np.array_equal(oa.truth.virtual_Xhat, ob.truth.virtual_Xhat)
        assert np.array_equal(oa.events, ob.events)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12))
def test_mismatch_kernel_backends_agree(seed, n):
    r = np.random.default_rng(seed)
    x = r.normal(0, 10, (n, 2))
    xh = r.normal(0, 10, (n, 2))
    xh[r.random(n) < 0.2, 0] = 0.0
    kinds = (r.random(n) < 0.5).astype(np.int8)
    xi = r.uniform(0, 0.5, n)
    za, zb = np.empty(n), np.empty(n)
    ca = kernels.get_backend("python").mismatch_vector(x, xh, kinds, xi, za)
    cb = kernels.get_backend("cython").mismatch_vector(x, xh, kinds, xi, zb)
    assert ca == cb and np.array_equal(za, zb)


def test_episode_log(tmp_path):
    env = small_env(length=30, record=True)
    outs = _rollout(env, 29)
    p = tmp_path / "ep.csv"
    env.write_episode_log(p)
    rows = list(csv.reader(open(p, encoding="utf-8")))
    assert tuple(rows[0]) == EPISODE_LOG_HEADER
    assert len(rows) == 1 + 29 * 20
    last = [r for r in rows[1:] if r[0] == "29"]
    assert [float(r[4]) for r in last] == outs[-1].truth.mismatch_Z.tolist()
    assert int(last[0][7]) == outs[-1].rb_used


def test_features_shape_and_scaling():
    env = small_env()
    f = env.features()
    assert f.shape == (80,)
    assert np.all(f[-20:] == env.b / env.M)
