"""Digital-twin environment: virtual-state evolution, mismatch, reward and cost."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .channel import ChannelParams
from .traces import DeviceProfile, PhysicalTrace

log = logging.getLogger(__name__)

STALENESS_SCALE = 10.0
MISMATCH_SCALE = 10.0

EPISODE_LOG_HEADER = ("slot", "device_id", "X", "Xhat", "Z", "u", "gamma", "rb_used")


def mismatch_jnd(X: float, Xhat: float, xi: float) -> float:
    """Relative (just-noticeable-difference) mismatch, clamped at zero.

    A twin value of exactly zero has no relative scale; the absolute error
    is used instead and the event is logged.
    """
    if Xhat == 0:
        log.warning("mismatch_jnd: zero twin value, using absolute error")
        return max(abs(X) - xi, 0.0)
    return max(abs(X - Xhat) / abs(Xhat) - xi, 0.0)


def mismatch_positioning(X, Xhat, xi: float) -> float:
    d = math.hypot(X[0] - Xhat[0], X[1] - Xhat[1])
    return max(d - xi, 0.0)


def weighted_mismatch(Z_trajectory, w) -> float:
    """Time- and device-averaged priority-weighted mismatch ``(1/TN) sum_t w.Z_t``."""
    Z = np.atleast_2d(np.asarray(Z_trajectory, dtype=np.float64))
    if Z.size == 0:
        raise ValueError("trajectory must be nonempty")
    T, N = Z.shape
    return float(np.sum(Z @ np.asarray(w, dtype=np.float64)) / (T * N))


def nrmse(physical, virtual) -> float:
    """RMSE of twin vs physical, normalized by the physical range.

    2-D series use the Euclidean pointwise error and the diagonal of the
    physical bounding box.
    """
    x = np.asarray(physical, dtype=np.float64)
    xh = np.asarray(virtual, dtype=np.float64)
    if x.shape != xh.shape or len(x) < 2:
        raise ValueError("series must have equal length >= 2")
    if x.ndim == 1:
        err2 = (x - xh) ** 2
        span = x.max() - x.min()
    else:
        err2 = np.sum((x - xh) ** 2, axis=1)
        span = float(np.hypot(*(x.max(axis=0) - x.min(axis=0))))
    if span == 0:
        raise ValueError("physical series has zero range; NRMSE undefined")
    return float(math.sqrt(err2.mean()) / span)


@dataclass
class Observation:
    """What the base station knows about each device."""

    staleness_phi: np.ndarray
    last_mismatch_Y: np.ndarray
    last_gamma: np.ndarray

    @property
    def n_devices(self) -> int:
        return len(self.staleness_phi)

    def features(self, rb_costs=None, budget=None, staleness_scale: float = STALENESS_SCALE,
                 mismatch_scale: float = MISMATCH_SCALE) -> np.ndarray:
        """Feature vector ``[log1p(phi/s_phi), log1p(Y*s_Y), gamma]`` (+ ``b/M``).

        The log compresses long staleness runs so starved devices do not
        saturate downstream networks.
        """
        parts = [np.log1p(self.staleness_phi / staleness_scale),
                 np.log1p(self.last_mismatch_Y * mismatch_scale),
                 self.last_gamma.astype(np.float64)]
        if rb_costs is not None:
            parts.append(np.asarray(rb_costs, dtype=np.float64) / float(budget))
        return np.concatenate(parts)


@dataclass
class EnvSnapshot:
    slot_t: int
    physical_X: np.ndarray
    virtual_Xhat: np.ndarray
    mismatch_Z: np.ndarray
    in_flight: list
    rb_budget_M: int


@dataclass
class StepOutcome:
    reward_r: float
    cost_c: float
    next_observation: Observation
    truth: EnvSnapshot
    rb_used: int
    done: bool
    events: np.ndarray = field(repr=False)


def step_cost(rb_used: int, budget: int) -> float:
    """RB cost: the budget itself when within it, the consumption otherwise."""
    return float(budget if rb_used <= budget else rb_used)


class TwinEnv:
    """Slotted simulator of one twin deployment.

    Each ``step`` consumes one slot of the physical traces. Channel draws
    (fading and reception uniforms) are taken for every device every slot,
    so runs that differ only in the schedule see common random numbers.
    """

    def __init__(self, profiles: Sequence[DeviceProfile], traces: Sequence[PhysicalTrace],
                 channel: ChannelParams, rb_budget: int, seed: int,
                 slot_duration_s: float | None = None, backend: str | None = None,
                 record: bool = False, staleness_scale: float = STALENESS_SCALE,
                 mismatch_scale: float = MISMATCH_SCALE):
        if len(profiles) != len(traces):
            raise ValueError("one trace per device required")
        lengths = {len(tr) for tr in traces}
        if len(lengths) != 1:
            raise ValueError("all traces must have equal length")
        if min(lengths) < 2:
            raise ValueError("traces need at least 2 samples")
        for p, tr in zip(profiles, traces):
            if p.is_positioning != tr.is_2d:
                raise ValueError(f"device {p.id}: trace arity does not match kind {p.kind}")
        self.profiles = list(profiles)
        self.channel = channel
        self.N = len(profiles)
        self.T = lengths.pop()
        self.slot_s = slot_duration_s if slot_duration_s is not None else traces[0].slot_duration_s
        self._k = kernels.get_backend(backend)
        self._X = np.ascontiguousarray(np.stack([tr.as_points() for tr in traces], axis=1))
        self.kinds = np.array([1 if p.is_positioning else 0 for p in profiles], dtype=np.int8)
        self.xi = np.array([p.threshold_xi for p in profiles], dtype=np.float64)
        self.w = np.array([p.priority_w for p in profiles], dtype=np.float64)
        self.b = np.array([p.rb_cost_b for p in profiles], dtype=np.int64)
        self.dist = np.array([p.distance_d for p in profiles], dtype=np.float64)
        self.power = np.array([p.tx_power_P for p in profiles], dtype=np.float64)
        self.payload = np.array([p.payload_bits_L for p in profiles], dtype=np.float64)
        self.set_rb_budget(rb_budget)
        self.seed = seed
        self.record = record
        if staleness_scale <= 0 or mismatch_scale <= 0:
            raise ValueError("feature scales must be positive")
        self.staleness_scale = staleness_scale
        self.mismatch_scale = mismatch_scale
        self.reset()

    # ------------------------------------------------------------------
    def set_rb_budget(self, M_new: int) -> None:
        if M_new < 1:
            raise ValueError("RB budget must be >= 1")
        self.M = int(M_new)

    def reset(self) -> Observation:
        self.rng = np.random.default_rng(self.seed)
        self.t = 0
        self.xhat = self._X[0].copy()
        self.pend_due = np.full(self.N, -1, dtype=np.int64)
        self.pend_val = np.zeros((self.N, 2))
        self.pend_ok = np.zeros(self.N, dtype=np.int8)
        self.phi = np.zeros(self.N, dtype=np.int64)
        self.last_y = np.zeros(self.N)
        self.last_gamma = np.ones(self.N, dtype=np.int8)
        self.Z = np.zeros(self.N)
        self._events = np.full(self.N, -1, dtype=np.int8)
        self.zero_denominator_events = 0
        self.history_xhat = [self.xhat.copy()] if self.record else None
        self.history_u = [] if self.record else None
        self.history_events = [] if self.record else None
        return self.observation()

    @property
    def done(self) -> bool:
        return self.t >= self.T - 1

    def observation(self) -> Observation:
        return Observation(self.phi.copy(), self.last_y.copy(), self.last_gamma.copy())

    def features(self, obs: Observation | None = None) -> np.ndarray:
        obs = obs if obs is not None else self.observation()
        return obs.features(self.b, self.M, self.staleness_scale, self.mismatch_scale)

    def snapshot(self) -> EnvSnapshot:
        in_flight = [
            (int(n), self.pend_val[n].copy(), int(self.pend_due[n]))
            if self.pend_due[n] >= 0 else None
            for n in range(self.N)
        ]
        return EnvSnapshot(self.t, self._X[self.t].copy(), self.xhat.copy(), self.Z.copy(),
                           in_flight, self.M)

    @property
    def physical(self) -> np.ndarray:
        """All physical samples, shape ``(T, N, 2)``."""
        return self._X

    # ------------------------------------------------------------------
    def step(self, action) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        u = np.ascontiguousarray(action, dtype=np.int8)
        if u.shape != (self.N,):
            raise ValueError(f"action must have shape ({self.N},)")
        if np.any((u != 0) & (u != 1)):
            raise ValueError("action entries must be 0 or 1")
        fading = self.rng.exponential(self.channel.fading_mean, self.N)
        uniform = self.rng.random(self.N)
        t = self.t
        wsum, rb_used, n_zero = self._k.slot_step(
            t, u, fading, uniform, self._X[t], self._X[t + 1],
            self.kinds, self.xi, self.w, self.b, self.dist, self.power, self.payload,
            self.channel.rb_bandwidth_W, self.channel.noise_psd_N0,
            self.channel.waterfall_linear, self.slot_s,
            self.xhat, self.pend_due, self.pend_val, self.pend_ok,
            self.phi, self.last_y, self.last_gamma, self.Z, self._events)
        if n_zero:
            self.zero_denominator_events += n_zero
            log.warning("slot %d: %d zero twin value(s), absolute-error fallback", t + 1, n_zero)
        self.t = t + 1
        if self.record:
            self.history_xhat.append(self.xhat.copy())
            self.history_u.append(u.copy())
            self.history_events.append(self._events.copy())
        reward = -wsum / self.N
        return StepOutcome(reward, step_cost(rb_used, self.M), self.observation(),
                           self.snapshot(), int(rb_used), self.done, self._events.copy())

    # ------------------------------------------------------------------
    def virtual_series(self) -> np.ndarray:
        """Recorded twin states, shape ``(t + 1, N, 2)``; requires ``record=True``."""
        if not self.record:
            raise RuntimeError("environment was created with record=False")
        return np.stack(self.history_xhat)

    def write_episode_log(self, path) -> None:
        """Dump the recorded episode as ``slot,device_id,X,Xhat,Z,u,gamma,rb_used``.

        2-D states are written as ``x;y``. Row ``t`` holds the action taken at
        slot ``t`` and the state reached at slot ``t + 1``.
        """
        if not self.record:
            raise RuntimeError("environment was created with record=False")
        xh = self.virtual_series()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(EPISODE_LOG_HEADER)
            z = np.empty(self.N)
            for t, (u, ev) in enumerate(zip(self.history_u, self.history_events)):
                self._k.mismatch_vector(self._X[t + 1], xh[t + 1], self.kinds, self.xi, z)
                rb = int(self.b @ u)
                for n in range(self.N):
                    if self.kinds[n]:
                        X = f"{self._X[t + 1, n, 0]!r};{self._X[t + 1, n, 1]!r}"
                        Xh = f"{xh[t + 1, n, 0]!r};{xh[t + 1, n, 1]!r}"
                    else:
                        X, Xh = repr(float(self._X[t + 1, n, 0])), repr(float(xh[t + 1, n, 0]))
                    gamma = "" if ev[n] < 0 else int(ev[n])
                    wr.writerow([t + 1, n, X, Xh, repr(float(z[n])), int(u[n]), gamma, rb])
