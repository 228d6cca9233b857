"""Default device fleets and their synthetic physical traces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .traces import (DEFAULT_SLOT_S, POSITIONING, THERMO_HYGRO, DeviceProfile,
                     PhysicalTrace, generate_scalar_trace, generate_trajectory_trace)

ROOM_WAYPOINTS = ((1.0, 1.0), (9.0, 1.0), (9.0, 6.0), (5.0, 9.0), (1.0, 6.0))


@dataclass(frozen=True)
class KindSpec:
    """One group of identical devices."""

    label: str
    count: int
    kind: str
    weight_numerator: float  # priority is numerator / N
    rb_cost: int
    base: float = 20.0


@dataclass(frozen=True)
class FleetSpec:
    groups: tuple = (
        KindSpec("thermometer", 8, THERMO_HYGRO, 3.0, 1, base=20.0),
        KindSpec("hygrometer", 8, THERMO_HYGRO, 2.0, 1, base=40.0),
        KindSpec("positioning", 4, POSITIONING, 1.0, 5),
    )
    threshold_xi: float = 1e-2
    payload_bits: int = 2000
    tx_power: float = 0.5
    distance_range: tuple = (50.0, 150.0)
    walk_sigma: float = 0.05
    jump_prob: float = 0.01
    jump_scale: float = 2.0
    speed: float = 0.05
    max_dwell: int = 200
    slot_duration_s: float = DEFAULT_SLOT_S
    waypoints: tuple = field(default=ROOM_WAYPOINTS)
    # observation scalers fed to learned policies
    staleness_scale: float = 10.0
    mismatch_scale: float = 10.0

    def __post_init__(self):
        if sum(g.count for g in self.groups) < 1:
            raise ValueError("fleet must contain at least one device")

    @property
    def n_devices(self) -> int:
        return sum(g.count for g in self.groups)

    @classmethod
    def uniform_scalar(cls, n: int, **kw) -> "FleetSpec":
        """``n`` thermometers with unit RB cost and equal priority."""
        return cls(groups=(KindSpec("thermometer", n, THERMO_HYGRO, 1.0, 1),), **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "groups"}
        d["groups"] = [g.__dict__.copy() for g in self.groups]
        d["distance_range"] = list(self.distance_range)
        d["waypoints"] = [list(p) for p in self.waypoints]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FleetSpec":
        d = dict(d)
        if "groups" in d:
            d["groups"] = tuple(KindSpec(**g) for g in d["groups"])
        if "distance_range" in d:
            d["distance_range"] = tuple(d["distance_range"])
        if "waypoints" in d:
            d["waypoints"] = tuple(tuple(p) for p in d["waypoints"])
        return cls(**d)


def build_profiles(spec: FleetSpec, seed: int) -> list[DeviceProfile]:
    """Device profiles with distances drawn once per seed."""
    rng = np.random.default_rng(seed)
    n_total = spec.n_devices
    lo, hi = spec.distance_range
    dists = rng.uniform(lo, hi, n_total)
    out = []
    for g in spec.groups:
        for _ in range(g.count):
            n = len(out)
            out.append(DeviceProfile(n, g.kind, g.weight_numerator / n_total, g.rb_cost,
                                     spec.threshold_xi, spec.payload_bits, spec.tx_power,
                                     float(dists[n])))
    return out


def build_traces(spec: FleetSpec, seed: int, length: int) -> list[PhysicalTrace]:
    """One independent trace per device; a pure function of ``(spec, seed, length)``."""
    child = np.random.SeedSequence(seed).spawn(spec.n_devices)
    traces = []
    for g in spec.groups:
        for _ in range(g.count):
            n = len(traces)
            s = int(child[n].generate_state(1)[0])
            if g.kind == POSITIONING:
                # rotate the loop start so devices do not move in lockstep
                pts = list(spec.waypoints)
                k = s % len(pts)
                traces.append(generate_trajectory_trace(
                    s, length, pts[k:] + pts[:k], spec.speed, spec.max_dwell, n,
                    spec.slot_duration_s))
            else:
                traces.append(generate_scalar_trace(
                    s, length, g.base, spec.walk_sigma, spec.jump_prob, spec.jump_scale, n,
                    spec.slot_duration_s))
    return traces


def change_stats(traces: list[PhysicalTrace]) -> np.ndarray:
    """Mean per-slot change in mismatch units.

    Scalar devices use the relative change ``|dX| / |X|`` so the figure is
    comparable to the relative mismatch; positioning devices use step length.
    """
    out = np.empty(len(traces))
    for i, tr in enumerate(traces):
        s = tr.samples
        if len(s) < 2:
            out[i] = 0.0
        elif tr.is_2d:
            out[i] = float(np.mean(np.hypot(*np.diff(s, axis=0).T)))
        else:
            denom = np.maximum(np.abs(s[:-1]), 1e-12)
            out[i] = float(np.mean(np.abs(np.diff(s)) / denom))
    return out
