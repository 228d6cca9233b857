"""Physical-state signals that drive the twin.

Synthetic generators stand in for recorded sensor and trajectory data;
``load_csv_traces`` ingests recorded data in the documented CSV layout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

THERMO_HYGRO = "thermo_hygro"
POSITIONING = "positioning"
KINDS = (THERMO_HYGRO, POSITIONING)

DEFAULT_SLOT_S = 1e-3

CSV_HEADER = ("slot", "device_id", "value_x", "value_y")


class TraceParseError(ValueError):
    """Raised when a trace CSV violates the schema."""


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    kind: str
    priority_w: float
    rb_cost_b: int
    threshold_xi: float
    payload_bits_L: int
    tx_power_P: float
    distance_d: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown device kind {self.kind!r}")
        if self.priority_w < 0:
            raise ValueError("priority_w must be >= 0")
        if self.rb_cost_b < 1:
            raise ValueError("rb_cost_b must be >= 1")
        if self.threshold_xi < 0:
            raise ValueError("threshold_xi must be >= 0")
        if self.payload_bits_L < 1:
            raise ValueError("payload_bits_L must be >= 1")
        if self.tx_power_P <= 0 or self.distance_d <= 0:
            raise ValueError("tx_power_P and distance_d must be positive")

    @property
    def is_positioning(self) -> bool:
        return self.kind == POSITIONING


@dataclass(frozen=True)
class PhysicalTrace:
    """Per-device series of physical states, one sample per slot.

    ``samples`` has shape ``(T,)`` for scalar devices and ``(T, 2)`` for
    positioning devices.
    """

    device_id: int
    samples: np.ndarray
    slot_duration_s: float = DEFAULT_SLOT_S

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim not in (1, 2) or (s.ndim == 2 and s.shape[1] != 2):
            raise ValueError("samples must have shape (T,) or (T, 2)")
        if len(s) == 0:
            raise ValueError("trace must contain at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace samples must be finite")
        if self.slot_duration_s <= 0:
            raise ValueError("slot_duration_s must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def is_2d(self) -> bool:
        return self.samples.ndim == 2

    def __len__(self) -> int:
        return len(self.samples)

    def as_points(self) -> np.ndarray:
        """Samples as an ``(T, 2)`` array; scalar traces fill column 1 with 0."""
        if self.is_2d:
            return self.samples
        out = np.zeros((len(self.samples), 2))
        out[:, 0] = self.samples
        return out


def generate_scalar_trace(
    seed: int,
    length: int,
    base: float = 20.0,
    walk_sigma: float = 0.05,
    jump_prob: float = 0.01,
    jump_scale: float = 2.0,
    device_id: int = 0,
    slot_duration_s: float = DEFAULT_SLOT_S,
) -> PhysicalTrace:
    """Random walk with occasional Gaussian jumps, starting at ``base``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if walk_sigma < 0 or jump_scale < 0 or not 0 <= jump_prob <= 1:
        raise ValueError("invalid noise parameters")
    rng = np.random.default_rng(seed)
    n = length - 1
    steps = rng.normal(0.0, 1.0, n) * walk_sigma
    jumps = (rng.random(n) < jump_prob) * rng.normal(0.0, 1.0, n) * jump_scale
    samples = np.empty(length)
    samples[0] = base
    samples[1:] = base + np.cumsum(steps + jumps)
    return PhysicalTrace(device_id, samples, slot_duration_s)


def generate_trajectory_trace(
    seed: int,
    length: int,
    waypoints: Sequence[Sequence[float]],
    speed: float,
    max_dwell: int = 0,
    device_id: int = 0,
    slot_duration_s: float = DEFAULT_SLOT_S,
) -> PhysicalTrace:
    """Constant-speed motion around a closed loop of waypoints.

    On reaching a waypoint the device pauses for a seeded number of slots
    drawn uniformly from ``0..max_dwell``; with ``max_dwell=0`` the path is
    fully deterministic and any distance left over in a slot carries on to
    the next leg.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    pts = np.asarray(waypoints, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least 2 two-dimensional waypoints")
    if speed <= 0:
        raise ValueError("speed must be positive")
    if not np.any(np.diff(np.vstack([pts, pts[:1]]), axis=0)):
        raise ValueError("waypoint loop has zero length")
    if max_dwell < 0:
        raise ValueError("max_dwell must be >= 0")
    rng = np.random.default_rng(seed)

    out = np.empty((length, 2))
    pos = pts[0].copy()
    target = 1
    dwell = 0
    for t in range(length):
        out[t] = pos
        if dwell > 0:
            dwell -= 1
            continue
        budget = speed
        while budget > 0:
            goal = pts[target]
            gap = math.hypot(goal[0] - pos[0], goal[1] - pos[1])
            if gap > budget:
                pos = pos + (goal - pos) * (budget / gap)
                break
            pos = goal.copy()
            budget -= gap
            target = (target + 1) % len(pts)
            if max_dwell:
                dwell = int(rng.integers(0, max_dwell + 1))
                if dwell:
                    break
    return PhysicalTrace(device_id, out, slot_duration_s)


def write_csv_traces(path: str | Path, traces: Sequence[PhysicalTrace]) -> None:
    """Write traces in the loader's schema; floats use round-trip ``repr``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for tr in traces:
            for slot, value in enumerate(tr.samples):
                if tr.is_2d:
                    writer.writerow([slot, tr.device_id, repr(float(value[0])), repr(float(value[1]))])
                else:
                    writer.writerow([slot, tr.device_id, repr(float(value)), ""])


def load_csv_traces(path: str | Path, slot_duration_s: float = DEFAULT_SLOT_S) -> list[PhysicalTrace]:
    """Parse ``slot,device_id,value_x,value_y`` rows into one trace per device.

    Rows of one device must appear with slots 0, 1, 2, ... in file order.
    Errors name the 1-based file line (the header is line 1).
    """
    per_device: dict[int, list] = {}
    arity: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceParseError("empty file: missing header")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise TraceParseError(f"line 1: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in CSV_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise TraceParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                slot = int(row[col["slot"]])
                dev = int(row[col["device_id"]])
                x = float(row[col["value_x"]])
            except ValueError as exc:
                raise TraceParseError(f"line {lineno}: {exc}") from None
            y_raw = row[col["value_y"]].strip()
            n_vals = 1 if y_raw == "" else 2
            if dev in arity and arity[dev] != n_vals:
                raise TraceParseError(f"line {lineno}: device {dev} mixes scalar and 2-D rows")
            arity[dev] = n_vals
            samples = per_device.setdefault(dev, [])
            if slot != len(samples):
                raise TraceParseError(
                    f"line {lineno}: device {dev} expected slot {len(samples)}, got {slot}"
                )
            if n_vals == 1:
                samples.append(x)
            else:
                try:
                    samples.append((x, float(y_raw)))
                except ValueError as exc:
                    raise TraceParseError(f"line {lineno}: {exc}") from None
    traces = []
    for dev in sorted(per_device):
        try:
            traces.append(PhysicalTrace(dev, np.array(per_device[dev], dtype=np.float64), slot_duration_s))
        except ValueError as exc:
            raise TraceParseError(f"device {dev}: {exc}") from None
    return traces
