"""Time the compiled and numpy slot kernels on the default 20-device fleet.

    python3 benchmarks/bench_kernels.py [--slots 2000] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dtsync import kernels
from dtsync.channel import ChannelParams
from dtsync.env import TwinEnv
from dtsync.fleet import FleetSpec, build_profiles, build_traces


def rollout_time(backend: str, slots: int, repeat: int) -> tuple[float, float]:
    fleet = FleetSpec()
    profiles = build_profiles(fleet, 0)
    traces = build_traces(fleet, 0, slots + 1)
    env = TwinEnv(profiles, traces, ChannelParams(), 15, seed=0, backend=backend)
    actions = np.random.default_rng(0).integers(0, 2, (slots, env.N)).astype(np.int8)

    def run():
        env.reset()
        total = 0.0
        for u in actions:
            total += env.step(u).reward_r
        return total

    checksum = run()
    best = min(timeit.repeat(run, number=1, repeat=repeat))
    return best / slots, checksum


def kernel_time(backend: str, n: int, number: int) -> float:
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(1)
    X = rng.uniform(1, 2, (n, 2))
    Xh = rng.uniform(1, 2, (n, 2))
    kinds = (np.arange(n) % 2).astype(np.int8)
    xi = np.full(n, 1e-2)
    out = np.empty(n)
    t = timeit.timeit(lambda: k.mismatch_vector(X, Xh, kinds, xi, out), number=number)
    return t / number


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.append("cython")
    except RuntimeError:
        print("compiled kernels not built; timing numpy only")

    rows = {}
    for b in backends:
        per_slot, checksum = rollout_time(b, args.slots, args.repeat)
        per_call = kernel_time(b, 20, 20000)
        rows[b] = (per_slot, per_call, checksum)
        print(f"{b:>7}: env.step {per_slot * 1e6:8.2f} us/slot   "
              f"mismatch_vector {per_call * 1e6:6.2f} us/call   reward sum {checksum!r}")
    if len(rows) == 2:
        py, cy = rows["python"], rows["cython"]
        print(f"speedup: env.step x{py[0] / cy[0]:.2f}, mismatch_vector x{py[1] / cy[1]:.2f}; "
              f"identical rewards: {py[2] == cy[2]}")


if __name__ == "__main__":
    main()
