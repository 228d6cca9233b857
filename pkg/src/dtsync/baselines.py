"""Round-robin polling and fixed-interval scheduling baselines."""
from __future__ import annotations

import math
from functools import reduce
from typing import Sequence

import numpy as np


class InfeasibleSchedule(ValueError):
    pass


def polling_schedule(rb_costs: Sequence[int], M: int, pointer: int) -> tuple[np.ndarray, int]:
    """Cyclic greedy: scan from ``pointer`` and take every device that still fits.

    The next scan starts at the first device passed over for lack of budget,
    so every device gets its turn; if none was passed over it starts just
    after the last device taken. Devices with ``b_n > M`` never fit and never
    hold the pointer.
    """
    b = np.asarray(rb_costs, dtype=np.int64)
    N = len(b)
    u = np.zeros(N, dtype=np.int8)
    left = M
    last = first_missed = None
    for k in range(N):
        n = (pointer + k) % N
        if b[n] <= left:
            u[n] = 1
            left -= b[n]
            last = n
        elif first_missed is None and b[n] <= M:
            first_missed = n
    if first_missed is not None:
        return u, first_missed
    return u, (pointer if last is None else (last + 1) % N)


def _objective(w, s, periods):
    return float(sum(wi * si * T / 2.0 for wi, si, T in zip(w, s, periods)))


def fixed_interval_schedule(weights, rb_costs, M: int, change_stats,
                            period_candidates: Sequence[int]) -> list[int]:
    """Exact multiple-choice knapsack over candidate periods.

    Minimizes ``sum w_n s_n T_n / 2`` subject to ``sum b_n / T_n <= M``. Loads
    are integer multiples of ``1 / lcm(candidates)``, so the DP is exact.
    Ties go to the longer period.
    """
    cands = sorted(set(int(T) for T in period_candidates))
    if not cands or cands[0] < 1:
        raise ValueError("period candidates must be positive integers")
    w = np.asarray(weights, dtype=np.float64)
    s = np.asarray(change_stats, dtype=np.float64)
    b = np.asarray(rb_costs, dtype=np.int64)
    if np.any(s < 0):
        raise ValueError("change_stats must be nonnegative")
    N = len(b)
    L = reduce(math.lcm, cands)
    cap = int(M) * L
    loads = [[int(b[n]) * L // T for T in cands] for n in range(N)]
    min_load = sum(min(row) for row in loads)
    if min_load > cap:
        worst = sorted(range(N), key=lambda n: -b[n])
        detail = ", ".join(f"device {n} (b={b[n]}, load {b[n] / cands[-1]:.3g})" for n in worst)
        raise InfeasibleSchedule(
            f"budget {M} < minimum load {min_load / L:.4g} at period {cands[-1]}; binding: {detail}")

    INF = math.inf
    dp = np.full(cap + 1, INF)
    dp[0] = 0.0
    choice = np.zeros((N, cap + 1), dtype=np.int64)
    for n in range(N):
        new = np.full(cap + 1, INF)
        pick = np.zeros(cap + 1, dtype=np.int64)
        # longest period first so strict improvement keeps it on ties
        for j in range(len(cands) - 1, -1, -1):
            load = loads[n][j]
            if load > cap:
                continue
            cost = w[n] * s[n] * cands[j] / 2.0
            shifted = np.full(cap + 1, INF)
            shifted[load:] = dp[:cap + 1 - load] + cost
            better = shifted < new
            new[better] = shifted[better]
            pick[better] = j
        dp = new
        choice[n] = pick
    # among optimal end states prefer the smallest load
    used = int(np.flatnonzero(dp <= dp.min())[0])
    periods = [0] * N
    for n in range(N - 1, -1, -1):
        j = int(choice[n, used])
        periods[n] = cands[j]
        used -= loads[n][j]
    return periods


class PollingScheduler:
    name = "polling"

    def __init__(self, rb_costs):
        self.b = np.asarray(rb_costs, dtype=np.int64)
        self.pointer = 0

    def reset(self) -> None:
        self.pointer = 0

    def __call__(self, obs, M: int) -> np.ndarray:
        u, self.pointer = polling_schedule(self.b, M, self.pointer)
        return u


class FixedIntervalScheduler:
    """Executes a period assignment with staggered offsets ``n mod T_n``.

    Devices that are due but do not fit stay due and go first on ties by
    ``w * s`` (then device index) in later slots.
    """

    name = "dp"

    def __init__(self, weights, rb_costs, change_stats, periods):
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = np.asarray(rb_costs, dtype=np.int64)
        self.s = np.asarray(change_stats, dtype=np.float64)
        self.T = np.asarray(periods, dtype=np.int64)
        N = len(self.b)
        self.offset = np.arange(N) % self.T
        self.order = sorted(range(N), key=lambda n: (-self.w[n] * self.s[n], n))
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self.pending = np.zeros(len(self.b), dtype=bool)

    def __call__(self, obs, M: int) -> np.ndarray:
        due = self.pending | ((self.t - self.offset) % self.T == 0)
        u = np.zeros(len(self.b), dtype=np.int8)
        left = M
        for n in self.order:
            if due[n] and self.b[n] <= left:
                u[n] = 1
                left -= self.b[n]
        self.pending = due & (u == 0)
        self.t += 1
        return u

    @classmethod
    def plan(cls, weights, rb_costs, M, change_stats, period_candidates):
        periods = fixed_interval_schedule(weights, rb_costs, M, change_stats, period_candidates)
        return cls(weights, rb_costs, change_stats, periods)
