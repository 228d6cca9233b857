"""Experiment configuration, evaluation and study drivers."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .agent import Agent, AgentConfig, TrainingReport, train
from .baselines import FixedIntervalScheduler, PollingScheduler
from .channel import ChannelParams
from .env import TwinEnv, nrmse
from .fleet import FleetSpec, build_profiles, build_traces, change_stats
from .oracles import (brute_force_cmdp, random_mdp, random_tiny_cmdp, separating_instance,
                      statewise_feasible, expectation_feasible, tabular_soft_policy_iteration,
                      value_iteration)

log = logging.getLogger(__name__)

CURVES_HEADER = ("episode", "variant", "seed", "reward", "cost", "violation_rate",
                 "weighted_mismatch")
SWEEP_HEADER = ("M", "scheduler", "seed", "weighted_mismatch", "nrmse", "rb_mean")
HIST_HEADER = ("M", "rb_used", "count")

EVAL_STREAM = 1_000_003  # seed-sequence key separating evaluation traces from training


def desk_agent_config(**kw) -> AgentConfig:
    """Agent settings sized for a laptop run; see README for the rationale."""
    base = dict(hidden=64, n_hidden=2, batch_size=128, lr_Q=1e-3, lr_pi=1e-3,
                lr_alpha=1e-3, lr_lambda=3e-4, rho=0.01, buffer_cap=4000, warmup=500,
                gamma=0.5, gamma_C=0.5, reward_scale=1000.0, cost_scale=0.1, cost_offset=True,
                cost_slack=0.03, lambda_init=0.1, alpha_init=0.5, target_entropy=0.2,
                critic_interactions=True, lambda_every_m_lambda=4)
    base.update(kw)
    return AgentConfig(**base)


@dataclass
class ExperimentConfig:
    scenario: str = "convergence"
    fleet: FleetSpec = field(default_factory=FleetSpec)
    channel: ChannelParams = field(default_factory=ChannelParams)
    agent: AgentConfig = field(default_factory=desk_agent_config)
    budget_schedule: list = field(default_factory=lambda: [[0, 30], [60, 10], [80, 26]])
    episodes: int = 100
    slots: int = 50
    eval_slots: int = 400
    eval_episodes: int = 2
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    M_values: list = field(default_factory=lambda: [9, 15, 27, 36])
    train_budgets: list | None = None  # sample M per episode from this set
    N_values: list = field(default_factory=lambda: [10, 15, 20, 25])
    M_fixed: int = 10
    period_candidates: list = field(default_factory=lambda: [1, 2, 3, 4, 6, 8, 12, 16, 24, 48])
    eval_mode: str = "greedy"
    out: str = "out"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.episodes < 0 or self.slots < 1:
            raise ValueError("episodes must be >= 0 and slots >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fleet"] = self.fleet.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        if "fleet" in d:
            kw["fleet"] = FleetSpec.from_dict(d.pop("fleet"))
        if "channel" in d:
            kw["channel"] = ChannelParams(**d.pop("channel"))
        if "agent" in d:
            kw["agent"] = desk_agent_config(**d.pop("agent"))
        return cls(**kw, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sub_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def make_env(fleet: FleetSpec, channel: ChannelParams, M: int, seed: int, stream: int,
             length: int, record: bool = False) -> TwinEnv:
    """Environment whose traces and channel draws depend only on ``(seed, stream)``."""
    profiles = build_profiles(fleet, seed)
    traces = build_traces(fleet, _sub_seed(seed, stream, 0), length)
    return TwinEnv(profiles, traces, channel, M, seed=_sub_seed(seed, stream, 1), record=record,
                   staleness_scale=fleet.staleness_scale, mismatch_scale=fleet.mismatch_scale)


def training_env_factory(cfg: ExperimentConfig, seed: int, fleet: FleetSpec | None = None):
    fleet = fleet or cfg.fleet

    def factory(episode: int, M: int) -> TwinEnv:
        return make_env(fleet, cfg.channel, M, seed, episode, cfg.slots + 1)
    return factory


# ----------------------------------------------------------------------
# schedulers and evaluation

class CrlScheduler:
    name = "crl"

    def __init__(self, agent: Agent, rb_costs, mode: str = "greedy", seed: int = 0,
                 scales: tuple = (100.0, 1.0)):
        self.agent = agent
        self.b = np.asarray(rb_costs)
        self.scales = scales
        self.mode = mode
        self.rng = np.random.default_rng(seed)

    def reset(self) -> None:
        pass

    def __call__(self, obs, M: int) -> np.ndarray:
        return self.agent.act(obs.features(self.b, M, *self.scales), self.mode, self.rng)


def _scales(fleet: FleetSpec) -> tuple:
    return (fleet.staleness_scale, fleet.mismatch_scale)


def plan_dp(fleet: FleetSpec, seed: int, M: int, candidates, length: int = 2000):
    """Fixed-interval plan from calibration traces that no evaluation run reuses."""
    profiles = build_profiles(fleet, seed)
    stats = change_stats(build_traces(fleet, _sub_seed(seed, 7, 0), length))
    w = [p.priority_w for p in profiles]
    b = [p.rb_cost_b for p in profiles]
    return FixedIntervalScheduler.plan(w, b, M, stats, candidates)


@dataclass
class EvalResult:
    weighted_mismatch: float
    nrmse: float
    rb_mean: float
    violation_rate: float
    rb_counts: dict


def run_policy(env: TwinEnv, scheduler, M: int) -> tuple[list, list]:
    scheduler.reset()
    obs = env.reset()
    rewards, rb = [], []
    while not env.done:
        out = env.step(scheduler(obs, M))
        obs = out.next_observation
        rewards.append(out.reward_r)
        rb.append(out.rb_used)
    return rewards, rb


def device_nrmse(env: TwinEnv) -> float:
    """Uniform average of per-device NRMSE; devices whose signal never moves are skipped."""
    X = env.physical[: env.t + 1]
    Xh = env.virtual_series()
    vals = []
    for n in range(env.N):
        if env.kinds[n]:
            x, xh = X[:, n], Xh[:, n]
        else:
            x, xh = X[:, n, 0], Xh[:, n, 0]
        try:
            vals.append(nrmse(x, xh))
        except ValueError:
            log.debug("device %d: constant physical series, skipped in NRMSE", n)
    return float(np.mean(vals)) if vals else 0.0


def evaluate(make: Callable[[int], TwinEnv], scheduler, M: int, episodes: int) -> EvalResult:
    wm, nr, rbs = [], [], []
    for k in range(episodes):
        env = make(k)
        rewards, rb = run_policy(env, scheduler, M)
        wm.append(-float(np.mean(rewards)))
        nr.append(device_nrmse(env))
        rbs += rb
    rbs = np.array(rbs)
    vals, counts = np.unique(rbs, return_counts=True)
    return EvalResult(float(np.mean(wm)), float(np.mean(nr)), float(rbs.mean()),
                      float(np.mean(rbs > M)), {int(v): int(c) for v, c in zip(vals, counts)})


def eval_env_maker(cfg: ExperimentConfig, seed: int, M: int, fleet: FleetSpec | None = None):
    fleet = fleet or cfg.fleet
    return lambda k: make_env(fleet, cfg.channel, M, seed, EVAL_STREAM + k, cfg.eval_slots + 1,
                              record=True)


def train_crl(cfg: ExperimentConfig, seed: int, fleet: FleetSpec | None = None,
              agent_cfg: AgentConfig | None = None, schedule=None,
              budgets: list | None = None) -> tuple[TrainingReport, Agent]:
    fleet = fleet or cfg.fleet
    agent_cfg = agent_cfg or cfg.agent
    sampler = None
    budgets = budgets if budgets is not None else cfg.train_budgets
    if budgets:
        choices = list(budgets)
        sampler = lambda rng: int(rng.choice(choices))  # noqa: E731
    schedule = schedule if schedule is not None else cfg.budget_schedule
    return train(training_env_factory(cfg, seed, fleet), agent_cfg, cfg.episodes, cfg.slots,
                 [tuple(x) for x in schedule], seed, budget_sampler=sampler)


# ----------------------------------------------------------------------
# study drivers; each returns a JSON-serializable report dict

def recovery_episodes(rewards, start: int, end: int, plateau: float, window: int = 5,
                      frac: float = 0.1) -> int:
    """Episodes after ``start`` until the moving average enters ``plateau +- frac|plateau|``.

    Returns ``end - start`` when the band is never reached.
    """
    r = np.asarray(rewards[start:end], dtype=np.float64)
    band = frac * abs(plateau)
    for k in range(len(r)):
        lo = max(0, k - window + 1)
        if abs(r[lo:k + 1].mean() - plateau) <= band:
            return k
    return end - start


def post_change_variance(rewards, changes, window: int) -> float:
    vals = []
    for c in changes:
        seg = np.asarray(rewards[c:c + window], dtype=np.float64)
        if len(seg) > 1:
            vals.append(float(np.var(seg)))
    return float(np.mean(vals)) if vals else float("nan")


def run_convergence_experiment(cfg: ExperimentConfig) -> dict:
    variants = {
        "mtr-sac": cfg.agent,
        "sac": replace(cfg.agent, replay="fifo", lambda_irm=0.0),
    }
    curves, stats = [], {}
    for seed in cfg.seeds:
        for name, acfg in variants.items():
            rep, _ = train_crl(cfg, seed, agent_cfg=acfg, budgets=[])
            plateaus = rep.stage_plateaus()
            bounds = rep.stage_bounds()
            rec = [recovery_episodes(rep.reward, a, b, p) for (a, b), p in zip(bounds, plateaus)]
            window = min(b - a for a, b in bounds[1:]) if len(bounds) > 1 else 0
            stats[f"{name}/{seed}"] = {
                "budget_changes": rep.budget_changes,
                "stage_plateaus": plateaus,
                "recovery_episodes": rec,
                "post_change_variance": post_change_variance(rep.reward, rep.budget_changes, window),
                "final_violation_rate": rep.violation_rate[-1],
            }
            for ep in range(len(rep.reward)):
                curves.append((ep, name, seed, rep.reward[ep], rep.cost[ep],
                               rep.violation_rate[ep], rep.weighted_mismatch[ep]))
    return {"curves": curves, "stats": stats}


def run_budget_sweep(cfg: ExperimentConfig, M_values=None) -> dict:
    """Compare CRL, DP and polling over budgets.

    Without ``cfg.train_budgets`` one agent is trained per (M, seed) at that
    fixed budget; with it, one budget-conditioned agent per seed serves all M.
    """
    M_values = list(M_values or cfg.M_values)
    rows, training = [], {}
    for seed in cfg.seeds:
        shared = None
        if cfg.train_budgets:
            rep, shared = train_crl(cfg, seed, budgets=cfg.train_budgets)
            training[str(seed)] = rep.to_dict()
        profiles = build_profiles(cfg.fleet, seed)
        b = [p.rb_cost_b for p in profiles]
        for M in M_values:
            agent = shared
            if agent is None:
                rep, agent = train_crl(cfg, seed, budgets=[M], schedule=[(0, M)])
                training[f"{seed}/{M}"] = rep.to_dict()
            scheds = [CrlScheduler(agent, b, cfg.eval_mode, seed, _scales(cfg.fleet)),
                      plan_dp(cfg.fleet, seed, M, cfg.period_candidates),
                      PollingScheduler(b)]
            for s in scheds:
                res = evaluate(eval_env_maker(cfg, seed, M), s, M, cfg.eval_episodes)
                rows.append((M, s.name, seed, res.weighted_mismatch, res.nrmse, res.rb_mean,
                             res.violation_rate))
    return {"sweep": rows, "training": training}


def run_device_scaling(cfg: ExperimentConfig, N_values=None, M_fixed=None) -> dict:
    N_values = list(N_values or cfg.N_values)
    M = int(M_fixed or cfg.M_fixed)
    rows = []
    for N in N_values:
        fleet = FleetSpec.uniform_scalar(N, **{k: v for k, v in cfg.fleet.to_dict().items()
                                               if k not in ("groups", "distance_range", "waypoints")})
        for seed in cfg.seeds:
            _, agent = train_crl(cfg, seed, fleet=fleet, budgets=[M], schedule=[(0, M)])
            b = [1] * N
            scheds = [CrlScheduler(agent, b, cfg.eval_mode, seed, _scales(cfg.fleet)),
                      plan_dp(fleet, seed, M, cfg.period_candidates), PollingScheduler(b)]
            for s in scheds:
                res = evaluate(eval_env_maker(cfg, seed, M, fleet), s, M, cfg.eval_episodes)
                rows.append((N, s.name, seed, res.weighted_mismatch, res.nrmse, res.rb_mean,
                             res.violation_rate))
    return {"scaling": rows, "M": M}


def run_consumption_distribution(cfg: ExperimentConfig, M_values=None) -> dict:
    M_values = list(M_values or cfg.M_values)
    hist, summary = [], {}
    for M in M_values:
        counts: dict[int, int] = {}
        viol = []
        for seed in cfg.seeds:
            _, agent = train_crl(cfg, seed, budgets=[M], schedule=[(0, M)])
            b = [p.rb_cost_b for p in build_profiles(cfg.fleet, seed)]
            res = evaluate(eval_env_maker(cfg, seed, M), CrlScheduler(agent, b, cfg.eval_mode, seed, _scales(cfg.fleet)),
                           M, cfg.eval_episodes)
            viol.append(res.violation_rate)
            for k, v in res.rb_counts.items():
                counts[k] = counts.get(k, 0) + v
        total = sum(counts.values())
        vals = np.array(sorted(counts))
        w = np.array([counts[v] for v in vals]) / total
        mean = float(vals @ w)
        summary[str(M)] = {"violation_rate": float(np.mean(viol)),
                           "violation_rate_per_seed": viol,
                           "mean": mean,
                           "std": float(math.sqrt(max(0.0, (vals ** 2) @ w - mean ** 2)))}
        hist += [(M, int(v), counts[v]) for v in vals]
    return {"hist": hist, "summary": summary}


def run_oracle_cmdp(cfg: ExperimentConfig, n_instances: int = 10) -> dict:
    out = []
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        for i in range(n_instances):
            m, M = random_tiny_cmdp(rng, 3 + i % 2, 2, 1 + i % 2)
            r = brute_force_cmdp(m, M)
            out.append({"seed": seed, "instance": i, "primal": r.primal_value,
                        "dual": r.dual_value, "gap": abs(r.primal_value - r.dual_value)})
    m, M = separating_instance()
    sep = {"statewise_feasible": statewise_feasible(m, (1, 0), M),
           "expectation_feasible": expectation_feasible(m, (1, 0), M)}
    return {"instances": out, "separating": sep}


def run_oracle_spi(cfg: ExperimentConfig, n_instances: int = 10, alpha: float = 0.5) -> dict:
    out = []
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        for i in range(n_instances):
            P, r = random_mdp(rng)
            tr = tabular_soft_policy_iteration(P, r, alpha)
            worst = min(float((b - a).min()) for a, b in zip(tr.q_tables, tr.q_tables[1:]))
            _, greedy = value_iteration(P, r)
            cold = tabular_soft_policy_iteration(P, r, 1e-4)
            out.append({"seed": seed, "instance": i, "iterations": len(tr.q_tables) - 1,
                        "converged": tr.converged, "min_q_increment": worst,
                        "low_alpha_matches_greedy": bool(np.array_equal(
                            cold.policies[-1].argmax(axis=1), greedy))})
    return {"instances": out}


# ----------------------------------------------------------------------
# output

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def write_outputs(out_dir, command: str, cfg: ExperimentConfig, result: dict) -> Path:
    """Write ``report.json`` plus whichever CSVs the result carries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "curves" in result:
        _write_csv(out / "curves.csv", CURVES_HEADER, result["curves"])
    if "sweep" in result:
        _write_csv(out / "sweep.csv", SWEEP_HEADER, [r[:6] for r in result["sweep"]])
    if "scaling" in result:
        _write_csv(out / "sweep.csv", ("N",) + SWEEP_HEADER[1:], [r[:6] for r in result["scaling"]])
    if "hist" in result:
        _write_csv(out / "hist.csv", HIST_HEADER, result["hist"])
    report = {"command": command, "config": cfg.to_dict(), "result": result}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True, default=_jsonable),
                                     encoding="utf-8")
    return out


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")
