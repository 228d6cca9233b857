"""Constrained soft actor-critic scheduler with multi-timescale replay.

The policy is a factorized Bernoulli over the N-device schedule vector.
Inside the actor loss, samples are relaxed with logistic (Gumbel-sigmoid)
noise so that critic input-gradients can flow back to the logits.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .approx import (NetworkParams, OptimizerState, adam_update, backward, forward,
                     init_network, network_from_arrays, network_to_arrays, polyak_blend,
                     save_checkpoint, sigmoid, softplus, load_checkpoint)
from .replay import OVERFLOW_TAG, Experience, FifoBuffer, MtrBuffer, MtrConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AgentConfig:
    gamma: float = 0.99
    gamma_C: float = 0.99
    alpha_init: float = 0.05
    lr_Q: float = 3e-4
    lr_pi: float = 3e-4
    lr_alpha: float = 1e-5
    lr_lambda: float = 1e-5
    rho: float = 5e-3
    actor_every_m_pi: int = 2
    lambda_every_m_lambda: int = 12
    lambda_irm: float = 1e-2
    batch_size: int = 256
    relax_temp: float = 1.0
    relax_temp_final: float = 0.5
    target_entropy: float | None = None  # None -> 0.4 * N * ln 2
    hidden: int = 256
    n_hidden: int = 3
    entropy_in_target: bool = True
    # append a * S_k for every per-device feature block to the critic input
    critic_interactions: bool = False
    # learner-side rescaling of rewards and costs (a positive rescale of
    # the objective; does not change the optimal policy)
    reward_scale: float = 1.0
    cost_scale: float = 1.0
    # parameterize Q_C as M/(1-gamma_C) + net so the net only learns the excess
    cost_offset: bool = False
    # tolerated mean excess over the budget, in RBs per slot; with zero slack
    # the gap can never turn negative because the per-slot cost is floored at M
    cost_slack: float = 0.0
    lambda_init: float = 1.0
    replay: str = "mtr"  # or "fifo"
    n_sub: int = 4
    buffer_cap: int = 5000
    promote_prob: float = 0.8
    warmup: int = 256
    grad_steps_per_episode: int | None = None  # None -> one per slot

    def __post_init__(self):
        if not (0 < self.gamma < 1 and 0 < self.gamma_C < 1):
            raise ValueError("discounts must lie in (0, 1)")
        for k in ("alpha_init", "lr_Q", "lr_pi", "lr_alpha", "lr_lambda", "relax_temp",
                  "relax_temp_final", "reward_scale", "cost_scale", "lambda_init"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.actor_every_m_pi < 1 or self.lambda_every_m_lambda < 1:
            raise ValueError("update periods must be >= 1")
        if self.cost_slack < 0:
            raise ValueError("cost_slack must be >= 0")
        if self.lambda_irm < 0:
            raise ValueError("lambda_irm must be >= 0")
        if self.replay not in ("mtr", "fifo"):
            raise ValueError("replay must be 'mtr' or 'fifo'")

    def entropy_target(self, n_devices: int) -> float:
        if self.target_entropy is not None:
            return self.target_entropy
        return 0.4 * n_devices * math.log(2.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Learner-scaled arrays for one minibatch."""

    S: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    S2: np.ndarray
    M: np.ndarray  # per-sample budget, already cost-scaled

    @classmethod
    def from_experiences(cls, items: Sequence[Experience], cfg: AgentConfig) -> "Batch":
        return cls(
            np.stack([e.obs_S for e in items]),
            np.stack([e.action_a for e in items]).astype(np.float64),
            np.array([e.reward_r for e in items]) * cfg.reward_scale,
            np.array([e.cost_c for e in items]) * cfg.cost_scale,
            np.stack([e.next_obs_S for e in items]),
            np.array([e.budget_M for e in items], dtype=np.float64) * cfg.cost_scale,
        )

    def __len__(self) -> int:
        return len(self.r)


@dataclass
class Noise:
    """Pre-drawn randomness for one update, so losses are deterministic functions."""

    next_uniform: np.ndarray   # hard a' ~ pi(S')
    logistic: np.ndarray       # relaxation noise for the actor loss
    cur_uniform: np.ndarray    # hard a ~ pi(S) for the multiplier loss

    @classmethod
    def draw(cls, rng: np.random.Generator, B: int, N: int) -> "Noise":
        u = rng.random((B, N))
        p = rng.random((B, N))
        g = np.log(p) - np.log1p(-p)
        return cls(u, g, rng.random((B, N)))


def log_prob(logits, a):
    """``sum_n a log s + (1-a) log(1-s)`` with ``s = sigmoid(logits)``; ``a`` may be soft."""
    return np.sum(a * logits - softplus(logits), axis=-1)


def bernoulli_entropy(logits):
    return np.sum(softplus(logits) - sigmoid(logits) * logits, axis=-1)


class Agent:
    def __init__(self, n_devices: int, n_features: int, cfg: AgentConfig, seed: int):
        self.N = n_devices
        self.F = n_features
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        h = [cfg.hidden] * cfg.n_hidden
        r = self.rng
        self.actor = init_network([n_features, *h, n_devices], r, output_transform="logits",
                                  final_scale=0.1)
        if cfg.critic_interactions and n_features % n_devices:
            raise ValueError("critic_interactions needs per-device feature blocks")
        self.n_blocks = n_features // n_devices if cfg.critic_interactions else 0
        q_in = n_features + n_devices * (1 + self.n_blocks)
        self.q1 = init_network([q_in, *h, 1], r)
        self.q2 = init_network([q_in, *h, 1], r)
        self.qc = init_network([q_in, *h, 1], r)
        self.mult = init_network([n_features, *h, 1], r, output_transform="softplus",
                                 final_scale=0.1)
        # start lambda near lambda_init: softplus^{-1}
        self.mult.layer_biases[-1][:] = math.log(math.expm1(cfg.lambda_init))
        self.q1_t, self.q2_t, self.qc_t = self.q1.copy(), self.q2.copy(), self.qc.copy()
        self.log_alpha = np.array([math.log(cfg.alpha_init)])
        self.opt = {
            "q1": OptimizerState.for_arrays(self.q1.arrays(), cfg.lr_Q),
            "q2": OptimizerState.for_arrays(self.q2.arrays(), cfg.lr_Q),
            "qc": OptimizerState.for_arrays(self.qc.arrays(), cfg.lr_Q),
            "actor": OptimizerState.for_arrays(self.actor.arrays(), cfg.lr_pi),
            "mult": OptimizerState.for_arrays(self.mult.arrays(), cfg.lr_lambda),
            "alpha": OptimizerState.for_arrays([self.log_alpha], cfg.lr_alpha),
        }
        self.H_target = cfg.entropy_target(n_devices)
        self.temp = cfg.relax_temp
        self.n_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # ------------------------------------------------------------------
    def logits(self, S):
        return forward(self.actor, S)[0]

    def act(self, features, mode: str = "sample", rng: np.random.Generator | None = None):
        """Schedule vector for one feature vector (or a batch)."""
        lg = self.logits(features)
        if mode == "greedy":
            return (lg > 0.0).astype(np.int8)  # sigma = 0.5 ties go to 0
        if mode != "sample":
            raise ValueError("mode must be 'sample' or 'greedy'")
        rng = self.rng if rng is None else rng
        return (rng.random(lg.shape) < sigmoid(lg)).astype(np.int8)

    def multiplier(self, S):
        return forward(self.mult, S)[0][..., 0]

    def _q(self, net: NetworkParams, S, a):
        parts = [S, a]
        N = self.N
        for k in range(self.n_blocks):
            parts.append(a * S[:, k * N:(k + 1) * N])
        y, cache = forward(net, np.concatenate(parts, axis=1))
        return y[:, 0], (cache, S)

    def _q_in_grad(self, net, cache, g):
        """Param grads and the action-input gradient for upstream ``g`` of shape (B,)."""
        cache, S = cache
        grads, gx = backward(net, cache, g[:, None])
        F, N = self.F, self.N
        ga = gx[:, F:F + N].copy()
        for k in range(self.n_blocks):
            ga += gx[:, F + N * (k + 1):F + N * (k + 2)] * S[:, k * N:(k + 1) * N]
        return grads, ga

    def _cost_offset(self, M):
        if self.cfg.cost_offset:
            return M / (1.0 - self.cfg.gamma_C)
        return np.zeros_like(M)

    def budget_bar(self, M):
        """Discounted budget (plus slack) the cost value is compared against."""
        slack = self.cfg.cost_slack * self.cfg.cost_scale
        return (M + slack) / (1.0 - self.cfg.gamma_C)

    # ------------------------------------------------------------------
    # losses; each returns (loss, grads) and never mutates parameters

    def _next_action(self, batch: Batch, noise: Noise):
        lg2 = self.logits(batch.S2)
        a2 = (noise.next_uniform < sigmoid(lg2)).astype(np.float64)
        return a2, log_prob(lg2, a2)

    def critic_loss(self, batch: Batch, noise: Noise, which: str = "q1"):
        net = getattr(self, which)
        target = getattr(self, which + "_t")
        a2, logp2 = self._next_action(batch, noise)
        qn, _ = self._q(target, batch.S2, a2)
        soft = qn - self.alpha * logp2 if self.cfg.entropy_in_target else qn
        y = batch.r + self.cfg.gamma * soft
        q, cache = self._q(net, batch.S, batch.a)
        td = q - y
        grads, _ = self._q_in_grad(net, cache, td / len(batch))
        return 0.5 * float(np.mean(td * td)), grads

    def cost_critic_loss(self, batch: Batch, noise: Noise):
        a2, _ = self._next_action(batch, noise)
        off = self._cost_offset(batch.M)
        qn, _ = self._q(self.qc_t, batch.S2, a2)
        y = batch.c + self.cfg.gamma_C * (off + qn)
        q, cache = self._q(self.qc, batch.S, batch.a)
        td = off + q - y
        grads, _ = self._q_in_grad(self.qc, cache, td / len(batch))
        return 0.5 * float(np.mean(td * td)), grads

    def actor_loss_sac(self, batch: Batch, noise: Noise):
        """Returns ``(loss, grads wrt actor params)``; the multiplier is held fixed."""
        B = len(batch)
        alpha, tau = self.alpha, self.temp
        lg, acache = forward(self.actor, batch.S)
        s = sigmoid(lg)
        a_rel = sigmoid((lg + noise.logistic) / tau)
        logp = log_prob(lg, a_rel)

        q1, c1 = self._q(self.q1, batch.S, a_rel)
        q2, c2 = self._q(self.q2, batch.S, a_rel)
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        qc, cc = self._q(self.qc, batch.S, a_rel)
        gap = self._cost_offset(batch.M) + qc - self.budget_bar(batch.M)
        lam = self.multiplier(batch.S)

        loss = float(np.mean(alpha * logp - qmin + lam * gap))

        ones = np.ones(B)
        _, dq1 = self._q_in_grad(self.q1, c1, ones)
        _, dq2 = self._q_in_grad(self.q2, c2, ones)
        _, dqc = self._q_in_grad(self.qc, cc, ones)
        dqmin = np.where(use1[:, None], dq1, dq2)
        d_arel = alpha * lg - dqmin + lam[:, None] * dqc
        g_lg = alpha * (a_rel - s) + d_arel * a_rel * (1.0 - a_rel) / tau
        grads, _ = backward(self.actor, acache, g_lg / B)
        return loss, grads

    def irm_penalty(self, S, a, tags, env_weights: dict):
        """Squared dummy-scale gradient per tagged group, weighted by ``env_weights[tag]``.

        ``a`` are the stored (hard) actions; items tagged as overflow are ignored.
        """
        lam_irm, alpha = self.cfg.lambda_irm, self.alpha
        grads_zero = [np.zeros_like(x) for x in self.actor.arrays()]
        groups = [t for t in np.unique(tags) if t != OVERFLOW_TAG]
        if not groups:
            log.warning("irm_penalty: no tagged items in batch; penalty is 0")
            return 0.0, grads_zero
        lg, cache = forward(self.actor, S)
        s = sigmoid(lg)
        total = 0.0
        g_lg = np.zeros_like(lg)
        for t in groups:
            m = tags == t
            nb = int(m.sum())
            per = alpha * np.sum(lg[m] * (a[m] - s[m]), axis=1)
            g_i = float(per.mean())
            wgt = env_weights.get(int(t), 0.0)
            total += wgt * g_i * g_i
            coef = lam_irm * wgt * 2.0 * g_i * alpha / nb
            g_lg[m] = coef * ((a[m] - s[m]) - lg[m] * s[m] * (1.0 - s[m]))
        grads, _ = backward(self.actor, cache, g_lg)
        return lam_irm * total, grads

    def multiplier_loss(self, batch: Batch, noise: Noise):
        """``J = mean lambda(S) * (Q_C(S, a) - M_bar)`` with ``a ~ pi(S)``; to be ascended."""
        lg = self.logits(batch.S)
        a = (noise.cur_uniform < sigmoid(lg)).astype(np.float64)
        qc, _ = self._q(self.qc, batch.S, a)
        gap = self._cost_offset(batch.M) + qc - self.budget_bar(batch.M)
        lam, cache = forward(self.mult, batch.S)
        loss = float(np.mean(lam[:, 0] * gap))
        grads, _ = backward(self.mult, cache, gap[:, None] / len(batch))
        return loss, grads

    def alpha_loss(self, batch: Batch):
        """``J = alpha * (H_hat - H_target)``; returns ``(loss, dJ/dlog_alpha, H_hat)``."""
        H = float(np.mean(bernoulli_entropy(self.logits(batch.S))))
        diff = H - self.H_target
        return self.alpha * diff, self.alpha * diff, H

    # ------------------------------------------------------------------
    def update(self, batch: Batch, tags: np.ndarray, env_weights: dict) -> dict:
        """One gradient step of Algorithm-1 style training."""
        cfg = self.cfg
        noise = Noise.draw(self.rng, len(batch), self.N)
        stats = {}
        for name in ("q1", "q2"):
            loss, g = self.critic_loss(batch, noise, name)
            adam_update(getattr(self, name).arrays(), g, self.opt[name])
            stats[name] = loss
        loss, g = self.cost_critic_loss(batch, noise)
        adam_update(self.qc.arrays(), g, self.opt["qc"])
        stats["qc"] = loss
        self.n_updates += 1
        if self.n_updates % cfg.actor_every_m_pi == 0:
            loss, g = self.actor_loss_sac(batch, noise)
            if cfg.lambda_irm > 0:
                pen, gp = self.irm_penalty(batch.S, batch.a, tags, env_weights)
                g = [x + y for x, y in zip(g, gp)]
                loss += pen
                stats["irm"] = pen
            adam_update(self.actor.arrays(), g, self.opt["actor"])
            stats["actor"] = loss
            _, ga, H = self.alpha_loss(batch)
            # descent on log alpha: J = alpha (H - H_target)
            adam_update([self.log_alpha], [np.array([ga])], self.opt["alpha"])
            stats["entropy"] = H
        if self.n_updates % cfg.lambda_every_m_lambda == 0:
            loss, g = self.multiplier_loss(batch, noise)
            adam_update(self.mult.arrays(), g, self.opt["mult"], ascent=True)
            stats["mult"] = loss
        for net, tgt in ((self.q1, self.q1_t), (self.q2, self.q2_t), (self.qc, self.qc_t)):
            polyak_blend(tgt, net, cfg.rho)
        return stats

    # ------------------------------------------------------------------
    _NETS = (("actor", "logits"), ("q1", "identity"), ("q2", "identity"), ("qc", "identity"),
             ("mult", "softplus"), ("q1_t", "identity"), ("q2_t", "identity"),
             ("qc_t", "identity"))

    def state_arrays(self) -> dict:
        out = {}
        for name, _ in self._NETS:
            out.update(network_to_arrays(name, getattr(self, name)))
        out["log_alpha"] = self.log_alpha
        return out

    def save(self, path, meta: dict | None = None) -> None:
        m = {"config": self.cfg.to_dict(), "n_devices": self.N, "n_features": self.F}
        m.update(meta or {})
        save_checkpoint(path, self.state_arrays(), m)

    @classmethod
    def load(cls, path) -> "Agent":
        ck = load_checkpoint(path)
        cfg = AgentConfig(**ck.meta["config"])
        ag = cls(ck.meta["n_devices"], ck.meta["n_features"], cfg, seed=0)
        for name, out in cls._NETS:
            setattr(ag, name, network_from_arrays(name, ck.arrays, "relu", out))
        ag.log_alpha = ck.arrays["log_alpha"].reshape(1).copy()
        return ag


# ----------------------------------------------------------------------
# training loop

@dataclass
class TrainingReport:
    reward: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    violation_rate: list = field(default_factory=list)
    weighted_mismatch: list = field(default_factory=list)
    rb_mean: list = field(default_factory=list)
    budget: list = field(default_factory=list)
    budget_changes: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    lam_mean: list = field(default_factory=list)

    def stage_bounds(self) -> list[tuple[int, int]]:
        """``[start, end)`` episode ranges of constant budget."""
        starts = [0] + list(self.budget_changes)
        ends = list(self.budget_changes) + [len(self.reward)]
        return [(a, b) for a, b in zip(starts, ends) if b > a]

    def stage_plateaus(self) -> list[float]:
        """Mean reward over the final third of each stage."""
        out = []
        for a, b in self.stage_bounds():
            k = max(1, (b - a) // 3)
            out.append(float(np.mean(self.reward[b - k:b])))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_plateaus"] = self.stage_plateaus()
        return d


def budget_at(schedule: Sequence[tuple[int, int]], episode: int) -> int:
    """Budget in force at ``episode`` under a sorted ``[(start_episode, M), ...]`` schedule."""
    if not schedule:
        raise ValueError("budget schedule is empty")
    M = None
    for start, m in sorted(schedule):
        if start <= episode:
            M = m
    if M is None:
        raise ValueError(f"schedule does not cover episode {episode}")
    return int(M)


def make_buffer(cfg: AgentConfig):
    if cfg.replay == "mtr":
        return MtrBuffer(MtrConfig.equal_split(cfg.n_sub, cfg.buffer_cap, cfg.promote_prob))
    return FifoBuffer(cfg.buffer_cap)


def buffer_env_weights(buf) -> dict:
    """``|D_i| / |D_total|`` for each tagged sub-buffer."""
    total = len(buf)
    if isinstance(buf, MtrBuffer):
        return {i: len(d) / total for i, d in enumerate(buf.subs)}
    return {0: 1.0}


def train(env_factory: Callable, cfg: AgentConfig, episodes: int, slots_per_episode: int,
          budget_schedule: Sequence[tuple[int, int]], seed: int,
          budget_sampler: Callable[[np.random.Generator], int] | None = None,
          checkpoint_dir: str | Path | None = None,
          agent: Agent | None = None) -> tuple[TrainingReport, Agent | None]:
    """Interact for an episode, push transitions, then run gradient steps.

    ``env_factory(episode, M)`` returns a fresh environment whose traces are
    ``slots_per_episode + 1`` long. ``budget_sampler`` (optional) overrides
    the schedule with a per-episode random budget.
    """
    report = TrainingReport()
    if episodes <= 0:
        return report, agent
    rng = np.random.default_rng(seed)
    buf = make_buffer(cfg)
    step = 0
    grad_steps = cfg.grad_steps_per_episode or slots_per_episode
    total_updates = episodes * grad_steps
    prev_M = None
    for ep in range(episodes):
        M = budget_sampler(rng) if budget_sampler else budget_at(budget_schedule, ep)
        if prev_M is not None and M != prev_M and budget_sampler is None:
            report.budget_changes.append(ep)
            log.info("episode %d: RB budget %d -> %d", ep, prev_M, M)
        prev_M = M
        env = env_factory(ep, M)
        if agent is None:
            agent = Agent(env.N, len(env.features()), cfg, seed=int(rng.integers(2**31)))
        feat = env.features()
        rs, cs, viol, rb = [], [], 0, []
        for _ in range(slots_per_episode):
            if env.done:
                break
            a = agent.act(feat, "sample", rng)
            out = env.step(a)
            nfeat = env.features(out.next_observation)
            buf.push(Experience(feat, a, out.reward_r, out.cost_c, nfeat, M, step), rng)
            feat = nfeat
            step += 1
            rs.append(out.reward_r)
            cs.append(out.cost_c)
            rb.append(out.rb_used)
            viol += out.rb_used > M
        report.reward.append(float(np.mean(rs)))
        report.cost.append(float(np.mean(cs)))
        report.violation_rate.append(viol / len(rs))
        report.weighted_mismatch.append(-float(np.mean(rs)))
        report.rb_mean.append(float(np.mean(rb)))
        report.budget.append(M)

        if len(buf) >= cfg.warmup:
            for _ in range(grad_steps):
                frac = min(1.0, agent.n_updates / max(1, total_updates))
                agent.temp = cfg.relax_temp + frac * (cfg.relax_temp_final - cfg.relax_temp)
                items, tags = buf.sample_batch(cfg.batch_size, rng)
                stats = agent.update(Batch.from_experiences(items, cfg), tags,
                                     buffer_env_weights(buf))
                bad = [k for k, v in stats.items() if not math.isfinite(v)]
                if bad:
                    path = None
                    if checkpoint_dir is not None:
                        path = Path(checkpoint_dir) / f"diverged_ep{ep}.json"
                        agent.save(path, {"episode": ep, "stats": {k: repr(v) for k, v in stats.items()}})
                    raise TrainingDiverged(f"non-finite loss {bad} at episode {ep}; checkpoint: {path}")
        report.alpha.append(agent.alpha)
        report.lam_mean.append(float(np.mean(agent.multiplier(feat[None, :]))))
    return report, agent
