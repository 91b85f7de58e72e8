"""PPO with demonstration pre-training of the policy and value networks.

The policy is a diagonal Gaussian over the flat action with a state-free
learned ``log_std``; actions are clipped to [-1, 1] only when executed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .net import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    MlpNet,
    adam_step,
    gaussian_entropy,
    gaussian_log_prob,
)
from .sacfd import DemoBuffer, TrainingDiverged

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lambda_ent: float = 0.01
    rollout_size: int = 64
    epochs_per_update: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    value_lr: float | None = None
    pretrain_iters: int = 500
    pretrain_batch: int = 64
    reward_norm: bool = True
    value_coef: float = 0.5
    target_kl: float | None = 0.05
    hidden: tuple[int, ...] = (256, 256)
    init_log_std: float = -3.0
    max_grad_norm: float | None = 0.5

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        self.hidden = tuple(self.hidden)


class PpoAgent:
    def __init__(self, obs_dim: int, act_dim: int, cfg: PpoConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.actor = MlpNet([obs_dim, *cfg.hidden, act_dim], "tanh", out_gain=0.01, rng=rng)
        self.log_std = np.full(act_dim, float(cfg.init_log_std))
        self.value = MlpNet([obs_dim, *cfg.hidden, 1], "tanh", out_gain=1.0, rng=rng)
        self.actor_opt = AdamState(lr=cfg.lr)
        self.value_opt = AdamState(lr=cfg.value_lr or cfg.lr)
        self.snapshot = 0

    def policy_params(self) -> list[np.ndarray]:
        return self.actor.params() + [self.log_std]

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def act(self, obs, rng, deterministic=False):
        mean = self.actor(obs)
        if deterministic:
            return mean
        return mean + np.exp(self.clamped_log_std()) * rng.standard_normal(mean.shape)

    def log_prob(self, obs, act) -> np.ndarray:
        return gaussian_log_prob(self.actor(obs), self.clamped_log_std(), act)

    def values(self, obs) -> np.ndarray:
        return self.value(obs)[:, 0]


class RolloutBuffer:
    """On-policy records; emptied after every update."""

    def __init__(self):
        self.clear()

    def clear(self) -> None:
        self.obs, self.act, self.rew, self.next_obs, self.done = [], [], [], [], []
        self.logp_old, self.value_old, self.snapshot = [], [], []
        self.adv = self.ret = None

    def __len__(self):
        return len(self.rew)

    def add(self, obs, act, rew, next_obs, done, logp, value, snapshot) -> None:
        self.obs.append(obs)
        self.act.append(act)
        self.rew.append(rew)
        self.next_obs.append(next_obs)
        self.done.append(done)
        self.logp_old.append(logp)
        self.value_old.append(value)
        self.snapshot.append(snapshot)

    def arrays(self) -> dict:
        return {
            "obs": np.array(self.obs), "act": np.array(self.act), "rew": np.array(self.rew, dtype=float),
            "next_obs": np.array(self.next_obs), "done": np.array(self.done, dtype=bool),
            "logp_old": np.array(self.logp_old), "value_old": np.array(self.value_old),
            "adv": self.adv, "ret": self.ret,
        }


def compute_advantages(rollout: RolloutBuffer, agent: PpoAgent, cfg: PpoConfig) -> RolloutBuffer:
    """A = R + gamma V(s') - V(s), with V(s') = 0 at termination; standardized if reward_norm."""
    data = rollout.arrays()
    v_next = np.zeros(len(rollout))
    live = ~data["done"]
    if live.any():
        v_next[live] = agent.values(data["next_obs"][live])
    adv = data["rew"] + cfg.gamma * v_next - data["value_old"]
    rollout.ret = data["rew"] + cfg.gamma * v_next
    if cfg.reward_norm:
        std = adv.std()
        adv = (adv - adv.mean()) / std if std > 1e-12 else np.zeros_like(adv)
    rollout.adv = adv
    return rollout


def ppo_clip_loss(mb: dict, agent: PpoAgent, cfg: PpoConfig):
    """Clipped surrogate, entropy bonus and value regression on one minibatch.

    L = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) - lambda_ent * entropy + c_v * mean((V - R)^2)
    Returns (loss, policy grads, value grads, info).
    """
    obs, act, adv = mb["obs"], mb["act"], mb["adv"]
    n = act.shape[0]
    mean, cache = agent.actor.forward(obs)
    log_std = agent.clamped_log_std()
    std = np.exp(log_std)
    logp = gaussian_log_prob(mean, log_std, act)
    ratio = np.exp(logp - mb["logp_old"])
    clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    entropy = float(gaussian_entropy(log_std))
    policy_loss = -float(np.mean(surr))
    # gradient flows only where the unclipped branch is the active minimum
    active = ~(((adv > 0) & (ratio > 1 + cfg.clip)) | ((adv < 0) & (ratio < 1 - cfg.clip)))
    coef = -(adv * ratio * active) / n
    z = (act - mean) / std
    d_mean = coef[:, None] * z / std
    d_log_std = (coef[:, None] * (z ** 2 - 1.0)).sum(axis=0) - cfg.lambda_ent
    d_log_std = d_log_std * ((agent.log_std > LOG_STD_MIN) & (agent.log_std < LOG_STD_MAX))
    g_actor, _ = agent.actor.backward(cache, d_mean)
    v, vcache = agent.value.forward(obs)
    verr = v[:, 0] - mb["ret"]
    value_loss = float(np.mean(verr ** 2))
    g_value, _ = agent.value.backward(vcache, (2.0 * cfg.value_coef * verr / n)[:, None])
    loss = policy_loss - cfg.lambda_ent * entropy + cfg.value_coef * value_loss
    log_ratio = logp - mb["logp_old"]
    info = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip)),
        "approx_kl": float(np.mean(np.expm1(log_ratio) - log_ratio)),
        "active": active,
        "surrogate": surr,
    }
    return loss, g_actor + [d_log_std], g_value, info


def pretrain(demo: DemoBuffer, agent: PpoAgent, cfg: PpoConfig, rng: np.random.Generator,
             iters: int | None = None) -> PpoAgent:
    """Behaviour-cloning log-likelihood with entropy bonus, plus V regression to demo returns."""
    iters = cfg.pretrain_iters if iters is None else iters
    if iters and len(demo) == 0:
        raise ValueError("pre-training needs at least one demonstration")
    for _ in range(iters):
        idx = rng.choice(len(demo), min(cfg.pretrain_batch, len(demo)) if len(demo) >= cfg.pretrain_batch
                         else cfg.pretrain_batch, replace=len(demo) < cfg.pretrain_batch)
        obs, act, ret = demo.obs[idx], demo.act[idx], demo.rew[idx]
        n = len(idx)
        mean, cache = agent.actor.forward(obs)
        log_std = agent.clamped_log_std()
        std = np.exp(log_std)
        z = (act - mean) / std
        # ascend mean log pi + lambda_ent * H  ->  descend its negative
        d_mean = -(z / std) / n
        d_log_std = -((z ** 2 - 1.0).mean(axis=0) + cfg.lambda_ent)
        d_log_std = d_log_std * ((agent.log_std > LOG_STD_MIN) & (agent.log_std < LOG_STD_MAX))
        g_actor, _ = agent.actor.backward(cache, d_mean)
        adam_step(agent.policy_params(), g_actor + [d_log_std], agent.actor_opt, cfg.max_grad_norm)
        v, vcache = agent.value.forward(obs)
        g_value, _ = agent.value.backward(vcache, ((v[:, 0] - ret) / n)[:, None])
        adam_step(agent.value.params(), g_value, agent.value_opt, cfg.max_grad_norm)
    return agent


def collect_rollout(env, agent: PpoAgent, n: int, rng: np.random.Generator, rollout: RolloutBuffer):
    for _ in range(n):
        obs = env.reset()
        a = agent.act(obs[None], rng)[0]
        logp = agent.log_prob(obs[None], a[None])[0]
        v = agent.values(obs[None])[0]
        nxt, r, done, _ = env.step(np.clip(a, -1.0, 1.0))
        rollout.add(obs, a, r, nxt, done, logp, v, agent.snapshot)
    return rollout


def ppo_update(rollout: RolloutBuffer, agent: PpoAgent, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    if any(s != agent.snapshot for s in rollout.snapshot):
        raise RuntimeError("rollout contains records from a stale policy snapshot")
    compute_advantages(rollout, agent, cfg)
    data = rollout.arrays()
    n = len(rollout)
    stats = {"clip_frac": 0.0, "approx_kl": 0.0, "entropy": float(gaussian_entropy(agent.clamped_log_std()))}
    stop = False
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start: start + cfg.minibatch]
            mb = {k: data[k][idx] for k in ("obs", "act", "adv", "ret", "logp_old")}
            loss, g_pol, g_val, info = ppo_clip_loss(mb, agent, cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite PPO loss at snapshot {agent.snapshot}")
            stats.update(clip_frac=info["clip_frac"], approx_kl=info["approx_kl"], entropy=info["entropy"])
            if cfg.target_kl is not None and info["approx_kl"] > cfg.target_kl:
                stop = True
                break
            adam_step(agent.policy_params(), g_pol, agent.actor_opt, cfg.max_grad_norm)
            adam_step(agent.value.params(), g_val, agent.value_opt, cfg.max_grad_norm)
        if stop:
            break
    rollout.clear()
    agent.snapshot += 1
    return stats


def train_ppo(env, demo: DemoBuffer | None, cfg: PpoConfig = PpoConfig(), seed: int = 0,
              budget: int = 10_000, use_pretrain: bool = True, stop_fidelity: float | None = None,
              callback=None):
    """Optional pre-training, then standard clipped PPO; returns (agent, metrics, best action).

    ``budget`` caps environment interactions including one deterministic
    evaluation of the policy mean per update.
    """
    rng = np.random.default_rng(seed)
    agent = PpoAgent(env.obs_dim, env.action_dim, cfg, rng)
    if use_pretrain and demo is not None and len(demo):
        pretrain(demo, agent, cfg, rng)
    rollout = RolloutBuffer()
    metrics: list[dict] = []
    timestep = episodes = 0
    best_fid, best_action = -np.inf, None
    obs0 = env.reset()
    stats = {"clip_frac": float("nan"), "approx_kl": float("nan"),
             "entropy": float(gaussian_entropy(agent.clamped_log_std()))}
    mean_reward = float("nan")
    while True:
        a = np.clip(agent.act(obs0[None], rng, deterministic=True)[0], -1.0, 1.0)
        _, _, _, info = env.step(a)
        timestep += 1
        if info["fidelity"] > best_fid:
            best_fid, best_action = info["fidelity"], a.copy()
        row = {"timestep": timestep, "episodes": episodes, "mean_reward": mean_reward,
               "best_fidelity": best_fid, **{k: stats[k] for k in ("clip_frac", "approx_kl", "entropy")}}
        metrics.append(row)
        if callback is not None:
            callback(row)
        if stop_fidelity is not None and best_fid >= stop_fidelity:
            break
        if timestep + cfg.rollout_size > budget:
            break
        collect_rollout(env, agent, cfg.rollout_size, rng, rollout)
        timestep += cfg.rollout_size
        episodes += cfg.rollout_size
        mean_reward = float(np.mean(rollout.rew))
        stats = ppo_update(rollout, agent, cfg, rng)
    return agent, metrics, best_action
