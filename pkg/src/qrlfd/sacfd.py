"""Soft actor-critic with a demonstration buffer and decaying behaviour cloning.

Minibatches mix agent experience and demonstrations at a fixed ratio; the
actor objective adds a behaviour-cloning penalty on the demonstration rows
whose weight decays exponentially with environment steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .net import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    GaussianPolicyOut,
    MlpNet,
    adam_step,
    log_one_minus_tanh_sq,
    polyak,
    sample_squashed_gaussian,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# --- buffers ---------------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    is_demo: np.ndarray

    def __len__(self):
        return self.rew.shape[0]


class ReplayBuffer:
    """Ring buffer of agent transitions; every row is tagged as non-demo."""

    provenance = "replay"

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 100_000):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._ptr = 0

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done) -> None:
        i = self._ptr
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, done
        self._ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def take(self, idx) -> Batch:
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx],
                     self.done[idx], np.zeros(len(idx), dtype=bool))


class DemoBuffer:
    """Demonstration transitions; frozen after construction."""

    provenance = "demo"

    def __init__(self, obs, act, rew, next_obs, done, fidelities=None, converged=None):
        self.obs = np.atleast_2d(np.asarray(obs, dtype=float)).copy()
        self.act = np.atleast_2d(np.asarray(act, dtype=float)).copy()
        self.rew = np.asarray(rew, dtype=float).reshape(-1).copy()
        self.next_obs = np.atleast_2d(np.asarray(next_obs, dtype=float)).copy()
        self.done = np.asarray(done, dtype=bool).reshape(-1).copy()
        # nominal-model fidelity of each demo and whether its generator converged
        self.fidelities = None if fidelities is None else np.asarray(fidelities, dtype=float)
        self.converged = None if converged is None else np.asarray(converged, dtype=bool)
        for arr in (self.obs, self.act, self.rew, self.next_obs, self.done):
            arr.setflags(write=False)

    def __len__(self):
        return self.rew.shape[0]

    def take(self, idx) -> Batch:
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx],
                     self.done[idx], np.ones(len(idx), dtype=bool))


class ExpertPolicy:
    """Deterministic lookup from a demonstrated observation to its action."""

    def __init__(self, demo: DemoBuffer):
        self._obs = demo.obs
        self._act = demo.act

    def __call__(self, obs) -> np.ndarray:
        obs = np.atleast_2d(obs)
        d = ((obs[:, None, :] - self._obs[None, :, :]) ** 2).sum(-1)
        return self._act[np.argmin(d, axis=1)]


def demo_buffer_from_actions(env, actions, nominal_fidelities=None, converged=None):
    """One interaction with ``env`` per demo action, stored as demonstrations."""
    rows = []
    for a in actions:
        obs = env.reset()
        next_obs, r, done, _ = env.step(a)
        rows.append((obs, a, r, next_obs, done))
    obs, act, rew, nxt, done = map(np.array, zip(*rows))
    demo = DemoBuffer(obs, act, rew, nxt, done, nominal_fidelities, converged)
    return demo, ExpertPolicy(demo)


def build_demo_buffer(env, grape_cfg=None, initial_states=None, seed: int = 0, init_scale: float = 0.01):
    """Run GRAPE on the nominal model of a ``PulseEnv`` for each initial state.

    Non-converged demonstrations are kept (flagged) with the fidelity they reached.
    """
    from .grape import GrapeConfig, grape_optimize, initial_guess

    grape_cfg = GrapeConfig() if grape_cfg is None else grape_cfg
    states = [env.psi0] if initial_states is None else list(initial_states)
    actions, fids, conv = [], [], []
    for k, psi in enumerate(states):
        res = grape_optimize(env.nominal, psi, env.target, initial_guess(env.nominal, seed + k, init_scale), grape_cfg)
        if not res.converged:
            log.warning("GRAPE demo %d stopped at fidelity %.4f without converging", k, res.fidelity)
        actions.append(env.encode(res.pulses))
        fids.append(res.fidelity)
        conv.append(res.converged)
    return demo_buffer_from_actions(env, actions, fids, conv)


def sample_mixed(replay: ReplayBuffer, demo: DemoBuffer | None, batch: int, mu: float,
                 rng: np.random.Generator) -> Batch:
    """floor(mu * batch) demonstration rows plus the rest from the replay buffer.

    Rows are drawn without replacement while a source holds enough records and
    with replacement otherwise (a single demo fills all its slots).
    """
    n_demo = int(math.floor(mu * batch)) if demo is not None and len(demo) else 0
    if len(replay) == 0:
        n_demo = batch
    n_replay = batch - n_demo
    parts = []
    if n_demo:
        parts.append(demo.take(rng.choice(len(demo), n_demo, replace=len(demo) < n_demo)))
    if n_replay:
        parts.append(replay.take(rng.choice(len(replay), n_replay, replace=len(replay) < n_replay)))
    if len(parts) == 1:
        return parts[0]
    return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                   ("obs", "act", "rew", "next_obs", "done", "is_demo")))


# --- agent -------------------------------------------------------------------------

@dataclass
class SacConfig:
    gamma: float = 0.99
    alpha: float = 1e-4
    tau: float = 0.005
    mu: float = 0.25
    lambda_bc0: float = 2.0
    bc_decay_tau: float | None = None  # env steps; None -> 20% of the budget
    batch: int = 256
    lr: float = 3e-4
    critic_lr: float | None = None
    env_steps_per_update: int = 1
    updates_per_epoch: int = 1
    hidden: tuple[int, ...] = (256, 256)
    init_log_std: float = -3.0
    buffer_capacity: int = 100_000
    learning_starts: int = 0
    eval_interval: int = 50
    max_grad_norm: float | None = None
    # critics learn reward_scale * Q; the actor divides it back out
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if not 0 <= self.mu <= 1:
            raise ValueError("mu must lie in [0, 1]")
        if self.lambda_bc0 < 0:
            raise ValueError("lambda_bc0 must be non-negative")
        self.hidden = tuple(self.hidden)

    def lambda_bc(self, step: int, total_steps: int | None = None) -> float:
        tau = self.bc_decay_tau
        if tau is None:
            tau = 0.2 * (total_steps if total_steps else 10_000)
        return self.lambda_bc0 * math.exp(-step / tau)


class SacAgent:
    """Squashed-Gaussian actor and twin LayerNorm critics with Polyak targets."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.actor = MlpNet([obs_dim, *cfg.hidden, 2 * act_dim], "relu", out_gain=0.01, rng=rng)
        self.actor.layers[-1].b[act_dim:] = cfg.init_log_std
        self.q1 = MlpNet([obs_dim + act_dim, *cfg.hidden, 1], "relu", layernorm=True, rng=rng)
        self.q2 = MlpNet([obs_dim + act_dim, *cfg.hidden, 1], "relu", layernorm=True, rng=rng)
        self.q1_targ, self.q2_targ = self.q1.copy(), self.q2.copy()
        self.actor_opt = AdamState(lr=cfg.lr)
        self.q1_opt = AdamState(lr=cfg.critic_lr or cfg.lr)
        self.q2_opt = AdamState(lr=cfg.critic_lr or cfg.lr)

    def policy(self, obs) -> tuple[GaussianPolicyOut, list]:
        out, cache = self.actor.forward(obs)
        return GaussianPolicyOut(out[:, : self.act_dim], out[:, self.act_dim:]), cache

    def policy_rows(self, obs):
        """Actor outputs for a batch, evaluated once per distinct observation.

        Returns (policy, cache, inverse index); gradients for the batch must be
        summed onto the unique rows with ``np.add.at`` before backward.
        """
        uniq, inv = np.unique(obs, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        out, cache = self.actor.forward(uniq)
        out = out[inv]
        return GaussianPolicyOut(out[:, : self.act_dim], out[:, self.act_dim:]), cache, inv, uniq.shape[0]

    def act(self, obs, rng, deterministic=False) -> np.ndarray:
        pol, _ = self.policy(obs)
        if deterministic:
            return np.tanh(pol.mean)
        return sample_squashed_gaussian(pol, rng)[0]

    def q_min(self, nets, obs, act):
        x = np.concatenate([obs, act], axis=1)
        qa = nets[0](x)[:, 0]
        qb = nets[1](x)[:, 0]
        return np.minimum(qa, qb), qa, qb


def q_loss(batch: Batch, agent: SacAgent, rng: np.random.Generator):
    """Soft Bellman error 0.5 (Q_i(s,a) - y)^2 averaged over samples and the two critics.

    y = c r + gamma (1 - d) (min_i Q_targ_i(s', a') - c alpha log pi(a'|s')), c = reward_scale.
    Returns (loss, grads_q1, grads_q2, y).
    """
    cfg = agent.cfg
    c = cfg.reward_scale
    y = c * batch.rew.astype(float)
    live = ~batch.done
    if live.any():
        pol, _ = agent.policy(batch.next_obs[live])
        a_next, logp_next, _, _ = sample_squashed_gaussian(pol, rng)
        q_next, _, _ = agent.q_min((agent.q1_targ, agent.q2_targ), batch.next_obs[live], a_next)
        y[live] += cfg.gamma * (q_next - c * cfg.alpha * logp_next)
    x = np.concatenate([batch.obs, batch.act], axis=1)
    n = len(batch)
    losses, grads = [], []
    for net in (agent.q1, agent.q2):
        q, cache = net.forward(x)
        err = q[:, 0] - y
        losses.append(0.5 * np.mean(err ** 2))
        g, _ = net.backward(cache, (err / n)[:, None])
        grads.append(g)
    return 0.5 * (losses[0] + losses[1]), grads[0], grads[1], y


def policy_loss_sacfd(batch: Batch, agent: SacAgent, expert: ExpertPolicy | None, lam_bc: float,
                      rng: np.random.Generator, noise=None):
    """Reparameterized actor loss plus behaviour cloning on demo rows.

    L = mean[alpha log pi(a~|s) - min_i Q_i(s, a~) / c] + lam_bc * mean_demo ||tanh(mean(s)) - pi*(s)||^2
    with c = reward_scale. Returns (loss, actor gradients, info).
    """
    cfg = agent.cfg
    n, d = len(batch), agent.act_dim
    pol, cache, inv, n_uniq = agent.policy_rows(batch.obs)
    a, logp, u, zeta = sample_squashed_gaussian(pol, rng, noise)
    x = np.concatenate([batch.obs, a], axis=1)
    q1, c1 = agent.q1.forward(x)
    q2, c2 = agent.q2.forward(x)
    use1 = q1[:, 0] <= q2[:, 0]
    qmin = np.where(use1, q1[:, 0], q2[:, 0]) / cfg.reward_scale
    # dQmin/da through whichever critic is smaller per row
    _, dx1 = agent.q1.backward(c1, (use1 / n)[:, None].astype(float), params=False)
    _, dx2 = agent.q2.backward(c2, (~use1 / n)[:, None].astype(float), params=False)
    dq_da = (dx1 + dx2)[:, agent.obs_dim:] * (n / cfg.reward_scale)  # per-row gradient
    loss = np.mean(cfg.alpha * logp - qmin)
    # d/du of [alpha log pi - Qmin]; log pi = sum(-zeta^2/2 - log_std) - sum log(1 - tanh(u)^2)
    dl_du = (cfg.alpha * 2.0 * a - dq_da * (1.0 - a ** 2)) / n
    d_mean = dl_du.copy()
    d_log_std = dl_du * pol.std * zeta - cfg.alpha / n
    bc = 0.0
    if expert is not None and lam_bc > 0 and batch.is_demo.any():
        rows = batch.is_demo
        m = rows.sum()
        squashed = np.tanh(pol.mean[rows])
        diff = squashed - expert(batch.obs[rows])
        bc = float(np.mean(np.sum(diff ** 2, axis=1)))
        loss += lam_bc * bc
        d_mean[rows] += lam_bc * 2.0 * diff * (1.0 - squashed ** 2) / m
    out_raw = cache[-1]["y"][inv, d:]
    d_log_std = d_log_std * ((out_raw > LOG_STD_MIN) & (out_raw < LOG_STD_MAX))
    d_out = np.zeros((n_uniq, 2 * d))
    np.add.at(d_out, inv, np.concatenate([d_mean, d_log_std], axis=1))
    grads, _ = agent.actor.backward(cache, d_out)
    info = {"bc": bc, "q_pi": float(np.mean(qmin)), "logp": float(np.mean(logp)),
            "std": float(np.mean(pol.std))}
    return float(loss), grads, info


def _finite(*xs) -> bool:
    return all(np.isfinite(x) for x in xs)


def train_sacfd(env, demo: DemoBuffer | None, cfg: SacConfig = SacConfig(), seed: int = 0,
                budget: int = 10_000, stop_fidelity: float | None = None, callback=None):
    """Algorithm loop; returns (agent, metrics rows, best action).

    ``budget`` caps environment interactions, deterministic evaluations of
    the policy mean included. ``demo=None`` (or mu = 0 and lambda_bc0 = 0)
    gives plain SAC.
    """
    rng = np.random.default_rng(seed)
    agent = SacAgent(env.obs_dim, env.action_dim, cfg, rng)
    replay = ReplayBuffer(env.obs_dim, env.action_dim, cfg.buffer_capacity)
    expert = ExpertPolicy(demo) if demo is not None and len(demo) else None
    mu = cfg.mu if expert is not None else 0.0
    tau_bc = cfg.bc_decay_tau if cfg.bc_decay_tau is not None else 0.2 * budget
    metrics: list[dict] = []
    timestep = episodes = 0
    best_fid, best_action = -np.inf, None
    window_rewards: list[float] = []
    last_q = last_pi = float("nan")
    next_eval = 0
    obs0 = env.reset()

    def evaluate():
        nonlocal timestep, best_fid, best_action
        a = agent.act(obs0[None], rng, deterministic=True)[0]
        _, r, _, info = env.step(a)
        timestep += 1
        f = info["fidelity"]
        if f > best_fid:
            best_fid, best_action = f, a.copy()
        return f

    while timestep < budget:
        if timestep >= next_eval or timestep == budget - 1:
            evaluate()
            lam = cfg.lambda_bc0 * math.exp(-episodes / tau_bc) if expert is not None else 0.0
            row = {"timestep": timestep, "episodes": episodes,
                   "mean_reward": float(np.mean(window_rewards)) if window_rewards else float("nan"),
                   "best_fidelity": best_fid, "q_loss": last_q, "pi_loss": last_pi, "lambda_bc": lam}
            metrics.append(row)
            if callback is not None:
                callback(row)
            window_rewards = []
            next_eval = timestep + cfg.eval_interval
            if stop_fidelity is not None and best_fid >= stop_fidelity:
                break
            if timestep >= budget:
                break
        for _ in range(cfg.env_steps_per_update):
            if timestep >= budget - 1:
                break  # the last interaction is reserved for a final evaluation
            obs = env.reset()
            a = agent.act(obs[None], rng)[0]
            nxt, r, done, _ = env.step(a)
            replay.add(obs, a, r, nxt, done)
            window_rewards.append(r)
            timestep += 1
            episodes += 1
        if episodes < cfg.learning_starts:
            continue
        lam = cfg.lambda_bc0 * math.exp(-episodes / tau_bc) if expert is not None else 0.0
        for _ in range(cfg.updates_per_epoch):
            batch = sample_mixed(replay, demo if expert is not None else None, cfg.batch, mu, rng)
            lq, g1, g2, _ = q_loss(batch, agent, rng)
            adam_step(agent.q1.params(), g1, agent.q1_opt, cfg.max_grad_norm)
            adam_step(agent.q2.params(), g2, agent.q2_opt, cfg.max_grad_norm)
            lp, ga, _ = policy_loss_sacfd(batch, agent, expert, lam, rng)
            if not _finite(lq, lp):
                raise TrainingDiverged(f"non-finite loss at step {timestep}: q={lq} pi={lp}")
            adam_step(agent.actor.params(), ga, agent.actor_opt, cfg.max_grad_norm)
            polyak(agent.q1_targ, agent.q1, cfg.tau)
            polyak(agent.q2_targ, agent.q2, cfg.tau)
            last_q, last_pi = lq, lp
    return agent, metrics, best_action
