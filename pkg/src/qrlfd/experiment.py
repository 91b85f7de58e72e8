"""Experiment orchestration: environments, demonstrations, training runs, artifacts.

A run directory holds the resolved config and, per seed, a metrics CSV, the
best control found (pulse JSON or ECD parameter JSON), the Wigner function of
the corresponding final cavity state, a policy checkpoint and a summary JSON.
``summary.json`` aggregates the seeds. Nothing in the CSVs depends on wall time,
so re-running a resolved config reproduces them byte for byte.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, config_hash, resolve, to_yaml
from .dynamics import PulseSet
from .ecdopt import EcdOptConfig, optimize_ecd
from .env import BiasModel, EcdEnv, EcdRanges, FilterModel, PulseEnv
from .grape import GrapeConfig, grape_optimize, initial_guess
from .model import (
    KerrParams,
    TwoQubitParams,
    build_kerr_system,
    build_two_qubit_system,
    make_target,
    phase_space_grid,
    wigner,
)
from .net import MlpNet
from .ppo import PpoConfig, train_ppo
from .qmath import mhz, partial_trace_keep
from .sacfd import SacConfig, demo_buffer_from_actions, train_sacfd

log = logging.getLogger(__name__)

SAC_COLUMNS = ["timestep", "episodes", "mean_reward", "best_fidelity", "q_loss", "pi_loss", "lambda_bc"]
PPO_COLUMNS = ["timestep", "episodes", "mean_reward", "best_fidelity", "clip_frac", "approx_kl", "entropy"]


class RunFailure(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


# --- environment construction --------------------------------------------------------

def build_env(cfg: ExperimentConfig, seed: int = 0):
    """Biased environment for ``cfg.task``; ``seed`` drives the shot-noise RNG."""
    cfg = resolve(cfg)
    b = cfg.bias
    if cfg.is_ecd:
        kind = "cat" if cfg.task == "cat_ecd" else "gkp"
        target = make_target(kind, (2, cfg.ecd.n_cavity), alpha=cfg.target.alpha, delta=cfg.target.delta)
        bias = BiasModel(b.level, b.mode, b.seed, None, b.max_level)
        return EcdEnv(cfg.ecd.depth, target, bias, EcdRanges(cfg.ecd.beta_max), cfg.reward.mode,
                      cfg.reward.shots, seed)
    f = b.filter
    filt = None if f.kind == "none" else FilterModel(f.kind, f.window, f.cutoff_mhz)
    bias = BiasModel(b.level, b.mode, b.seed, filt, b.max_level)
    if cfg.task == "bell":
        q = cfg.two_qubit
        p = TwoQubitParams(mhz(q.omega1_mhz), mhz(q.omega2_mhz), mhz(q.g_max_mhz), mhz(q.drive_max_mhz))
        spec = build_two_qubit_system(p, cfg.pulse.n_segments, cfg.pulse.dt_ns)
        target = make_target("bell", (2, 2))
    else:
        k = cfg.kerr
        p = KerrParams(mhz(k.d_omega_c_mhz), mhz(k.d_omega_q_mhz), mhz(k.chi_mhz), mhz(k.e_c_mhz),
                       mhz(k.k_self_mhz), mhz(k.chi_prime_mhz), k.n_q, k.n_c,
                       mhz(k.cavity_drive_max_mhz), mhz(k.qubit_drive_max_mhz))
        spec = build_kerr_system(p, cfg.pulse.n_segments, cfg.pulse.dt_ns)
        target = make_target(cfg.task, (k.n_q, k.n_c), alpha=cfg.target.alpha)
    return PulseEnv(spec, target, bias=bias, reward_mode=cfg.reward.mode, shots=cfg.reward.shots, seed=seed)


# --- demonstrations -------------------------------------------------------------------

@dataclass
class Demo:
    action: np.ndarray
    nominal_fidelity: float
    biased_fidelity: float
    converged: bool
    trace: list[float]
    control: object  # PulseSet or EcdCircuitParams


def make_demo(env, cfg: ExperimentConfig, seed: int) -> Demo:
    """GRAPE (pulse tasks) or circuit optimisation (ECD tasks) on the nominal model."""
    cfg = resolve(cfg)
    if isinstance(env, EcdEnv):
        e = cfg.ecd
        res = optimize_ecd(env, EcdOptConfig(e.restarts, e.max_iters, e.target_fidelity, e.init_scale), seed)
        return Demo(res.action, res.fidelity, env.true_fidelity(res.action), res.converged, res.trace, res.params)
    g = cfg.grape
    gcfg = GrapeConfig(g.learning_rate, g.max_iters, g.target_fidelity, g.stop_fidelity_window, g.max_learning_rate)
    res = grape_optimize(env.nominal, env.psi0, env.target, initial_guess(env.nominal, seed, g.init_scale), gcfg)
    action = env.encode(res.pulses)
    return Demo(action, res.fidelity, env.true_fidelity(action), res.converged, list(res.trace), res.pulses)


def _save_control(path_stem: Path, env, action, chash) -> Path:
    if isinstance(env, EcdEnv):
        path = path_stem.with_name(path_stem.name + "_ecd.json")
        io.save_ecd_params(path, env.decode(action), chash)
    else:
        path = path_stem.with_name(path_stem.name + "_pulses.json")
        io.save_pulses(path, env.decode(action), chash)
    return path


def _final_cavity_rho(env, action):
    state = env.final_state(action)
    if len(state.dims) < 2 or state.dims == (2, 2):
        return None  # two-qubit task: no oscillator to show
    return partial_trace_keep(state, len(state.dims) - 1)


def write_wigner(path, env, action, cfg: ExperimentConfig, chash) -> bool:
    rho = _final_cavity_rho(env, action)
    if rho is None:
        return False
    xs = np.linspace(-cfg.wigner_extent, cfg.wigner_extent, cfg.wigner_points)
    grid = phase_space_grid(cfg.wigner_extent, cfg.wigner_points)
    io.write_wigner_csv(path, xs, xs, wigner(rho, grid), chash)
    return True


# --- training ---------------------------------------------------------------------------

def _sac_config(cfg: ExperimentConfig) -> SacConfig:
    d = dataclasses.asdict(cfg.sacfd)
    d["hidden"] = tuple(d["hidden"])
    if cfg.algorithm == "sac_scratch":
        d["mu"], d["lambda_bc0"] = 0.0, 0.0
    return SacConfig(**d)


def _ppo_config(cfg: ExperimentConfig) -> PpoConfig:
    d = dataclasses.asdict(cfg.ppo)
    d["hidden"] = tuple(d["hidden"])
    return PpoConfig(**d)


def episodes_to_threshold(rows: list[dict], threshold: float):
    """``timestep`` of the first metrics row whose best fidelity reaches ``threshold``."""
    for row in rows:
        if row["best_fidelity"] >= threshold:
            return int(row["timestep"])
    return None


def run_seed(cfg: ExperimentConfig, seed: int, out_dir) -> dict:
    """One seed of ``cfg``: demo, training, artifacts. Returns the seed summary."""
    cfg = resolve(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    stem = out / f"seed{seed}"
    marker = out / f"seed{seed}.incomplete"
    marker.write_text("run started; this file is removed on success\n")
    t0 = time.perf_counter()
    summary = {"seed": seed, "task": cfg.task, "algorithm": cfg.algorithm, "budget": cfg.budget}
    try:
        env = build_env(cfg, seed)
        demo = make_demo(env, cfg, seed) if (cfg.uses_demo or cfg.budget == 0) else None
        if demo is not None:
            summary.update(demo_nominal_fidelity=demo.nominal_fidelity, demo_fidelity=demo.biased_fidelity,
                           demo_converged=demo.converged)
            io.write_csv(out / f"seed{seed}_demo_trace.csv",
                         [{"iteration": i, "fidelity": f} for i, f in enumerate(demo.trace)],
                         ["iteration", "fidelity"], chash)
        if cfg.budget == 0:
            best_action, rows, final = demo.action, [], demo.biased_fidelity
            columns = SAC_COLUMNS if cfg.algorithm.startswith("sac") else PPO_COLUMNS
        else:
            buf = None
            if demo is not None:
                buf, _ = demo_buffer_from_actions(env, [demo.action], [demo.nominal_fidelity], [demo.converged])
            if cfg.algorithm in ("sacfd", "sac_scratch"):
                agent, rows, best_action = train_sacfd(env, buf, _sac_config(cfg), seed, cfg.budget,
                                                       cfg.stop_fidelity)
                columns, net, kind = SAC_COLUMNS, agent.actor, "squashed"
            else:
                agent, rows, best_action = train_ppo(env, buf, _ppo_config(cfg), seed, cfg.budget,
                                                     use_pretrain=cfg.algorithm == "ppo",
                                                     stop_fidelity=cfg.stop_fidelity)
                columns, net, kind = PPO_COLUMNS, agent.actor, "gaussian"
            final = max(r["best_fidelity"] for r in rows)
            if cfg.save_checkpoint:
                net.save(out / f"seed{seed}_actor", extra={"policy": kind, "act_dim": env.action_dim})
        io.write_csv(out / f"seed{seed}_metrics.csv", rows, columns, chash)
        _save_control(stem, env, best_action, chash)
        write_wigner(out / f"seed{seed}_wigner.csv", env, best_action, cfg, chash)
        summary.update(final_fidelity=float(final), episodes_to_threshold=episodes_to_threshold(rows, cfg.threshold),
                       threshold=cfg.threshold, timesteps=int(rows[-1]["timestep"]) if rows else 0,
                       status="complete")
    except Exception as e:
        summary.update(status="incomplete", error=f"{type(e).__name__}: {e}")
        summary["wall_time_s"] = time.perf_counter() - t0
        io.write_json(out / f"seed{seed}_summary.json", summary, chash)
        raise RunFailure(f"seed {seed} failed: {e}") from e
    summary["wall_time_s"] = time.perf_counter() - t0
    io.write_json(out / f"seed{seed}_summary.json", summary, chash)
    marker.unlink()
    return summary


def write_resolved_config(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.yaml"
    path.write_text(io.header_line(config_hash(cfg)) + "\n" + to_yaml(resolve(cfg)))
    return path


def _aggregate(cfg: ExperimentConfig, summaries: list[dict]) -> dict:
    finals = [s["final_fidelity"] for s in summaries]
    hits = [s["episodes_to_threshold"] for s in summaries]
    reached = sorted(h for h in hits if h is not None)
    # seeds that never reach the threshold count as beyond the budget
    padded = sorted(h if h is not None else np.inf for h in hits)
    med = float(np.median(padded)) if padded else None
    return {
        "task": cfg.task, "algorithm": cfg.algorithm, "seeds": [s["seed"] for s in summaries],
        "final_fidelity": finals, "median_final_fidelity": float(np.median(finals)),
        "episodes_to_threshold": hits, "threshold": cfg.threshold,
        "median_episodes_to_threshold": med if med is not None and np.isfinite(med) else None,
        "seeds_reaching_threshold": len(reached),
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds=None, workers: int = 1) -> Path:
    """All seeds of ``cfg`` (in parallel when ``workers`` > 1); returns the run directory."""
    cfg = resolve(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    seeds = list(cfg.seeds if seeds is None else seeds)
    write_resolved_config(cfg, out)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            summaries = list(pool.map(run_seed, [cfg] * len(seeds), seeds, [out] * len(seeds)))
    else:
        summaries = [run_seed(cfg, s, out) for s in seeds]
    io.write_json(out / "summary.json", _aggregate(cfg, summaries), config_hash(cfg))
    return out


def run_grape(cfg: ExperimentConfig, seed: int, out_dir) -> Demo:
    """Demo synthesis only: control file plus optimisation trace."""
    cfg = resolve(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    env = build_env(cfg, seed)
    demo = make_demo(env, cfg, seed)
    _save_control(out / f"demo_seed{seed}", env, demo.action, chash)
    io.write_csv(out / f"demo_seed{seed}_trace.csv",
                 [{"iteration": i, "fidelity": f} for i, f in enumerate(demo.trace)],
                 ["iteration", "fidelity"], chash)
    return demo


# --- evaluation ----------------------------------------------------------------------------

def _load_json(path: Path) -> dict | None:
    import json

    try:
        return json.loads(path.read_text())
    except (ValueError, OSError):
        return None


def policy_action(checkpoint, env) -> np.ndarray:
    """Deterministic action from a pulse JSON, an ECD parameter JSON or an actor checkpoint."""
    path = Path(checkpoint)
    doc = _load_json(path) if path.suffix == ".json" else None
    if doc is not None and "channels" in doc:
        if isinstance(env, EcdEnv):
            raise ShapeMismatch("pulse file given for a gate-level task")
        pulses = io.load_pulses(path)
        if pulses.values.shape != (env.nominal.n_controls, env.nominal.n_segments):
            raise ShapeMismatch(f"pulse file has shape {pulses.values.shape}, env expects "
                                f"{(env.nominal.n_controls, env.nominal.n_segments)}")
        return env.encode(pulses)
    if doc is not None and "beta_re" in doc:
        if not isinstance(env, EcdEnv):
            raise ShapeMismatch("ECD parameter file given for a pulse-level task")
        params = io.load_ecd_params(path)
        if params.depth != env.depth:
            raise ShapeMismatch(f"ECD file has depth {params.depth}, env expects {env.depth}")
        return env.encode(params)
    manifest = MlpNet.manifest(path)
    net = MlpNet.load(path)
    kind = manifest.get("extra", {}).get("policy", "gaussian")
    want = 2 * env.action_dim if kind == "squashed" else env.action_dim
    if net.in_dim != env.obs_dim or net.out_dim != want:
        raise ShapeMismatch(f"checkpoint maps {net.in_dim} -> {net.out_dim}, env needs {env.obs_dim} -> {want}")
    out = net(env.reset()[None])[0]
    if kind == "squashed":
        return np.tanh(out[: env.action_dim])
    return np.clip(out, -1.0, 1.0)


def eval_agent(checkpoint, cfg: ExperimentConfig, episodes: int = 10, seed: int = 0) -> dict:
    """Run the deterministic policy for ``episodes`` episodes on the biased env."""
    env = build_env(cfg, seed)
    action = policy_action(checkpoint, env)
    fids, rews = [], []
    for _ in range(episodes):
        env.reset()
        _, r, _, info = env.step(action)
        fids.append(info["fidelity"])
        rews.append(r)
    fids, rews = np.array(fids), np.array(rews)
    return {"episodes": episodes, "mean_fidelity": float(fids.mean()), "min_fidelity": float(fids.min()),
            "max_fidelity": float(fids.max()), "mean_reward": float(rews.mean()),
            "reward_variance": float(rews.var())}
