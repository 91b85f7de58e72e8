"""Cat state from a depth-5 ECD circuit with biased gate parameters.

Optimises the circuit on the nominal model, shows what the 25% bias does to it,
fine-tunes with demo-pretrained PPO and prints a coarse Wigner map of the result.
"""
import sys

import numpy as np

from qrlfd.config import config_from_overrides
from qrlfd.ecdopt import EcdOptConfig, optimize_ecd
from qrlfd.experiment import build_env
from qrlfd.model import phase_space_grid, wigner
from qrlfd.ppo import PpoConfig, train_ppo
from qrlfd.qmath import partial_trace_keep
from qrlfd.sacfd import demo_buffer_from_actions

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
cfg = config_from_overrides(["bias.level=0.25"], {"task": "cat_ecd", "algorithm": "ppo"})
env = build_env(cfg, seed=0)

demo = optimize_ecd(env, EcdOptConfig(restarts=10), seed=0)
print(f"circuit on nominal gates : {demo.fidelity:.5f}")
print(f"same circuit, 25% bias   : {env.true_fidelity(demo.action):.5f}")

buf, _ = demo_buffer_from_actions(env, [demo.action], [demo.fidelity], [demo.converged])
ppo_cfg = PpoConfig(hidden=(128, 128), init_log_std=-6.0)
agent, rows, best = train_ppo(env, buf, ppo_cfg, seed=0, budget=budget, stop_fidelity=0.99)
print(f"after PPO fine-tuning    : {rows[-1]['best_fidelity']:.5f} ({rows[-1]['timestep']} episodes)")

rho = partial_trace_keep(env.final_state(best), 1)
w = wigner(rho, phase_space_grid(3.5, 29))
shades = " .:-=+*#%@"
scale = np.max(np.abs(w))
for row in w[::-2]:
    print("".join(shades[int(np.clip((v / scale + 1) / 2, 0, 0.999) * len(shades))] for v in row))
