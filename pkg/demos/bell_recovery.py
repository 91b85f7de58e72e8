"""Bell state on a miscalibrated two-qubit system.

GRAPE designs a pulse on the nominal model, the pulse loses fidelity on the
biased system, and SACfD recovers it starting from that pulse. Small budget so
the script finishes in about a minute; the configs/ directory has full-size runs.
"""
import sys
import tempfile

from qrlfd.config import config_from_overrides
from qrlfd.experiment import run_seed
from qrlfd.io import read_csv

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
cfg = config_from_overrides([f"budget={budget}", "stop_fidelity=0.995", "bias.level=0.25"],
                            {"task": "bell", "algorithm": "sacfd"})

with tempfile.TemporaryDirectory() as out:
    s = run_seed(cfg, 0, out)
    rows = read_csv(f"{out}/seed0_metrics.csv")

print(f"GRAPE on the nominal model : {s['demo_nominal_fidelity']:.5f}")
print(f"same pulse, 25% bias       : {s['demo_fidelity']:.5f}")
for r in rows[:: max(1, len(rows) // 10)]:
    print(f"  episode {int(r['timestep']):6d}  best fidelity {r['best_fidelity']:.5f}  lambda_bc {r['lambda_bc']:.3f}")
print(f"after SACfD                : {s['final_fidelity']:.5f} ({s['timesteps']} episodes, {s['wall_time_s']:.0f} s)")
