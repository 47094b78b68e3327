"""
Safe adaptation on GridDuel, small budget
=========================================

Runs the off-line phase once, then every on-line setting from the same
artifacts, and prints the normalised adaptation / robustness / ABC table.
The budget is far below the one used by the acceptance suite, so the numbers
are noisy; the point is the shape of the pipeline.

Equivalent shell session::

    python -m safeadapt offline --out runs --set protocol.k1=200 ...
    python -m safeadapt adapt --setting oracle --out runs ...
    python -m safeadapt report --out runs
"""

import time
from dataclasses import replace

from safeadapt import AdaptConfig, GridDuel, PPOConfig, ProtocolConfig, SETTINGS
from safeadapt.evaluation import normalized_metrics, second_half_window
from safeadapt.protocol import offline_phase, online_phase

game = GridDuel()
ppo = PPOConfig(batch_size=250, learning_rate=0.02)
cfg = ProtocolConfig(k1=200, k2=50, k3=60, eval_mode="exact", master_seed=0)
adapt = AdaptConfig(lambda1=5.0, disc_updates_per_iter=5, disc_lr=0.05)

t0 = time.time()
art = offline_phase(game, cfg, ppo)
print(f"off-line phase: {time.time() - t0:.0f}s")

curves = {}
for s in SETTINGS:
    res = online_phase(game, art, replace(cfg, setting=s), adapt, ppo)
    curves[s] = (res.first, res.second)
    print(f"{s:9s}  last exploiter rewards: first {res.first.rewards[-1]:+.3f}"
          f"  second {res.second.rewards[-1]:+.3f}")

print()
print(normalized_metrics(curves, second_half_window(curves)).to_table())
