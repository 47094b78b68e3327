"""
Ensembles versus single self-play on rock-paper-scissors
========================================================

A single PPO self-play pair chases its opponent around the cycle and ends
near a pure strategy. Five members paired at random average out into a
mixture close to uniform, which is what low exploitability means here.
"""

import numpy as np

from safeadapt import PPOConfig, ProtocolConfig, exploitability, rps
from safeadapt.protocol import ensemble_of, train_ensembles

game = rps()
ppo = PPOConfig(batch_size=100, learning_rate=0.01)

for n in (1, 5):
    values = []
    for seed in range(3):
        ego, _ = train_ensembles(game, ProtocolConfig(ensemble_size=n, master_seed=seed), ppo, 600)
        mix = ensemble_of(ego)
        values.append(exploitability(game, mix, "ego"))
        print(f"N={n} seed={seed} mixture={np.round(mix.action_probs(np.ones(1)), 3)}"
              f" exploitability={values[-1]:.3f}")
    print(f"N={n}: mean exploitability {np.mean(values):.3f}\n")
