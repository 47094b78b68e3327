"""
Cloning an opponent from ten episodes
=====================================

Record ten GridDuel episodes against an opponent, then fit a fresh policy
to the recorded actions with plain behaviour-cloning steps and watch the
total-variation distance on the visited states shrink.
"""

import numpy as np

from safeadapt import GridDuel, Policy, PolicyEnsemble, play
from safeadapt.opponent_model import ExperienceDataset, bc_step
from safeadapt.seeding import make_rng

game = GridDuel()

# a random but fixed opponent stands in for the exploiter; its weights are
# scaled up so it is close to deterministic, like a trained exploiter.  A
# near-uniform teacher cannot be recovered from ten episodes: each state is
# seen about once and the maximum-likelihood fit memorises the sampled action.
teacher = Policy.init(game.obs_dim, game.n_actions_oppo, seed=make_rng(7, "teacher"))
teacher = teacher.with_net(teacher.net.with_flat(8.0 * teacher.net.flat()))
ego = PolicyEnsemble.init(5, game.obs_dim, game.n_actions_ego, seed=make_rng(7, "ego"))
data = ExperienceDataset.from_episodes(play(game, ego, teacher, 10, make_rng(7, "data")))
print(f"{data.n_episodes} episodes, {data.total_steps} opponent decisions")

student = Policy.init(game.obs_dim, game.n_actions_oppo, seed=make_rng(7, "student"))
target = teacher.action_probs(data.obs_oppo)
for k in range(1501):
    if k % 250 == 0:
        tv = 0.5 * np.abs(student.action_probs(data.obs_oppo) - target).sum(1).mean()
        print(f"step {k:5d}  TV {tv:.4f}")
    student = bc_step(student, data, 128, 0.1, make_rng(7, "bc", k))
