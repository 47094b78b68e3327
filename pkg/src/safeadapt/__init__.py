"""Safe opponent adaptation with ensemble-regularized opponent models.

Small tabular zero-sum games, numpy policy networks with hand-written
gradients, PPO, GAIL/BC opponent modelling, exact DP oracles, and the
off-line / on-line training protocol.
"""

from .evaluation import (RewardCurve, auc, best_response_value, estimate_reward, exploitability,
                         game_value, normalized_metrics, pair_value)
from .games import GAMES, GridDuel, MatrixGame, biased_rps, make_game, play, rollout, rps
from .nets import Discriminator, Policy, PolicyEnsemble, ValueFunction
from .opponent_model import AdaptConfig, ExperienceDataset, OpponentModel, opponent_model_step
from .ppo import PPOConfig, collect_batch, compute_advantages, ppo_update
from .protocol import (SETTINGS, PhaseArtifacts, ProtocolConfig, collect_experience,
                       offline_phase, online_phase, setting_to_losses, train_exploiter)
from .seeding import make_rng

__version__ = "0.1.0"
