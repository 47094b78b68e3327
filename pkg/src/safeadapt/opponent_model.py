"""Regularised opponent modelling.

The estimated opponent policy is trained on three signals:

* an adversarial distance to the opponent ensemble, optimised GAIL-style
  through the imitation reward ``log D(o, a)``;
* behaviour cloning on the recorded interaction experience;
* the opponent's own environment reward against the ego ensemble.

The first and third are combined into a shaped per-step reward and handled
by one PPO update; behaviour cloning is a separate supervised step whose
learning rate is scaled by ``lambda1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .games import EpisodeBatch, Game, play_steps
from .nets import Discriminator, Policy, PolicyEnsemble, ValueFunction
from .ppo import PPOConfig, RolloutBatch, UpdateError, compute_advantages, ppo_update
from .seeding import as_rng


def _readonly(a) -> np.ndarray:
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ExperienceDataset:
    """Recorded ego-vs-opponent episodes; arrays are read-only."""

    episodes: EpisodeBatch
    obs_oppo: np.ndarray
    act_oppo: np.ndarray

    @classmethod
    def from_episodes(cls, ep: EpisodeBatch) -> "ExperienceDataset":
        return cls(ep, _readonly(ep.obs_oppo), _readonly(ep.a_oppo))

    @property
    def total_steps(self) -> int:
        return len(self.act_oppo)

    @property
    def n_episodes(self) -> int:
        return self.episodes.n_episodes

    def trajectories(self) -> list:
        return self.episodes.trajectories()


@dataclass(frozen=True)
class AdaptConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    disc_updates_per_iter: int = 1
    bc_minibatch: int = 128
    disc_lr: Optional[float] = None  # None: use the PPO learning rate
    model_lr: Optional[float] = None  # opponent-model PPO/BC base rate; None: PPO rate

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.disc_updates_per_iter < 0 or self.bc_minibatch < 1:
            raise ValueError("disc_updates_per_iter >= 0 and bc_minibatch >= 1 required")
        for name in ("disc_lr", "model_lr"):
            lr = getattr(self, name)
            if lr is not None and lr <= 0:
                raise ValueError(f"{name} must be positive")


LAMBDA_GRID = (0.1, 0.5, 1.0, 5.0)


@dataclass(frozen=True)
class OpponentModel:
    policy: Policy
    value: ValueFunction
    disc: Discriminator

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden: int = 32, seed=0) -> "OpponentModel":
        rng = as_rng(seed)
        return cls(Policy.init(obs_dim, n_actions, hidden, rng),
                   ValueFunction.init(obs_dim, hidden, rng),
                   Discriminator.init(obs_dim, n_actions, hidden, rng))


def disc_update(d: Discriminator, model_obs, model_act, ens_obs, ens_act, lr: float,
                steps: int = 1) -> Discriminator:
    """Full-batch gradient steps separating ensemble (D -> 1) from model (D -> 0) samples."""
    if len(model_act) == 0 or len(ens_act) == 0:
        raise ValueError("both discriminator batches must be non-empty")
    net = d.net
    for _ in range(steps):
        loss, grad = d.with_net(net).loss_grad(model_obs, model_act, ens_obs, ens_act)
        if not (np.isfinite(loss) and np.isfinite(grad).all()):
            raise UpdateError(f"non-finite discriminator loss {loss}")
        net = net.step(grad, lr)
    return d.with_net(net)


def imitation_reward(d: Discriminator, obs, action):
    """``log D(o, a)``; finite because D is clamped to [1e-7, 1 - 1e-7]."""
    return np.log(d.forward(obs, action))


def bc_loss_grad(policy: Policy, obs, actions) -> tuple:
    """Mean negative log-likelihood of the observed actions, and its gradient."""
    n = len(actions)
    ll, grad = policy.weighted_log_prob_grad(obs, actions, np.full(n, 1.0 / n))
    return -ll, -grad


def bc_step(policy: Policy, data: ExperienceDataset, minibatch: int, lr: float, seed=0) -> Policy:
    """One ascent step on the log-likelihood of a uniformly sampled minibatch."""
    if lr == 0.0:
        return policy
    if data.total_steps == 0:
        raise ValueError("empty experience dataset")
    rng = as_rng(seed)
    idx = rng.integers(data.total_steps, size=minibatch)
    loss, grad = bc_loss_grad(policy, data.obs_oppo[idx], data.act_oppo[idx])
    if not (np.isfinite(loss) and np.isfinite(grad).all()):
        raise UpdateError(f"non-finite behaviour-cloning loss {loss}")
    return policy.with_net(policy.net.step(grad, lr))


def shaped_rewards(d: Discriminator, batch: RolloutBatch, env_rewards: np.ndarray,
                   use_reg: bool, rl_weight: float) -> np.ndarray:
    """Per-step ``log D(o, a) + rl_weight * r_env`` for the opponent side."""
    out = rl_weight * np.asarray(env_rewards, dtype=float)
    if use_reg:
        out = out + imitation_reward(d, batch.obs, batch.actions)
    return out


def opponent_model_step(
    m: OpponentModel,
    game: Game,
    ego_ensemble: PolicyEnsemble,
    oppo_ensemble: PolicyEnsemble,
    data: ExperienceDataset,
    cfg: AdaptConfig,
    ppo_cfg: PPOConfig,
    seed,
    *,
    use_reg: bool = True,
    use_bc: bool = True,
    use_rl: bool = True,
) -> tuple:
    """One interleaved update of the opponent model.

    1. collect a batch of the model against ego-ensemble members;
    2. update the discriminator against a fresh opponent-ensemble batch;
    3. PPO on the shaped reward (imitation + lambda2 * environment reward);
    4. a behaviour-cloning step with learning rate ``lr * lambda1``.

    Returns ``(model, env_steps)`` where ``env_steps`` counts the steps of
    both collected batches.
    """
    rng = as_rng(seed)
    rl_weight = cfg.lambda2 if use_rl else 0.0
    if cfg.model_lr is not None:
        ppo_cfg = replace(ppo_cfg, learning_rate=cfg.model_lr)
    policy, value, disc = m.policy, m.value, m.disc

    ep = play_steps(game, ego_ensemble, policy, ppo_cfg.batch_size, rng)
    batch = RolloutBatch.from_episodes(ep, "oppo", behaviour=policy)
    env_steps = ep.n_steps
    if use_reg:
        ref = play_steps(game, ego_ensemble, oppo_ensemble, ppo_cfg.batch_size, rng)
        env_steps += ref.n_steps
        disc = disc_update(disc, batch.obs, batch.actions, ref.obs_oppo, ref.a_oppo,
                           cfg.disc_lr or ppo_cfg.learning_rate, cfg.disc_updates_per_iter)
    batch = batch.with_rewards(shaped_rewards(disc, batch, batch.rewards, use_reg, rl_weight))
    batch = compute_advantages(batch, value, game.discount, ppo_cfg.gae_lambda)
    policy, value = ppo_update(policy, value, batch, ppo_cfg, rng)
    if use_bc:
        policy = bc_step(policy, data, cfg.bc_minibatch, ppo_cfg.learning_rate * cfg.lambda1, rng)
    return replace(m, policy=policy, value=value, disc=disc), env_steps
