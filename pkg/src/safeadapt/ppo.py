"""Clipped-surrogate policy optimisation with plain gradient descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np

from .games import EpisodeBatch, Game, play_steps
from .nets import Policy, ValueFunction, log_softmax, softmax
from .seeding import as_rng

log = logging.getLogger(__name__)

ADV_STD_FLOOR = 1e-8


class UpdateError(FloatingPointError):
    """Raised when an update produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class PPOConfig:
    batch_size: int = 1000
    minibatch_size: int = 128
    epochs_per_batch: int = 10
    clip_epsilon: float = 0.2
    learning_rate: float = 0.001
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    hidden: int = 32

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"PPOConfig.{f.name} must be positive")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.gae_lambda > 1.0:
            raise ValueError("gae_lambda must be <= 1")


@dataclass(frozen=True)
class RolloutBatch:
    """Flattened learner-side transitions, ordered by (episode, t)."""

    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    advantages: Optional[np.ndarray] = None
    raw_advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_episodes(cls, ep: EpisodeBatch, side: str, reward_override=None,
                      behaviour: Optional[Policy] = None) -> "RolloutBatch":
        """Learner view of a joint episode batch; ``side`` is "ego" or "oppo".

        With ``behaviour`` given, behaviour log-probs are recomputed through
        :meth:`Policy.log_probs` so the ratio at collection time is exactly 1.
        """
        if side == "ego":
            obs, act, logp, rew = ep.obs_ego, ep.a_ego, ep.logp_ego, ep.r_ego
        elif side == "oppo":
            obs, act, logp, rew = ep.obs_oppo, ep.a_oppo, ep.logp_oppo, -ep.r_ego
        else:
            raise ValueError(f"side must be 'ego' or 'oppo', got {side!r}")
        if reward_override is not None:
            rew = np.asarray(reward_override(obs, act, rew), dtype=float)
        if behaviour is not None:
            logp = behaviour.log_probs(obs, act)
        return cls(obs, act, logp, np.asarray(rew, dtype=float), ep.done.copy())

    def with_rewards(self, rewards: np.ndarray) -> "RolloutBatch":
        return replace(self, rewards=np.asarray(rewards, dtype=float), advantages=None,
                       raw_advantages=None, returns=None)


def gae(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates, reset at episode boundaries.

    The batch holds whole episodes, so every episode ends with ``done``.
    """
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for i in range(n - 1, -1, -1):
        if dones[i]:
            next_value, running = 0.0, 0.0
        else:
            next_value = values[i + 1]
        delta = rewards[i] + gamma * next_value - values[i]
        running = delta + gamma * lam * running
        adv[i] = running
    return adv


def compute_advantages(batch: RolloutBatch, value: ValueFunction, gamma: float, lam: float) -> RolloutBatch:
    if len(batch) == 0:
        raise ValueError("empty batch")
    v = value.predict(batch.obs)
    raw = gae(batch.rewards, v, batch.dones, gamma, lam)
    adv = (raw - raw.mean()) / max(raw.std(), ADV_STD_FLOOR)
    return replace(batch, advantages=adv, raw_advantages=raw, returns=raw + v)


def clipped_surrogate(policy: Policy, obs, actions, logp_old, adv, clip_epsilon: float) -> tuple:
    """Loss ``-mean(min(rho*A, clip(rho, 1-eps, 1+eps)*A))`` and its gradient."""
    logits, cache = policy.net.forward(np.asarray(obs, dtype=float))
    rows = np.arange(len(actions))
    logp = log_softmax(logits)[rows, actions]
    rho = np.exp(logp - logp_old)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    loss = -np.minimum(unclipped, clipped).mean()
    # gradient flows only through samples where the unclipped term is the minimum
    active = unclipped <= clipped
    coef = np.where(active, -adv * rho, 0.0) / len(actions)
    dlogits = -softmax(logits) * coef[:, None]
    dlogits[rows, actions] += coef
    return float(loss), policy.net.backward(cache, dlogits)


def _checked(loss, grad, what):
    if not (np.isfinite(loss) and np.isfinite(grad).all()):
        raise UpdateError(f"non-finite {what}: loss={loss}, "
                          f"max|grad|={np.nanmax(np.abs(grad)) if grad.size else 0}")
    return grad


def ppo_update(policy: Policy, value: ValueFunction, batch: RolloutBatch, cfg: PPOConfig,
               seed=0) -> tuple:
    """Epochs of shuffled minibatch steps on the clipped surrogate and value loss."""
    if batch.advantages is None:
        raise ValueError("call compute_advantages before ppo_update")
    rng = as_rng(seed)
    n = len(batch)
    pnet, vnet = policy.net, value.net
    lr = cfg.learning_rate
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            loss, g = clipped_surrogate(Policy(pnet), batch.obs[idx], batch.actions[idx],
                                        batch.logp_old[idx], batch.advantages[idx],
                                        cfg.clip_epsilon)
            pnet = pnet.step(_checked(loss, g, "policy gradient"), lr)
            vloss, vg = ValueFunction(vnet).loss_grad(batch.obs[idx], batch.returns[idx])
            vnet = vnet.step(cfg.value_coef * _checked(vloss, vg, "value gradient"), lr)
    return Policy(pnet), ValueFunction(vnet)


def collect_batch(game: Game, actor, opponent, cfg: PPOConfig, seed, *, side: str = "ego",
                  reward_override: Optional[Callable] = None) -> tuple:
    """Whole episodes of ``actor`` (playing ``side``) vs ``opponent``.

    Returns ``(RolloutBatch, EpisodeBatch)``; the episode batch keeps the
    joint record for callers that need both sides.
    """
    ego, oppo = (actor, opponent) if side == "ego" else (opponent, actor)
    ep = play_steps(game, ego, oppo, cfg.batch_size, seed)
    behaviour = actor if isinstance(actor, Policy) else None
    return RolloutBatch.from_episodes(ep, side, reward_override, behaviour), ep


def train_step(policy: Policy, value: ValueFunction, batch: RolloutBatch, gamma: float,
               cfg: PPOConfig, seed=0) -> tuple:
    """compute_advantages followed by ppo_update."""
    batch = compute_advantages(batch, value, gamma, cfg.gae_lambda)
    return ppo_update(policy, value, batch, cfg, seed)
