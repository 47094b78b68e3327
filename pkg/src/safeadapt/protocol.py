"""Off-line ensemble/exploiter training and on-line safe adaptation.

Off-line phase
    ``k1`` rounds alternating one ensemble-training iteration (both sides
    sample a member, play, and update) with one exploiter iteration against
    the ego ensemble; then ``k2`` more exploiter iterations with both
    ensembles frozen. The ego ensemble never trains against the exploiter.

On-line phase
    Record ``adaptation_episodes`` episodes of the ego ensemble against the
    first exploiter, copy the first exploiter into a second one, then for
    ``k3`` rounds: (a) update the opponent model (depending on the setting)
    and one uniformly chosen ego member against the setting's training
    opponent, (b) one iteration of the second exploiter against the ego
    ensemble, (c) evaluate both exploiters against the ego ensemble.

Every iteration draws from its own stream, ``make_rng(master_seed, tag, k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .evaluation import RewardCurve, estimate_reward, pair_value
from .games import Game, play
from .nets import Discriminator, Policy, PolicyEnsemble, ValueFunction
from .opponent_model import AdaptConfig, ExperienceDataset, OpponentModel, opponent_model_step
from .ppo import PPOConfig, RolloutBatch, collect_batch, train_step
from .seeding import make_rng

log = logging.getLogger(__name__)

SETTINGS = ("oracle", "ensemble", "reg_bc_rl", "bc_rl", "reg_rl", "reg_bc")


class Losses(NamedTuple):
    use_reg: bool
    use_bc: bool
    use_rl: bool
    training_opponent: str  # "model", "exploiter1" or "oppo_ensemble"


def setting_to_losses(setting: str) -> Losses:
    table = {
        "reg_bc_rl": Losses(True, True, True, "model"),
        "bc_rl": Losses(False, True, True, "model"),
        "reg_rl": Losses(True, False, True, "model"),
        "reg_bc": Losses(True, True, False, "model"),
        "oracle": Losses(False, False, False, "exploiter1"),
        "ensemble": Losses(False, False, False, "oppo_ensemble"),
    }
    try:
        return table[setting]
    except KeyError:
        raise ValueError(f"unknown setting {setting!r}; choose from {SETTINGS}") from None


@dataclass(frozen=True)
class ProtocolConfig:
    ensemble_size: int = 5
    k1: int = 2000
    k2: int = 500
    k3: int = 2000
    adaptation_episodes: int = 10
    setting: str = "reg_bc_rl"
    master_seed: int = 0
    eval_episodes: int = 20
    eval_mode: str = "episodes"  # "episodes" (Monte-Carlo) or "exact" (tabular DP)
    discounted_eval: bool = False

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        for name in ("k1", "k2", "k3", "adaptation_episodes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if self.eval_mode not in ("episodes", "exact"):
            raise ValueError(f"eval_mode must be 'episodes' or 'exact', got {self.eval_mode!r}")
        setting_to_losses(self.setting)


@dataclass(frozen=True)
class Learner:
    """A policy with its own value baseline."""

    policy: Policy
    value: ValueFunction

    @classmethod
    def init(cls, game: Game, side: str, hidden: int, seed) -> "Learner":
        rng = make_rng(seed) if isinstance(seed, int) else seed
        n_actions = game.n_actions_ego if side == "ego" else game.n_actions_oppo
        return cls(Policy.init(game.obs_dim, n_actions, hidden, rng),
                   ValueFunction.init(game.obs_dim, hidden, rng))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.policy.net.flat(), self.value.net.flat()])


def ensemble_of(learners) -> PolicyEnsemble:
    return PolicyEnsemble(tuple(l.policy for l in learners))


def fingerprint(*things) -> bytes:
    """Exact byte image of parameters, for freeze checks."""
    parts = []
    for th in things:
        if isinstance(th, (tuple, list)):
            parts.append(fingerprint(*th))
        elif isinstance(th, Learner):
            parts.append(th.flat().tobytes())
        elif isinstance(th, PolicyEnsemble):
            parts.append(th.flat().tobytes())
        elif isinstance(th, (Policy, ValueFunction, Discriminator)):
            parts.append(th.net.flat().tobytes())
        elif isinstance(th, OpponentModel):
            parts.append(fingerprint(th.policy, th.value, th.disc))
        elif th is None:
            parts.append(b"-")
        else:
            raise TypeError(f"cannot fingerprint {type(th).__name__}")
    return b"".join(parts)


class FreezeViolation(AssertionError):
    pass


def _check_frozen(before: bytes, after: bytes, what: str):
    if before != after:
        raise FreezeViolation(f"{what} changed while frozen")


@dataclass(frozen=True)
class PhaseArtifacts:
    ego: tuple
    oppo: tuple
    exploiter1: Learner
    exploiter2: Optional[Learner] = None
    opponent_model: Optional[OpponentModel] = None
    experience: Optional[ExperienceDataset] = None

    @property
    def ego_ensemble(self) -> PolicyEnsemble:
        return ensemble_of(self.ego)

    @property
    def oppo_ensemble(self) -> PolicyEnsemble:
        return ensemble_of(self.oppo)


def init_artifacts(game: Game, cfg: ProtocolConfig, ppo_cfg: PPOConfig) -> PhaseArtifacts:
    rng = make_rng(cfg.master_seed, "init")
    ego = tuple(Learner.init(game, "ego", ppo_cfg.hidden, rng) for _ in range(cfg.ensemble_size))
    oppo = tuple(Learner.init(game, "oppo", ppo_cfg.hidden, rng) for _ in range(cfg.ensemble_size))
    return PhaseArtifacts(ego, oppo, Learner.init(game, "oppo", ppo_cfg.hidden, rng))


def ensemble_iteration(game: Game, ego: tuple, oppo: tuple, ppo_cfg: PPOConfig, rng) -> tuple:
    """Sample one member per side, play them, update both on their own reward."""
    j = int(rng.integers(len(ego)))
    l = int(rng.integers(len(oppo)))
    batch, ep = collect_batch(game, ego[j].policy, oppo[l].policy, ppo_cfg, rng, side="ego")
    pe, ve = train_step(ego[j].policy, ego[j].value, batch, game.discount, ppo_cfg, rng)
    ob = RolloutBatch.from_episodes(ep, "oppo", behaviour=oppo[l].policy)
    po, vo = train_step(oppo[l].policy, oppo[l].value, ob, game.discount, ppo_cfg, rng)
    ego = ego[:j] + (Learner(pe, ve),) + ego[j + 1:]
    oppo = oppo[:l] + (Learner(po, vo),) + oppo[l + 1:]
    return ego, oppo, ep.n_steps


def train_ensembles(game: Game, cfg: ProtocolConfig, ppo_cfg: PPOConfig, k: int,
                    ego: Optional[tuple] = None, oppo: Optional[tuple] = None,
                    tag: str = "ensemble") -> tuple:
    """``k`` ensemble-training iterations; returns the (ego, oppo) learner tuples."""
    if ego is None or oppo is None:
        art = init_artifacts(game, cfg, ppo_cfg)
        ego, oppo = art.ego, art.oppo
    for it in range(k):
        ego, oppo, _ = ensemble_iteration(game, ego, oppo, ppo_cfg,
                                          make_rng(cfg.master_seed, tag, it))
    return ego, oppo


def exploiter_iteration(game: Game, exploiter: Learner, ego_ensemble: PolicyEnsemble,
                        ppo_cfg: PPOConfig, rng) -> tuple:
    batch, ep = collect_batch(game, exploiter.policy, ego_ensemble, ppo_cfg, rng, side="oppo")
    p, v = train_step(exploiter.policy, exploiter.value, batch, game.discount, ppo_cfg, rng)
    return Learner(p, v), ep.n_steps


def train_exploiter(game: Game, exploiter: Learner, ego_ensemble: PolicyEnsemble, k: int,
                    ppo_cfg: PPOConfig, master_seed: int = 0, tag: str = "exploiter",
                    offset: int = 0) -> Learner:
    """``k`` PPO iterations of ``exploiter`` against the frozen ego ensemble."""
    before = fingerprint(ego_ensemble)
    for it in range(k):
        exploiter, _ = exploiter_iteration(game, exploiter, ego_ensemble, ppo_cfg,
                                           make_rng(master_seed, tag, offset + it))
    _check_frozen(before, fingerprint(ego_ensemble), "ego ensemble")
    return exploiter


def offline_phase(game: Game, cfg: ProtocolConfig, ppo_cfg: PPOConfig,
                  art: Optional[PhaseArtifacts] = None) -> PhaseArtifacts:
    art = art or init_artifacts(game, cfg, ppo_cfg)
    ego, oppo, exploiter = art.ego, art.oppo, art.exploiter1
    for it in range(cfg.k1):
        ego, oppo, _ = ensemble_iteration(game, ego, oppo, ppo_cfg,
                                          make_rng(cfg.master_seed, "offline-ensemble", it))
        exploiter = train_exploiter(game, exploiter, ensemble_of(ego), 1, ppo_cfg,
                                    cfg.master_seed, "offline-exploiter", it)
    frozen = fingerprint(ego, oppo)
    exploiter = train_exploiter(game, exploiter, ensemble_of(ego), cfg.k2, ppo_cfg,
                                cfg.master_seed, "offline-exploiter", cfg.k1)
    _check_frozen(frozen, fingerprint(ego, oppo), "ensembles during the exploiter-only stage")
    log.info("offline phase done: k1=%d k2=%d", cfg.k1, cfg.k2)
    return PhaseArtifacts(ego, oppo, exploiter)


def collect_experience(game: Game, ego_ensemble: PolicyEnsemble, exploiter: Policy,
                       episodes: int, seed) -> ExperienceDataset:
    """Whole episodes of the ego ensemble (member redrawn per episode) vs the exploiter."""
    return ExperienceDataset.from_episodes(play(game, ego_ensemble, exploiter, episodes, seed))


@dataclass
class OnlineRecord:
    iteration: int
    env_steps: int
    exploiter1_reward: float
    exploiter2_reward: float
    training_opponent: str
    member: int


@dataclass
class OnlineResult:
    artifacts: PhaseArtifacts
    first: RewardCurve
    second: RewardCurve
    records: list = field(default_factory=list)


def exploiter_reward(game: Game, ego_ensemble: PolicyEnsemble, exploiter: Policy,
                     cfg: ProtocolConfig, seed) -> float:
    """Exploiter (opponent-side) reward against the ego ensemble."""
    if cfg.eval_mode == "exact":
        discount = None if cfg.discounted_eval else 1.0
        return -pair_value(game, ego_ensemble, exploiter, discount)
    return -estimate_reward(game, ego_ensemble, exploiter, cfg.eval_episodes, seed,
                            discounted=cfg.discounted_eval)


def prepare_online(game: Game, art: PhaseArtifacts, cfg: ProtocolConfig,
                   ppo_cfg: PPOConfig) -> PhaseArtifacts:
    """Record the interaction experience and set up the second exploiter and the model."""
    experience = art.experience
    if experience is None:
        experience = collect_experience(game, art.ego_ensemble, art.exploiter1.policy,
                                        cfg.adaptation_episodes,
                                        make_rng(cfg.master_seed, "experience"))
    model = art.opponent_model or OpponentModel.init(
        game.obs_dim, game.n_actions_oppo, ppo_cfg.hidden, make_rng(cfg.master_seed, "model-init"))
    exploiter2 = Learner(Policy(art.exploiter1.policy.net.with_flat(art.exploiter1.policy.net.flat())),
                         ValueFunction(art.exploiter1.value.net.with_flat(art.exploiter1.value.net.flat())))
    return replace(art, exploiter2=exploiter2, opponent_model=model, experience=experience)


def online_phase(game: Game, art: PhaseArtifacts, cfg: ProtocolConfig, adapt_cfg: AdaptConfig,
                 ppo_cfg: PPOConfig, callback=None) -> OnlineResult:
    """Safe adaptation of the ego ensemble under ``cfg.setting``.

    ``callback(iteration, artifacts)`` is invoked after every iteration with
    the current artifacts (used for periodic checkpoints).
    """
    losses = setting_to_losses(cfg.setting)
    art = prepare_online(game, art, cfg, ppo_cfg)
    seed = cfg.master_seed
    frozen = fingerprint(art.exploiter1, art.oppo)
    ego, model, exploiter2 = art.ego, art.opponent_model, art.exploiter2
    oppo_ensemble = art.oppo_ensemble
    records, steps = [], 0
    for it in range(cfg.k3):
        ego_ensemble = ensemble_of(ego)
        if losses.training_opponent == "model":
            model, _ = opponent_model_step(
                model, game, ego_ensemble, oppo_ensemble, art.experience, adapt_cfg, ppo_cfg,
                make_rng(seed, "model", it), use_reg=losses.use_reg, use_bc=losses.use_bc,
                use_rl=losses.use_rl)
            opponent = model.policy
        elif losses.training_opponent == "exploiter1":
            opponent = art.exploiter1.policy
        else:
            opponent = oppo_ensemble

        rng = make_rng(seed, "ego", it)
        j = int(rng.integers(len(ego)))
        batch, ep = collect_batch(game, ego[j].policy, opponent, ppo_cfg, rng, side="ego")
        p, v = train_step(ego[j].policy, ego[j].value, batch, game.discount, ppo_cfg, rng)
        ego = ego[:j] + (Learner(p, v),) + ego[j + 1:]
        steps += ep.n_steps

        ego_ensemble = ensemble_of(ego)
        exploiter2, _ = exploiter_iteration(game, exploiter2, ego_ensemble, ppo_cfg,
                                            make_rng(seed, "exploiter2", it))
        r1 = exploiter_reward(game, ego_ensemble, art.exploiter1.policy, cfg,
                              make_rng(seed, "eval1", it))
        r2 = exploiter_reward(game, ego_ensemble, exploiter2.policy, cfg,
                              make_rng(seed, "eval2", it))
        records.append(OnlineRecord(it + 1, steps, r1, r2, losses.training_opponent, j))
        if callback is not None:
            callback(it + 1, replace(art, ego=ego, exploiter2=exploiter2, opponent_model=model))

    _check_frozen(frozen, fingerprint(art.exploiter1, art.oppo),
                  "first exploiter / opponent ensemble during adaptation")
    art = replace(art, ego=ego, exploiter2=exploiter2, opponent_model=model)
    x = [r.env_steps for r in records]
    first = RewardCurve(x, [r.exploiter1_reward for r in records])
    second = RewardCurve(x, [r.exploiter2_reward for r in records])
    return OnlineResult(art, first, second, records)
