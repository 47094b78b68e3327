"""Two-player zero-sum simultaneous-move Markov games.

Two concrete games are provided:

* :class:`MatrixGame` -- a one-shot (or repeated) matrix game such as
  rock-paper-scissors, with a single dummy state.
* :class:`GridDuel` -- the ego agent tries to reach a target cell on a small
  grid while the opponent tries to intercept it.

Both games are tabular: every joint state has an integer index, and the full
transition structure is available as dense ``(S, A_ego, A_oppo)`` tables.
The tables are built by enumerating the scalar :meth:`Game.step` logic, so
the vectorised rollouts in :func:`play` and the dynamic-programming oracles
in :mod:`safeadapt.evaluation` follow exactly the same dynamics.

Rewards are always stored from the ego agent's point of view; the opponent's
reward is the negation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Protocol, Sequence

import numpy as np

from .seeding import as_rng

UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)])
MOVE_NAMES = ("up", "down", "left", "right", "stay")
ROCK, PAPER, SCISSORS = range(3)


@dataclass(frozen=True)
class State:
    """A game state. ``ego``/``oppo`` hold grid coordinates (None for matrix games)."""

    t: int = 0
    ego: Optional[tuple] = None
    oppo: Optional[tuple] = None
    done: bool = False


@dataclass(frozen=True)
class Transition:
    obs_ego: np.ndarray
    obs_oppo: np.ndarray
    action_ego: int
    action_oppo: int
    reward_ego: float
    done: bool

    @property
    def reward_oppo(self) -> float:
        return -self.reward_ego


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple
    discount: float
    return_ego: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "return_ego", self.discounted_return())

    def discounted_return(self) -> float:
        ret = 0.0
        for t, tr in enumerate(self.transitions):
            ret += self.discount**t * tr.reward_ego
        return ret

    def __len__(self):
        return len(self.transitions)


class Actor(Protocol):
    """Anything that can act in :func:`play`.

    ``assign`` picks a member index per episode (a single policy always
    returns zeros); ``probs`` returns action probabilities for a batch of
    observations given the member index of each row.
    """

    def assign(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def probs(self, obs: np.ndarray, members: np.ndarray) -> np.ndarray: ...


class Game:
    """Base class. Subclasses implement the index-level dynamics."""

    name: str
    n_actions_ego: int
    n_actions_oppo: int
    horizon: int
    discount: float
    obs_dim: int
    tabular = True

    def _validate(self):
        if self.n_actions_ego < 1 or self.n_actions_oppo < 1:
            raise ValueError("action sets must be non-empty")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")

    # -- index-level interface implemented by subclasses -------------------
    key: tuple  # hashable description used to cache oracle results
    n_states: int
    initial_index: int

    def _step_index(self, s: int, a_ego: int, a_oppo: int) -> tuple:
        raise NotImplementedError

    def state_index(self, state: State) -> int:
        raise NotImplementedError

    def state_from_index(self, s: int, t: int = 0, done: bool = False) -> State:
        raise NotImplementedError

    def observe_index(self, s: np.ndarray, t: np.ndarray) -> tuple:
        raise NotImplementedError

    # -- public scalar API --------------------------------------------------
    def reset(self, seed: int = 0) -> State:
        # both games have fixed starts; the seed is accepted for API symmetry
        return self.state_from_index(self.initial_index, 0)

    def step(self, state: State, a_ego: int, a_oppo: int) -> tuple:
        if state.done:
            raise ValueError("cannot step a terminal state")
        self._check_actions(a_ego, a_oppo)
        s_next, reward, terminal = self._step_index(self.state_index(state), a_ego, a_oppo)
        t = state.t + 1
        done = bool(terminal or t >= self.horizon)
        return self.state_from_index(s_next, t, done), float(reward), done

    def observe(self, state: State) -> tuple:
        ego, oppo = self.observe_index(
            np.array([self.state_index(state)]), np.array([state.t])
        )
        return ego[0], oppo[0]

    def enumerate_joint_states(self) -> list:
        return [self.state_from_index(s) for s in range(self.n_states)]

    def _check_actions(self, a_ego, a_oppo):
        if not 0 <= int(a_ego) < self.n_actions_ego:
            raise ValueError(f"invalid ego action {a_ego} for {self.name} "
                             f"(expected 0..{self.n_actions_ego - 1})")
        if not 0 <= int(a_oppo) < self.n_actions_oppo:
            raise ValueError(f"invalid opponent action {a_oppo} for {self.name} "
                             f"(expected 0..{self.n_actions_oppo - 1})")

    # -- tabular structure --------------------------------------------------
    @cached_property
    def tables(self) -> tuple:
        """(next_index, reward_ego, terminal), each shaped (S, A_ego, A_oppo)."""
        shape = (self.n_states, self.n_actions_ego, self.n_actions_oppo)
        nxt = np.zeros(shape, dtype=np.int64)
        rew = np.zeros(shape)
        term = np.zeros(shape, dtype=bool)
        for s in range(self.n_states):
            for i in range(self.n_actions_ego):
                for j in range(self.n_actions_oppo):
                    nxt[s, i, j], rew[s, i, j], term[s, i, j] = self._step_index(s, i, j)
        for arr in (nxt, rew, term):
            arr.flags.writeable = False
        return nxt, rew, term

    @cached_property
    def all_observations(self) -> tuple:
        """Observations for every (step, state) pair, shaped (T, S, obs_dim)."""
        s = np.tile(np.arange(self.n_states), self.horizon)
        t = np.repeat(np.arange(self.horizon), self.n_states)
        ego, oppo = self.observe_index(s, t)
        shape = (self.horizon, self.n_states, self.obs_dim)
        return ego.reshape(shape), oppo.reshape(shape)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, horizon={self.horizon})"


class MatrixGame(Game):
    """Simultaneous-move matrix game, optionally repeated ``horizon`` times.

    ``payoff[i, j]`` is the ego reward when ego plays ``i`` and the opponent
    plays ``j``. Both agents observe the constant feature ``[1.0]``.
    """

    def __init__(self, payoff, name: str = "matrix", horizon: int = 1, discount: float = 1.0):
        self.payoff = np.array(payoff, dtype=float)
        if self.payoff.ndim != 2:
            raise ValueError("payoff must be a 2-D matrix")
        self.payoff.flags.writeable = False
        self.name = name
        self.n_actions_ego, self.n_actions_oppo = self.payoff.shape
        self.horizon = int(horizon)
        self.discount = float(discount)
        self.obs_dim = 1
        self.n_states = 1
        self.initial_index = 0
        self._validate()

    @property
    def key(self) -> tuple:
        return ("matrix", self.payoff.tobytes(), self.payoff.shape, self.horizon, self.discount)

    def _step_index(self, s, a_ego, a_oppo):
        return 0, self.payoff[a_ego, a_oppo], False

    def state_index(self, state):
        return 0

    def state_from_index(self, s, t=0, done=False):
        return State(t=t, done=done)

    def observe_index(self, s, t):
        ones = np.ones((len(s), 1))
        return ones, ones.copy()


RPS_PAYOFF = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
# ego's rock beating scissors pays 2; every other win pays 1
BIASED_RPS_PAYOFF = np.array([[0.0, -1.0, 2.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])


def rps(horizon: int = 1, discount: float = 1.0) -> MatrixGame:
    return MatrixGame(RPS_PAYOFF, "rps", horizon, discount)


def biased_rps(horizon: int = 1, discount: float = 1.0) -> MatrixGame:
    return MatrixGame(BIASED_RPS_PAYOFF, "biased_rps", horizon, discount)


class GridDuel(Game):
    """Reach-or-intercept duel on a square grid.

    The ego agent starts at ``ego_start`` and scores +1 (terminal) when it
    stands on ``target``; the opponent starts at ``oppo_start`` and scores
    (ego reward -1, terminal) when both agents occupy the same cell after a
    joint move. Interception is checked before the target. Moves off the
    grid leave the agent in place; agents swapping cells do not collide.

    Observations are one-hot (row, col) of the observing agent, then one-hot
    (row, col) of the other agent, then ``t / horizon``.
    """

    def __init__(
        self,
        size: int = 5,
        horizon: int = 25,
        discount: float = 0.99,
        ego_start=None,
        oppo_start=None,
        target=None,
        name: str = "grid_duel",
    ):
        self.size = int(size)
        self.horizon = int(horizon)
        self.discount = float(discount)
        mid = self.size // 2
        # defaults: ego at the top middle, opponent guarding the bottom-middle target
        self.ego_start = tuple(ego_start) if ego_start is not None else (0, mid)
        self.oppo_start = tuple(oppo_start) if oppo_start is not None else (self.size - 1, mid)
        self.target = tuple(target) if target is not None else (self.size - 1, mid)
        self.name = name
        self.n_actions_ego = self.n_actions_oppo = len(MOVES)
        self.n_cells = self.size * self.size
        self.n_states = self.n_cells * self.n_cells
        self.obs_dim = 4 * self.size + 1
        for cell in (self.ego_start, self.oppo_start, self.target):
            self._check_cell(cell)
        if self.ego_start == self.oppo_start:
            raise ValueError("agents cannot start on the same cell")
        self.initial_index = self._index(self.ego_start, self.oppo_start)
        self._validate()

    @property
    def key(self) -> tuple:
        return ("grid_duel", self.size, self.horizon, self.discount, self.ego_start,
                self.oppo_start, self.target)

    def _check_cell(self, cell):
        r, c = cell
        if not (0 <= r < self.size and 0 <= c < self.size):
            raise ValueError(f"cell {cell} outside {self.size}x{self.size} grid")

    def _index(self, ego, oppo) -> int:
        return (ego[0] * self.size + ego[1]) * self.n_cells + oppo[0] * self.size + oppo[1]

    def _cells(self, s: int) -> tuple:
        e, o = divmod(int(s), self.n_cells)
        return divmod(e, self.size), divmod(o, self.size)

    def _move(self, cell, action):
        dr, dc = MOVES[action]
        r = min(max(cell[0] + dr, 0), self.size - 1)
        c = min(max(cell[1] + dc, 0), self.size - 1)
        return int(r), int(c)

    def _step_index(self, s, a_ego, a_oppo):
        ego, oppo = self._cells(s)
        ego, oppo = self._move(ego, a_ego), self._move(oppo, a_oppo)
        if ego == oppo:
            reward, terminal = -1.0, True
        elif ego == self.target:
            reward, terminal = 1.0, True
        else:
            reward, terminal = 0.0, False
        return self._index(ego, oppo), reward, terminal

    def state_index(self, state):
        self._check_cell(state.ego)
        self._check_cell(state.oppo)
        return self._index(state.ego, state.oppo)

    def state_from_index(self, s, t=0, done=False):
        ego, oppo = self._cells(s)
        return State(t=t, ego=ego, oppo=oppo, done=done)

    def observe_index(self, s, t):
        s = np.asarray(s)
        n, k = len(s), self.size
        e, o = np.divmod(s, self.n_cells)
        er, ec = np.divmod(e, k)
        orow, ocol = np.divmod(o, k)
        rows = np.arange(n)
        ego = np.zeros((n, self.obs_dim))
        oppo = np.zeros((n, self.obs_dim))
        for base, (r1, c1, r2, c2) in ((ego, (er, ec, orow, ocol)), (oppo, (orow, ocol, er, ec))):
            base[rows, r1] = 1.0
            base[rows, k + c1] = 1.0
            base[rows, 2 * k + r2] = 1.0
            base[rows, 3 * k + c2] = 1.0
            base[:, -1] = np.asarray(t) / self.horizon
        return ego, oppo


GAMES = {"rps": rps, "biased_rps": biased_rps, "grid_duel": GridDuel}


def make_game(name: str, **params) -> Game:
    try:
        factory = GAMES[name]
    except KeyError:
        raise ValueError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None
    return factory(**params)


# -- rollouts ----------------------------------------------------------------


@dataclass
class EpisodeBatch:
    """Flat record of several episodes, ordered by (episode, t).

    ``logp_ego``/``logp_oppo`` are the log-probabilities of the sampled
    actions under the behaviour policies; ``members_*`` give the ensemble
    member used by each side in each episode.
    """

    episode: np.ndarray
    t: np.ndarray
    state: np.ndarray
    obs_ego: np.ndarray
    obs_oppo: np.ndarray
    a_ego: np.ndarray
    a_oppo: np.ndarray
    logp_ego: np.ndarray
    logp_oppo: np.ndarray
    r_ego: np.ndarray
    done: np.ndarray
    members_ego: np.ndarray
    members_oppo: np.ndarray
    discount: float

    @property
    def n_steps(self) -> int:
        return len(self.t)

    @property
    def n_episodes(self) -> int:
        return len(self.members_ego)

    @property
    def r_oppo(self) -> np.ndarray:
        return -self.r_ego

    def returns(self, discounted: bool = False) -> np.ndarray:
        weights = self.discount**self.t if discounted else np.ones_like(self.r_ego)
        return np.bincount(self.episode, weights * self.r_ego, minlength=self.n_episodes)

    def take_episodes(self, k: int) -> "EpisodeBatch":
        """The first ``k`` episodes."""
        keep = self.episode < k
        kw = {name: getattr(self, name)[keep] for name in _STEP_FIELDS}
        return EpisodeBatch(**kw, members_ego=self.members_ego[:k],
                            members_oppo=self.members_oppo[:k], discount=self.discount)

    def trajectories(self) -> list:
        out = []
        bounds = np.searchsorted(self.episode, np.arange(self.n_episodes + 1))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            trs = tuple(
                Transition(self.obs_ego[i], self.obs_oppo[i], int(self.a_ego[i]),
                           int(self.a_oppo[i]), float(self.r_ego[i]), bool(self.done[i]))
                for i in range(lo, hi)
            )
            out.append(Trajectory(trs, self.discount))
        return out


_STEP_FIELDS = ("episode", "t", "state", "obs_ego", "obs_oppo", "a_ego", "a_oppo",
                "logp_ego", "logp_oppo", "r_ego", "done")


def concat_episodes(batches: Sequence[EpisodeBatch]) -> EpisodeBatch:
    offsets = np.cumsum([0] + [b.n_episodes for b in batches[:-1]])
    kw = {name: np.concatenate([getattr(b, name) for b in batches]) for name in _STEP_FIELDS}
    kw["episode"] = np.concatenate([b.episode + off for b, off in zip(batches, offsets)])
    return EpisodeBatch(
        **kw,
        members_ego=np.concatenate([b.members_ego for b in batches]),
        members_oppo=np.concatenate([b.members_oppo for b in batches]),
        discount=batches[0].discount,
    )


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform draw per row."""
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def play(game: Game, ego: Actor, oppo: Actor, n_episodes: int, seed) -> EpisodeBatch:
    """Run ``n_episodes`` episodes in lock-step.

    Randomness is drawn in a fixed order (member assignment, then one uniform
    per active episode per side per step), so (game, actors, seed) fully
    determine the result.
    """
    rng = as_rng(seed)
    nxt_tab, rew_tab, term_tab = game.tables
    members_ego = np.asarray(ego.assign(n_episodes, rng))
    members_oppo = np.asarray(oppo.assign(n_episodes, rng))

    state = np.full(n_episodes, game.initial_index)
    active = np.arange(n_episodes)
    rec = {name: [] for name in _STEP_FIELDS}
    for t in range(game.horizon):
        if len(active) == 0:
            break
        s = state[active]
        tt = np.full(len(active), t)
        obs_e, obs_o = game.observe_index(s, tt)
        p_e = ego.probs(obs_e, members_ego[active])
        p_o = oppo.probs(obs_o, members_oppo[active])
        a_e = sample_actions(p_e, rng)
        a_o = sample_actions(p_o, rng)
        rows = np.arange(len(active))
        s_next = nxt_tab[s, a_e, a_o]
        r = rew_tab[s, a_e, a_o]
        done = term_tab[s, a_e, a_o] | (t + 1 >= game.horizon)
        for name, val in (("episode", active), ("t", tt), ("state", s), ("obs_ego", obs_e),
                          ("obs_oppo", obs_o), ("a_ego", a_e), ("a_oppo", a_o),
                          ("logp_ego", np.log(p_e[rows, a_e])),
                          ("logp_oppo", np.log(p_o[rows, a_o])), ("r_ego", r), ("done", done)):
            rec[name].append(val)
        state[active] = s_next
        active = active[~done]

    flat = {name: np.concatenate(vals) for name, vals in rec.items()}
    order = np.lexsort((flat["t"], flat["episode"]))
    flat = {name: val[order] for name, val in flat.items()}
    return EpisodeBatch(**flat, members_ego=members_ego, members_oppo=members_oppo,
                        discount=game.discount)


def play_steps(game: Game, ego: Actor, oppo: Actor, min_steps: int, seed) -> EpisodeBatch:
    """Whole episodes totalling at least ``min_steps`` environment steps.

    Episodes are generated in rounds sized to cover the remaining steps at
    full horizon; surplus episodes of the last round are dropped so the
    result is the shortest qualifying prefix.
    """
    rng = as_rng(seed)
    rounds, total = [], 0
    while total < min_steps:
        n = max(1, -(-(min_steps - total) // game.horizon))
        ep = play(game, ego, oppo, n, rng)
        lengths = np.bincount(ep.episode, minlength=n)
        need = np.searchsorted(np.cumsum(lengths), min_steps - total) + 1
        ep = ep.take_episodes(min(need, n))
        rounds.append(ep)
        total += ep.n_steps
    return rounds[0] if len(rounds) == 1 else concat_episodes(rounds)


def rollout(game: Game, sample_ego: Actor, sample_oppo: Actor, seed) -> Trajectory:
    return play(game, sample_ego, sample_oppo, 1, seed).trajectories()[0]
