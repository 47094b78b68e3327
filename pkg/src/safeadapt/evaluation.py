"""Exact oracles for tabular games, Monte-Carlo evaluation and curve metrics.

Exploitability is measured against the exact finite-horizon best response,
computed by backward induction over (step, joint state). The game value
needed to centre it is obtained by solving the stage matrix game at every
(step, state) with a linear program.

Curve metrics follow the adaptation/robustness normalisation: the oracle
setting is pinned to adaptation 1 / robustness 0 and the ensemble setting to
adaptation 0 / robustness 1.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .games import Game, play
from .nets import PolicyEnsemble

log = logging.getLogger(__name__)

SIDES = ("ego", "oppo")
DEGENERATE_TOL = 1e-12


def _require_tabular(game: Game):
    if not getattr(game, "tabular", False):
        raise ValueError(f"{game!r} is not tabular; exact oracles are unavailable")


def _other(role: str) -> str:
    if role not in SIDES:
        raise ValueError(f"role must be one of {SIDES}, got {role!r}")
    return "oppo" if role == "ego" else "ego"


# -- matrix games ---------------------------------------------------------------


def solve_matrix_game(payoff) -> tuple:
    """Maximin strategies of a zero-sum matrix game.

    Returns ``(row_strategy, col_strategy, value)`` where the row player
    maximises ``payoff``. Games with a pure saddle point skip the LP.
    """
    a = np.asarray(payoff, dtype=float)
    m, n = a.shape
    row_min = a.min(axis=1)
    col_max = a.max(axis=0)
    lower, upper = row_min.max(), col_max.min()
    if upper - lower <= 1e-12:
        p = np.zeros(m)
        p[row_min.argmax()] = 1.0
        q = np.zeros(n)
        q[col_max.argmin()] = 1.0
        return p, q, float(lower)
    p, v = _maximin(a)
    q, _ = _maximin(-a.T)
    return p, q, v


def _maximin(a: np.ndarray) -> tuple:
    # variables (p_1..p_m, v); maximise v s.t. p^T a_j >= v for every column j
    m, n = a.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-a.T, np.ones((n, 1))])
    a_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    bounds = [(0, None)] * m + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=[1.0], bounds=bounds,
                  method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    p = np.clip(res.x[:m], 0.0, None)
    p /= p.sum()
    return p, float(res.x[-1])


# -- dynamic programming oracles ---------------------------------------------------


def _discount(game: Game, discount: Optional[float]) -> float:
    return game.discount if discount is None else float(discount)


_TABLE_CACHE: "OrderedDict" = OrderedDict()
_TABLE_CACHE_SIZE = 64


def policy_table(game: Game, policy, role: str) -> np.ndarray:
    """Action probabilities of ``policy`` (playing ``role``) at every (t, s).

    Policies are immutable, so tables are memoised on the policy object
    (held strongly by the small LRU cache, which keeps ids unambiguous).
    """
    key = (game.key, role, id(policy))
    hit = _TABLE_CACHE.get(key)
    if hit is not None and hit[0] is policy:
        _TABLE_CACHE.move_to_end(key)
        return hit[1]
    obs_ego, obs_oppo = game.all_observations
    obs = obs_ego if role == "ego" else obs_oppo
    t, s, d = obs.shape
    probs = policy.action_probs(obs.reshape(t * s, d)).reshape(t, s, -1)
    probs.flags.writeable = False
    _TABLE_CACHE[key] = (policy, probs)
    if len(_TABLE_CACHE) > _TABLE_CACHE_SIZE:
        _TABLE_CACHE.popitem(last=False)
    return probs


def best_response_value(game: Game, opponent, role: str = "ego", discount: Optional[float] = None) -> float:
    """Optimal expected return of the free player against a fixed policy.

    ``role`` names the side that ``opponent`` plays; the free player is the
    other side and its return is reported from its own point of view. An
    ensemble is treated as its per-state mixture.
    """
    _require_tabular(game)
    free = _other(role)
    gamma = _discount(game, discount)
    nxt, rew, term = game.tables
    sign = 1.0 if free == "ego" else -1.0
    probs = policy_table(game, opponent, role)
    v = np.zeros(game.n_states)
    for t in range(game.horizon - 1, -1, -1):
        q = sign * rew + gamma * np.where(term, 0.0, v[nxt])
        p = probs[t]
        if free == "ego":
            q_free = np.einsum("sij,sj->si", q, p)
        else:
            q_free = np.einsum("sij,si->sj", q, p)
        v = q_free.max(axis=1)
    return float(v[game.initial_index])


def best_response_policy(game: Game, opponent, role: str = "ego", discount: Optional[float] = None) -> np.ndarray:
    """Greedy best-response actions of the free player, shaped (T, S)."""
    _require_tabular(game)
    free = _other(role)
    gamma = _discount(game, discount)
    nxt, rew, term = game.tables
    sign = 1.0 if free == "ego" else -1.0
    probs = policy_table(game, opponent, role)
    v = np.zeros(game.n_states)
    greedy = np.zeros((game.horizon, game.n_states), dtype=np.int64)
    for t in range(game.horizon - 1, -1, -1):
        q = sign * rew + gamma * np.where(term, 0.0, v[nxt])
        if free == "ego":
            q_free = np.einsum("sij,sj->si", q, probs[t])
        else:
            q_free = np.einsum("sij,si->sj", q, probs[t])
        greedy[t] = q_free.argmax(axis=1)
        v = q_free.max(axis=1)
    return greedy


def _members(actor) -> list:
    return list(actor.members) if isinstance(actor, PolicyEnsemble) else [actor]


def pair_value(game: Game, ego, oppo, discount: Optional[float] = None) -> float:
    """Exact expected ego return when both sides play fixed policies.

    Ensembles are evaluated as in :func:`safeadapt.games.play`: one member is
    drawn uniformly per episode, so the result averages over member pairs.
    """
    _require_tabular(game)
    gamma = _discount(game, discount)
    nxt, rew, term = game.tables
    tabs_e = [policy_table(game, m, "ego") for m in _members(ego)]
    tabs_o = [policy_table(game, m, "oppo") for m in _members(oppo)]
    total = 0.0
    for pe in tabs_e:
        for po in tabs_o:
            v = np.zeros(game.n_states)
            for t in range(game.horizon - 1, -1, -1):
                q = rew + gamma * np.where(term, 0.0, v[nxt])
                v = np.einsum("sij,si,sj->s", q, pe[t], po[t])
            total += v[game.initial_index]
    return float(total / (len(tabs_e) * len(tabs_o)))


_VALUE_CACHE: dict = {}


def game_value(game: Game, discount: Optional[float] = None) -> float:
    """Ego's equilibrium value, by backward induction over stage matrix games."""
    _require_tabular(game)
    gamma = _discount(game, discount)
    key = (game.key, gamma)
    if key not in _VALUE_CACHE:
        nxt, rew, term = game.tables
        v = np.zeros(game.n_states)
        for _ in range(game.horizon):
            q = rew + gamma * np.where(term, 0.0, v[nxt])
            v = _stage_values(q)
        _VALUE_CACHE[key] = float(v[game.initial_index])
    return _VALUE_CACHE[key]


def _stage_values(q: np.ndarray) -> np.ndarray:
    out = np.empty(len(q))
    lower = q.min(axis=2).max(axis=1)
    upper = q.max(axis=1).min(axis=1)
    saddle = upper - lower <= 1e-12
    out[saddle] = lower[saddle]
    solved: dict = {}
    for s in np.flatnonzero(~saddle):
        key = q[s].tobytes()
        if key not in solved:
            solved[key] = solve_matrix_game(q[s])[2]
        out[s] = solved[key]
    return out


def exploitability(game: Game, policy, role: str = "ego", discount: Optional[float] = None) -> float:
    """Best-response gain against ``policy`` over the free player's game value."""
    v = game_value(game, discount)
    free_value = -v if role == "ego" else v
    return best_response_value(game, policy, role, discount) - free_value


# -- Monte-Carlo evaluation ----------------------------------------------------------


def reward_samples(game: Game, ego, oppo, episodes: int, seed, discounted: bool = False) -> np.ndarray:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    return play(game, ego, oppo, episodes, seed).returns(discounted)


def estimate_reward(game: Game, ego, oppo, episodes: int, seed, discounted: bool = False) -> float:
    """Mean ego return over ``episodes`` rollouts (ego member drawn per episode)."""
    return float(reward_samples(game, ego, oppo, episodes, seed, discounted).mean())


# -- curves and metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class RewardCurve:
    steps: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        if steps.ndim != 1 or steps.shape != rewards.shape:
            raise ValueError("steps and rewards must be 1-D arrays of equal length")
        if len(steps) > 1 and not (np.diff(steps) > 0).all():
            raise ValueError("env_steps must be strictly increasing")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self):
        return len(self.steps)

    def at(self, x: float) -> float:
        return float(np.interp(x, self.steps, self.rewards))


def auc(curve: RewardCurve, from_steps: float, to_steps: float) -> float:
    """Trapezoidal area under ``curve`` on [from_steps, to_steps].

    Window edges falling between points are linearly interpolated, which
    keeps the integral additive over adjacent windows.
    """
    if not to_steps > from_steps:
        raise ValueError(f"empty window [{from_steps}, {to_steps}]")
    if len(curve) < 2 or from_steps < curve.steps[0] or to_steps > curve.steps[-1]:
        raise ValueError(f"window [{from_steps}, {to_steps}] outside curve range "
                         f"[{curve.steps[0] if len(curve) else None}, "
                         f"{curve.steps[-1] if len(curve) else None}]")
    inside = (curve.steps > from_steps) & (curve.steps < to_steps)
    x = np.concatenate([[from_steps], curve.steps[inside], [to_steps]])
    y = np.concatenate([[curve.at(from_steps)], curve.rewards[inside], [curve.at(to_steps)]])
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


@dataclass(frozen=True)
class MetricRow:
    setting: str
    adaptation: float
    robustness: float
    overall: float
    abc: float
    auc_first: float
    auc_second: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple
    window: tuple
    degenerate: bool = False

    def __getitem__(self, setting: str) -> MetricRow:
        for row in self.rows:
            if row.setting == setting:
                return row
        raise KeyError(setting)

    def settings(self) -> list:
        return [r.setting for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "adaptation", "robustness", "overall", "abc_normalized",
                    "auc_first", "auc_second", "degenerate"])
        for r in self.rows:
            w.writerow([r.setting, repr(r.adaptation), repr(r.robustness), repr(r.overall),
                        repr(r.abc), repr(r.auc_first), repr(r.auc_second), int(self.degenerate)])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max(len("Settings/Metrics"), *(len(r.setting) for r in self.rows))
        lines = [f"{'Settings/Metrics':<{width}}  Adaptation  Robustness  Overall (A+R)"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.setting:<{width}}  {r.adaptation:10.2f}  {r.robustness:10.2f}"
                         f"  {r.overall:13.2f}")
        lines.append("")
        lines.append(f"{'Settings':<{width}}  Normalized ABC")
        lines.append("-" * (width + 16))
        for r in self.rows:
            lines.append(f"{r.setting:<{width}}  {r.abc:14.2f}")
        if self.degenerate:
            lines.append("")
            lines.append("warning: reference settings are indistinguishable; values are unnormalized")
        return "\n".join(lines)


def _mean_aucs(pairs, window) -> tuple:
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], RewardCurve):
        pairs = [pairs]
    a1 = np.mean([auc(c1, *window) for c1, _ in pairs])
    a2 = np.mean([auc(c2, *window) for _, c2 in pairs])
    return float(a1), float(a2)


def normalized_metrics(curves: Mapping, window: Sequence[float],
                       oracle: str = "oracle", ensemble: str = "ensemble") -> MetricsReport:
    """Adaptation / robustness / ABC normalised by the two reference settings.

    ``curves`` maps a setting to a (first-exploiter, second-exploiter) curve
    pair, or to a list of such pairs (one per seed; AUCs are averaged).
    Curves hold exploiter rewards, so lower is better for the ego agent.
    """
    if oracle not in curves or ensemble not in curves:
        raise ValueError(f"reference settings {oracle!r} and {ensemble!r} are required")
    window = (float(window[0]), float(window[1]))
    aucs = {name: _mean_aucs(pairs, window) for name, pairs in curves.items()}
    a1_orc, a2_orc = aucs[oracle]
    a1_ens, a2_ens = aucs[ensemble]
    b_orc, b_ens = a2_orc - a1_orc, a2_ens - a1_ens
    den_a, den_r, den_b = a1_ens - a1_orc, a2_orc - a2_ens, b_orc - b_ens
    degenerate = min(abs(den_a), abs(den_r), abs(den_b)) < DEGENERATE_TOL
    if degenerate:
        log.warning("degenerate reference curves; reporting unnormalized differences")
        den_a = den_r = den_b = 1.0
    rows = []
    for name, (a1, a2) in aucs.items():
        adaptation = (a1_ens - a1) / den_a
        robustness = (a2_orc - a2) / den_r
        abc = ((a2 - a1) - b_ens) / den_b
        rows.append(MetricRow(name, adaptation, robustness, adaptation + robustness, abc, a1, a2))
    return MetricsReport(tuple(rows), window, degenerate)


def second_half_window(curves: Mapping) -> tuple:
    """Common env-step window covering the second half of every curve.

    Settings consume slightly different numbers of steps per iteration, so
    the window starts at the latest half-way point and ends at the earliest
    final point across all curves.
    """
    flat = []
    for pairs in curves.values():
        if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], RewardCurve):
            pairs = [pairs]
        for pair in pairs:
            flat.extend(pair)
    if not flat or min(len(c) for c in flat) < 2:
        raise ValueError("need curves with at least two points")
    lo = max(float(c.steps[len(c) // 2 - 1]) for c in flat)
    hi = min(float(c.steps[-1]) for c in flat)
    if not hi > lo:
        raise ValueError(f"curves do not share a second-half window ({lo} >= {hi})")
    return lo, hi
