import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_best_response, full_support_equilibrium
from safeadapt.evaluation import (RewardCurve, auc, best_response_policy, best_response_value,
                                  estimate_reward, exploitability, game_value, normalized_metrics,
                                  pair_value, policy_table, second_half_window, solve_matrix_game)
from safeadapt.games import BIASED_RPS_PAYOFF, GridDuel, biased_rps, play, rps
from safeadapt.nets import FixedPolicy, Policy, PolicyEnsemble, uniform_policy


def test_rps_uniform_exploitability_zero():
    g = rps()
    assert abs(exploitability(g, FixedPolicy((1 / 3,) * 3))) < 1e-9
    assert abs(best_response_value(g, FixedPolicy((1 / 3,) * 3), "ego")) < 1e-9


def test_rps_pure_rock():
    g = rps()
    rock = FixedPolicy((1.0, 0.0, 0.0))
    assert best_response_value(g, rock, "ego") == pytest.approx(1.0, abs=1e-12)
    assert abs(exploitability(g, rock, "ego") - 1.0) < 1e-9
    assert abs(exploitability(g, rock, "oppo") - 1.0) < 1e-9


def test_biased_rps_lp_matches_closed_form():
    p, q, v = solve_matrix_game(BIASED_RPS_PAYOFF)
    p_ref, q_ref, v_ref = full_support_equilibrium(BIASED_RPS_PAYOFF)
    assert np.allclose(p, p_ref, atol=1e-9) and np.allclose(q, q_ref, atol=1e-9)
    assert v == pytest.approx(v_ref, abs=1e-9)
    assert v_ref == pytest.approx(1 / 12, abs=1e-12)


def test_biased_rps_nash_unexploitable():
    g = biased_rps()
    p, q, v = solve_matrix_game(BIASED_RPS_PAYOFF)
    assert game_value(g) == pytest.approx(v, abs=1e-9)
    assert exploitability(g, FixedPolicy(tuple(p)), "ego") < 1e-6
    assert exploitability(g, FixedPolicy(tuple(q)), "oppo") < 1e-6
    # best response against the Nash mixture earns the game value
    assert abs(-best_response_value(g, FixedPolicy(tuple(p)), "ego") - v) < 1e-6


def test_saddle_point_shortcut():
    p, q, v = solve_matrix_game(np.array([[3.0, 1.0], [4.0, 2.0]]))
    assert v == 2.0 and p[1] == 1.0 and q[1] == 1.0


def test_grid_duel_value_and_uniform_br(grid):
    assert game_value(grid) == pytest.approx(0.0, abs=1e-9)
    u = uniform_policy(grid.obs_dim, 5)
    br = best_response_value(grid, u, "ego", discount=1.0)
    assert br == pytest.approx(brute_force_best_response(grid, policy_table(grid, u, "ego"), "ego", 1.0),
                               abs=1e-12)
    assert 0.99 < br <= 1.0


def test_dp_matches_brute_force(small_grid):
    pol = Policy.init(small_grid.obs_dim, 5, 8, seed=4)
    for role in ("ego", "oppo"):
        tab = policy_table(small_grid, pol, role)
        assert best_response_value(small_grid, pol, role) == pytest.approx(
            brute_force_best_response(small_grid, tab, role), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_exploitability_nonnegative(seed):
    g = GridDuel(size=3, horizon=6, ego_start=(0, 1), oppo_start=(2, 1), target=(2, 1))
    pol = Policy.init(g.obs_dim, 5, 8, seed=seed)
    assert exploitability(g, pol, "ego") >= -1e-9
    assert exploitability(g, pol, "oppo") >= -1e-9
    assert exploitability(rps(), FixedPolicy(tuple(np.random.default_rng(seed).dirichlet(np.ones(3)))),
                          "ego") >= -1e-9


def test_best_response_bounds_monte_carlo(small_grid):
    oppo = Policy.init(small_grid.obs_dim, 5, 8, seed=1)
    br = best_response_value(small_grid, oppo, "oppo", discount=1.0)
    greedy = best_response_policy(small_grid, oppo, "oppo", discount=1.0)

    class Greedy:
        def assign(self, n, rng):
            return np.zeros(n, dtype=np.int64)

        def probs(self, obs, members):
            # recover (t, state) from the observation layout
            k = small_grid.size
            t = np.rint(obs[:, -1] * small_grid.horizon).astype(int)
            er, ec = obs[:, :k].argmax(1), obs[:, k:2 * k].argmax(1)
            orow, ocol = obs[:, 2 * k:3 * k].argmax(1), obs[:, 3 * k:4 * k].argmax(1)
            s = (er * k + ec) * k * k + orow * k + ocol
            return np.eye(5)[greedy[t, s]]

    r = play(small_grid, Greedy(), oppo, 4000, seed=0).returns()
    se = r.std() / np.sqrt(len(r))
    assert abs(r.mean() - br) < 2.5 * se + 1e-9
    other = Policy.init(small_grid.obs_dim, 5, 8, seed=2)
    assert estimate_reward(small_grid, other, oppo, 2000, seed=0) <= br + 3 * se


def test_pair_value_matches_monte_carlo(small_grid):
    ens = PolicyEnsemble.init(3, small_grid.obs_dim, 5, 8, seed=0)
    oppo = Policy.init(small_grid.obs_dim, 5, 8, seed=5)
    exact = pair_value(small_grid, ens, oppo, discount=1.0)
    r = play(small_grid, ens, oppo, 6000, seed=1).returns()
    assert abs(r.mean() - exact) < 3 * r.std() / np.sqrt(len(r))


def test_estimate_reward_rps_uniform():
    u = FixedPolicy((1 / 3,) * 3)
    n = 400
    est = estimate_reward(rps(), u, u, n, seed=0)
    assert abs(est) < 3 / np.sqrt(n)
    assert est == estimate_reward(rps(), u, u, n, seed=0)
    with pytest.raises(ValueError):
        estimate_reward(rps(), u, u, 0, seed=0)


def test_auc_examples():
    c = RewardCurve([0, 5, 10], [2.0, 2.0, 2.0])
    assert auc(c, 0, 10) == pytest.approx(20.0)
    assert auc(RewardCurve([0, 10], [0.0, 1.0]), 0, 10) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        auc(c, 5, 5)
    with pytest.raises(ValueError):
        auc(c, -1, 5)


def test_auc_additive():
    rng = np.random.default_rng(0)
    c = RewardCurve(np.cumsum(rng.integers(1, 30, size=40)), rng.normal(size=40))
    lo, mid, hi = c.steps[3] + 0.5, c.steps[17] + 2.25, c.steps[-5] - 1.0
    assert auc(c, lo, hi) == pytest.approx(auc(c, lo, mid) + auc(c, mid, hi), abs=1e-9)


def test_curve_steps_strictly_increasing():
    with pytest.raises(ValueError):
        RewardCurve([0, 1, 1], [0, 0, 0])


def _flat(v, n=11):
    return RewardCurve(np.arange(n) * 10.0, np.full(n, float(v)))


def test_normalized_metrics_reference_rows():
    curves = {"oracle": (_flat(40), _flat(90)), "ensemble": (_flat(100), _flat(60)),
              "x": (_flat(70), _flat(75))}
    rep = normalized_metrics(curves, (0, 100))
    assert (rep["oracle"].adaptation, rep["oracle"].robustness, rep["oracle"].abc) == pytest.approx((1, 0, 1))
    assert (rep["ensemble"].adaptation, rep["ensemble"].robustness, rep["ensemble"].abc) == pytest.approx((0, 1, 0))
    assert rep["x"].adaptation == pytest.approx(0.5)
    assert rep["x"].robustness == pytest.approx(0.5)
    assert rep["x"].overall == pytest.approx(1.0)
    assert not rep.degenerate
    assert "Normalized ABC" in rep.to_table() and rep.to_csv().startswith("setting,")


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.01, 100.0), shift=st.floats(-50.0, 50.0), seed=st.integers(0, 1000))
def test_normalized_metrics_affine_invariant(scale, shift, seed):
    rng = np.random.default_rng(seed)
    steps = np.arange(12) * 7.0
    base = {s: (RewardCurve(steps, rng.normal(size=12)), RewardCurve(steps, rng.normal(size=12)))
            for s in ("oracle", "ensemble", "a", "b")}
    moved = {s: tuple(RewardCurve(c.steps, scale * c.rewards + shift) for c in pair)
             for s, pair in base.items()}
    r1, r2 = normalized_metrics(base, (7, 70)), normalized_metrics(moved, (7, 70))
    if r1.degenerate:
        return
    for s in base:
        for f in ("adaptation", "robustness", "abc"):
            assert getattr(r1[s], f) == pytest.approx(getattr(r2[s], f), rel=1e-6, abs=1e-6)


def test_normalized_metrics_degenerate_flag():
    same = (_flat(1), _flat(1))
    rep = normalized_metrics({"oracle": same, "ensemble": same}, (0, 100))
    assert rep.degenerate and "warning" in rep.to_table()
    with pytest.raises(ValueError):
        normalized_metrics({"oracle": same}, (0, 100))


def test_normalized_metrics_seed_average():
    curves = {"oracle": [(_flat(40), _flat(90)), (_flat(60), _flat(90))],
              "ensemble": [(_flat(100), _flat(60))] * 2,
              "x": [(_flat(70), _flat(75))] * 2}
    rep = normalized_metrics(curves, (0, 100))
    # oracle first-exploiter AUC averages to 50 per unit step
    assert rep["x"].adaptation == pytest.approx((100 - 70) / (100 - 50))


def test_second_half_window():
    a = RewardCurve([10, 20, 30, 40], [0, 0, 0, 0])
    b = RewardCurve([12, 22, 33, 44], [0, 0, 0, 0])
    assert second_half_window({"oracle": (a, a), "ensemble": (b, b)}) == (22.0, 40.0)
