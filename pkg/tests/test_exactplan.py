import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_optimum, path_value
from shortmem import gen
from shortmem.belief import exact_belief
from shortmem.errors import BudgetExceeded
from shortmem.exactplan import (
    dead_states,
    dump_policy_tree,
    episode_rng,
    eval_policy_exact,
    eval_policy_mc,
    hoeffding_half_width,
    history_tree,
    simulate,
    solve_exact,
)
from shortmem.model import Pomdp


def zero_reward(p):
    return Pomdp(p.horizon, p.initial_belief, p.transitions, p.emissions, np.zeros_like(p.rewards))


def single_path(H=4):
    """Cyclic deterministic walk on 3 states with noiseless observations."""
    shift = np.roll(np.eye(3), 1, axis=1)
    R = np.zeros((H - 1, 3))
    R[:, 2] = 1.0
    return Pomdp(H, [1, 0, 0], np.broadcast_to(shift, (H - 1, 1, 3, 3)), np.broadcast_to(np.eye(3), (H - 1, 3, 3)), R)


class HashPolicy:
    """Arbitrary deterministic history policy derived from a seed."""

    def __init__(self, A, seed):
        self.A, self.seed = A, seed

    def __call__(self, actions, observations):
        rng = np.random.default_rng([self.seed, len(actions), *actions, *[o + 100 for o in observations]])
        return int(rng.integers(self.A))


@pytest.mark.parametrize("A, O, S, seed", [(2, 2, 2, 0), (2, 3, 3, 1), (3, 2, 2, 2), (2, 2, 4, 3), (2, 4, 2, 4)])
def test_matches_brute_force(A, O, S, seed):
    p = gen.random_pomdp(S, A, O, 3, seed)
    v, _ = solve_exact(p)
    assert v == pytest.approx(brute_force_optimum(p), abs=1e-12)


def test_zero_rewards():
    p = zero_reward(gen.random_pomdp(3, 2, 2, 4, seed=5))
    v, pol = solve_exact(p)
    assert v == 0.0
    assert eval_policy_exact(p, pol) == 0.0
    est = eval_policy_mc(p, pol, 50, seed=3)
    assert est.mean == 0.0
    assert dead_states(p).all()


def test_single_path_model():
    p = single_path()
    v, pol = solve_exact(p)
    assert v == 1.0
    tr = simulate(p, pol, seed=11)
    assert tr.states == [0, 1, 2, 0]
    assert tr.observations == [1, 2, 0] and tr.rewards == [0.0, 1.0, 0.0]
    est = eval_policy_mc(p, pol, 40, seed=1, confidence=0.95)
    assert est.mean == 1.0
    assert est.half_width == pytest.approx(3 * math.sqrt(math.log(2 / 0.05) / 80))


def test_self_consistency_and_ties():
    p = gen.random_pomdp(3, 2, 3, 4, seed=9)
    v, pol = solve_exact(p)
    assert eval_policy_exact(p, pol) == pytest.approx(v, abs=1e-12)
    # the table policy built from pi* gives the same value through the path-sum oracle
    table = {(a, o): pol(a, o) for h, a, o, _, _ in history_tree(p, pol) if h < p.horizon}
    for t in range(p.horizon - 1):
        for acts in np.ndindex(*([2] * t)):
            for obs in np.ndindex(*([3] * t)):
                table.setdefault((tuple(acts), tuple(obs)), 0)
    assert path_value(p, table) == pytest.approx(v, abs=1e-12)


def test_ties_go_to_lowest_action():
    p = gen.random_pomdp(2, 3, 2, 3, seed=1)
    T = np.broadcast_to(p.transitions[:, :1], p.transitions.shape)  # all actions identical
    q = Pomdp(p.horizon, p.initial_belief, T, p.emissions, p.rewards)
    _, pol = solve_exact(q)
    for h, a, o, _, _ in history_tree(q, pol):
        if h < q.horizon:
            assert pol(a, o) == 0


@given(st.integers(0, 10**6))
def test_optimal_beats_random_policies(seed):
    p = gen.random_pomdp(3, 2, 2, 4, seed)
    v, _ = solve_exact(p)
    for k in range(10):
        assert eval_policy_exact(p, HashPolicy(2, seed * 100 + k)) <= v + 1e-12


@given(st.integers(0, 10**6))
def test_bellman_consistency(seed):
    p = gen.random_pomdp(3, 2, 2, 4, seed)
    _, pol = solve_exact(p)
    for h, acts, obs, _, _ in history_tree(p, pol):
        if h == p.horizon:
            continue
        q = pol.q_values(acts, obs)
        assert pol.value(acts, obs) == pytest.approx(q.max(), abs=1e-14)
        b = exact_belief(p, acts, obs)
        for a in range(p.num_actions):
            py = (b @ p.transition(h, a)) @ p.emission(h + 1)
            backup = sum(
                py[y] * (p.reward(h + 1)[y] + pol.value(acts + (a,), obs + (y,)))
                for y in range(p.num_observations)
                if py[y] > 1e-15
            )
            assert q[a] == pytest.approx(backup, abs=1e-12)


def test_budget():
    p = gen.random_pomdp(3, 2, 3, 6, seed=0)
    with pytest.raises(BudgetExceeded) as exc:
        solve_exact(p, budget=5)
    assert exc.value.budget == 5
    with pytest.raises(BudgetExceeded):
        eval_policy_exact(p, HashPolicy(2, 0), budget=10)


def test_mc_interval_covers_exact():
    p = gen.random_pomdp(3, 2, 2, 4, seed=4)
    pol = HashPolicy(2, 4)
    exact = eval_policy_exact(p, pol)
    hits = 0
    for s in range(100):
        est = eval_policy_mc(p, pol, 200, seed=s)
        lo, hi = est.interval
        hits += lo <= exact <= hi
    assert hits >= 99


def test_mc_deterministic_across_threads():
    p = gen.random_pomdp(3, 2, 2, 4, seed=4)
    a = eval_policy_mc(p, HashPolicy(2, 1), 1000, seed=7, threads=1)
    b = eval_policy_mc(p, HashPolicy(2, 1), 1000, seed=7, threads=4)
    assert a == b
    with pytest.raises(ValueError):
        eval_policy_mc(p, HashPolicy(2, 1), 0)


def test_simulate_reproducible():
    p = gen.random_pomdp(3, 2, 3, 5, seed=2)
    pol = HashPolicy(2, 3)
    assert simulate(p, pol, seed=5) == simulate(p, pol, seed=5)
    assert simulate(p, pol, episode_rng(1, 2)) == simulate(p, pol, episode_rng(1, 2))


def test_state_marginals_match_chain():
    p = gen.random_pomdp(3, 1, 2, 4, seed=8)
    n = 100_000
    counts = np.zeros((4, 3))
    for k in range(n):
        for h, x in enumerate(simulate(p, lambda a, o: 0, episode_rng(0, k)).states):
            counts[h, x] += 1
    marg = np.asarray(p.initial_belief)
    for h in range(4):
        sigma = np.sqrt(marg * (1 - marg) / n)
        assert np.all(np.abs(counts[h] / n - marg) <= 3 * sigma + 1e-12)
        if h < 3:
            marg = marg @ p.transition(h + 1, 0)


def test_hoeffding():
    assert hoeffding_half_width(100, 2.0, 0.99) == pytest.approx(2 * math.sqrt(math.log(200) / 200))


def test_dump_tree(tmp_path):
    p = gen.random_pomdp(2, 2, 2, 3, seed=1)
    v, pol = solve_exact(p)
    path = tmp_path / "tree.json"
    dump_policy_tree(p, pol, path)
    d = json.loads(path.read_text())
    root = d["nodes"][0]
    assert root["stage"] == 1 and root["actions"] == []
    assert root["value"] == pytest.approx(v)
