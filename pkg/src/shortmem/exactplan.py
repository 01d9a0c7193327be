"""Exact planning and policy evaluation on the history tree.

The optimal value of a history depends on the history only through its
belief, so :func:`solve_exact` memoises Bellman backups on a canonical form
of the belief. Two reductions keep the tree small without changing any
value:

* observations leading to the same posterior are merged into one branch;
* states from which no positive reward is reachable are factored out, since
  ``V(p * b_dead + (1 - p) * b_live) = (1 - p) * V(b_live)``.

Policies are callables ``policy(actions, observations) -> action`` on the
full history ``(a_1..a_{h-1}, o_2..o_h)``. A policy may instead expose
``action_probs(actions, observations)`` (exact evaluation of randomised
policies) and ``sample(actions, observations, rng)`` (simulation).
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._lin import total, vecmat, weighted
from .belief import IMPOSSIBLE_MASS
from .errors import BudgetExceeded
from .model import Pomdp, Trajectory, check_valid

DEFAULT_BUDGET = 10**7
#: Branches whose conditional probability is at or below this are dropped.
PRUNE_PROB = 1e-15
#: Decimals kept when canonicalising a belief for memoisation and merging.
KEY_DECIMALS = 13


def dead_states(pomdp: Pomdp) -> np.ndarray:
    """``dead[h-1, x]`` is True when no positive reward can follow state ``x`` at step ``h``."""
    H, S = pomdp.horizon, pomdp.num_states
    alive = np.zeros((H, S), dtype=bool)
    for h in range(H - 1, 0, -1):
        E, R = pomdp.emission(h + 1), pomdp.reward(h + 1)
        good_next = ((E * R) > 0).any(axis=1) | alive[h]
        reach = (pomdp.transitions[h - 1] > 0).any(axis=0)  # x -> x' under some action
        alive[h - 1] = (reach & good_next).any(axis=1)
    return ~alive


def _key(b, support):
    vals = np.round(b[support], KEY_DECIMALS) + 0.0
    return support.tobytes() + vals.tobytes()


class _Solver:
    def __init__(self, pomdp: Pomdp, budget):
        self.p = pomdp
        self.H = pomdp.horizon
        self.A = pomdp.num_actions
        self.budget = budget
        self.dead = dead_states(pomdp)
        self.memo = {}
        self.expanded = 0

    def live(self, h, b):
        """Drop dead mass; returns (live fraction, normalised live belief or None)."""
        live = b.copy()
        live[self.dead[h - 1]] = 0.0
        frac = float(total(live))
        if frac <= PRUNE_PROB:
            return 0.0, None
        if frac == 1.0 or not self.dead[h - 1].any():
            return 1.0, b
        return frac, live / frac

    def branches(self, h, b, a):
        """Observation branches after action ``a`` at step ``h`` from live belief ``b``.

        Returns (expected immediate reward, [(weight, y_list, next belief)]),
        with next beliefs already live-normalised and merged by canonical key.
        """
        p = self.p
        supp = np.flatnonzero(b)
        pred = vecmat(b[supp], p.transition(h, a)[supp])
        nsupp = np.flatnonzero(pred)
        E = p.emission(h + 1)
        py = vecmat(pred[nsupp], E[nsupp])
        reward = float(weighted(py, p.reward(h + 1)))
        out = []
        if h + 1 == self.H:
            return reward, out
        index = {}
        for y in np.flatnonzero(py > max(IMPOSSIBLE_MASS, PRUNE_PROB)):
            post = pred * E[:, y] / py[y]
            frac, nb = self.live(h + 1, post)
            if nb is None:
                continue
            w = py[y] * frac
            k = _key(nb, np.flatnonzero(nb))
            if k in index:
                entry = out[index[k]]
                entry[0] += w
                entry[1].append(int(y))
            else:
                index[k] = len(out)
                out.append([w, [int(y)], nb, k])
        return reward, out

    def value(self, h, b, key=None):
        """(V, Q) at live belief ``b`` of step ``h``."""
        if h == self.H:
            return 0.0, None
        if key is None:
            key = _key(b, np.flatnonzero(b))
        hit = self.memo.get((h, key))
        if hit is not None:
            return hit
        self.expanded += 1
        if self.expanded > self.budget:
            raise BudgetExceeded("exact planning history nodes", self.expanded, self.budget)
        q = np.zeros(self.A)
        for a in range(self.A):
            reward, br = self.branches(h, b, a)
            acc = reward
            for w, _, nb, k in br:
                acc += w * self.value(h + 1, nb, k)[0]
            q[a] = acc
        res = (float(q.max()), q)
        self.memo[(h, key)] = res
        return res

    def belief_along(self, actions, observations):
        """Replay the solver's own belief arithmetic along a history.

        Returns (live mass of the exact posterior, live belief or None).
        """
        p = self.p
        full = np.asarray(p.initial_belief, dtype=float)
        _, b = self.live(1, full)
        for k, (a, y) in enumerate(zip(actions, observations)):
            if b is None:
                return 0.0, None
            h = k + 1
            E = p.emission(h + 1)
            supp = np.flatnonzero(b)
            pred = vecmat(b[supp], p.transition(h, a)[supp])
            nsupp = np.flatnonzero(pred)
            py = vecmat(pred[nsupp], E[nsupp])
            if not py[y] > IMPOSSIBLE_MASS:
                return 0.0, None
            _, b = self.live(h + 1, pred * E[:, y] / py[y])
            fpred = vecmat(full, p.transition(h, a))
            full = fpred * E[:, y]
            full = full / total(full)
        if b is None:
            return 0.0, None
        h = len(actions) + 1
        scale = float(total(np.where(self.dead[h - 1], 0.0, full)))
        return scale, b


class HistoryPolicy:
    """Optimal policy from :func:`solve_exact`.

    Values and Q-vectors are stored per canonical belief; histories are mapped
    to beliefs on demand. Histories that only reach states with no future
    reward get action 0 and value 0.
    """

    def __init__(self, solver: _Solver):
        self._solver = solver
        self.horizon = solver.H
        self.num_actions = solver.A

    def q_values(self, actions, observations):
        """Q*_h(history, .) for the live part; scaled by the live probability."""
        h = len(actions) + 1
        if not 1 <= h < self.horizon:
            raise ValueError(f"no decision at stage {h}")
        scale, b = self._solver.belief_along(actions, observations)
        if b is None:
            return np.zeros(self.num_actions)
        return scale * self._solver.value(h, b)[1]

    def value(self, actions=(), observations=()):
        """V*_h of the history (expected reward still to come)."""
        if len(actions) + 1 == self.horizon:
            return 0.0
        return float(self.q_values(actions, observations).max())

    def act(self, actions, observations) -> int:
        return int(np.argmax(self.q_values(actions, observations)))

    __call__ = act

    @property
    def num_nodes(self) -> int:
        return len(self._solver.memo)


def solve_exact(pomdp: Pomdp, budget=DEFAULT_BUDGET, threads: int = 1):
    """Optimal value ``V*_1`` and an optimal history policy.

    Ties between actions go to the lowest index. ``budget`` caps the number
    of distinct belief nodes expanded and raises :class:`BudgetExceeded`.
    The recursion is sequential, so ``threads`` has no effect on results.
    """
    check_valid(pomdp)
    solver = _Solver(pomdp, budget)
    limit = sys.getrecursionlimit()
    if limit < 4 * pomdp.horizon + 100:
        sys.setrecursionlimit(4 * pomdp.horizon + 100)
    frac, b = solver.live(1, pomdp.initial_belief)
    v = 0.0 if b is None else frac * solver.value(1, b)[0]
    return v, HistoryPolicy(solver)


# ---------------------------------------------------------------------------
# walking the history tree of a fixed policy


def _action_dist(policy, actions, observations, A):
    if hasattr(policy, "action_probs"):
        return np.asarray(policy.action_probs(actions, observations), dtype=float)
    a = int(policy(actions, observations))
    if not 0 <= a < A:
        raise ValueError(f"policy returned action {a} outside 0..{A - 1}")
    d = np.zeros(A)
    d[a] = 1.0
    return d


def history_tree(pomdp: Pomdp, policy, budget=DEFAULT_BUDGET):
    """Depth-first walk over positive-probability histories under ``policy``.

    Yields ``(h, actions, observations, prob, belief)`` for every stage
    ``h = 1..H`` in a fixed order (actions ascending, then observations).
    """
    p, H, A = pomdp, pomdp.horizon, pomdp.num_actions
    count = 0
    stack = [((), (), 1.0, np.asarray(p.initial_belief, dtype=float))]
    while stack:
        acts, obs, prob, b = stack.pop()
        count += 1
        if count > budget:
            raise BudgetExceeded("policy history nodes", count, budget)
        h = len(acts) + 1
        yield h, acts, obs, prob, b
        if h == H:
            continue
        dist = _action_dist(policy, acts, obs, A)
        children = []
        supp = np.flatnonzero(b)
        E = p.emission(h + 1)
        for a in np.flatnonzero(dist > 0):
            pred = vecmat(b[supp], p.transition(h, a)[supp])
            py = vecmat(pred, E)
            for y in np.flatnonzero(py > IMPOSSIBLE_MASS):
                w = prob * dist[a] * py[y]
                if w <= PRUNE_PROB:
                    continue
                children.append((acts + (int(a),), obs + (int(y),), w, pred * E[:, y] / py[y]))
        stack.extend(reversed(children))


def eval_policy_exact(pomdp: Pomdp, policy, budget=DEFAULT_BUDGET) -> float:
    """Exact ``V^pi_1``: expected total reward summed over the policy's history tree."""
    check_valid(pomdp)
    acc = 0.0
    for h, _, obs, prob, _ in history_tree(pomdp, policy, budget):
        if h >= 2:
            acc += prob * float(pomdp.reward(h)[obs[-1]])
    return float(acc)


# ---------------------------------------------------------------------------
# simulation


def _choose(policy, actions, observations, rng):
    if hasattr(policy, "sample"):
        return int(policy.sample(actions, observations, rng))
    return int(policy(actions, observations))


def _draw(rng, probs):
    # inverse-CDF draw from one uniform; stable across numpy versions
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(probs) - 1))


def simulate(pomdp: Pomdp, policy, seed=0) -> Trajectory:
    """One episode. ``seed`` may be an int, a SeedSequence or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = pomdp
    x = _draw(rng, p.initial_belief)
    states, actions, observations, rewards = [x], [], [], []
    for h in range(1, p.horizon):
        a = _choose(policy, tuple(actions), tuple(observations), rng)
        x = _draw(rng, p.transition(h, a)[x])
        y = _draw(rng, p.emission(h + 1)[x])
        states.append(x)
        actions.append(a)
        observations.append(y)
        rewards.append(float(p.reward(h + 1)[y]))
    return Trajectory(states, actions, observations, rewards)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for episode ``index``; identical however episodes are batched."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    half_width: float
    samples: int
    confidence: float

    @property
    def interval(self):
        return self.mean - self.half_width, self.mean + self.half_width


def hoeffding_half_width(n: int, value_range: float, confidence: float) -> float:
    return value_range * math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


CHUNK = 256


def eval_policy_mc(pomdp: Pomdp, policy, num_episodes: int, seed: int = 0, confidence: float = 0.99,
                   threads: int = 1) -> ValueEstimate:
    """Monte Carlo value with a Hoeffding interval for returns in ``[0, H-1]``."""
    if num_episodes < 1:
        raise ValueError("num_episodes must be at least 1")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")

    def run(lo):
        hi = min(lo + CHUNK, num_episodes)
        return [simulate(pomdp, policy, episode_rng(seed, k)).total_reward for k in range(lo, hi)]

    starts = range(0, num_episodes, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, starts))
    else:
        chunks = [run(lo) for lo in starts]
    returns = [r for c in chunks for r in c]
    mean = math.fsum(returns) / num_episodes
    hw = hoeffding_half_width(num_episodes, pomdp.horizon - 1, confidence)
    return ValueEstimate(mean, hw, num_episodes, confidence)


# ---------------------------------------------------------------------------
# JSON dump


def dump_policy_tree(pomdp: Pomdp, policy: HistoryPolicy, path, budget=DEFAULT_BUDGET):
    """Write every history the optimal policy reaches with its action, value and Q-vector."""
    nodes = []
    for h, acts, obs, _, _ in history_tree(pomdp, policy, budget):
        if h == pomdp.horizon:
            continue
        q = policy.q_values(acts, obs)
        nodes.append({
            "stage": h,
            "actions": list(acts),
            "observations": list(obs),
            "action": int(np.argmax(q)),
            "value": float(q.max()),
            "q": [float(v) for v in q],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"horizon": pomdp.horizon, "nodes": nodes}, fh)
