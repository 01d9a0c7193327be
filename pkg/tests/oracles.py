"""Independent reference computations used by the tests.

Nothing here touches the package's belief or planning code: values come from
enumerating state paths directly.
"""

import itertools

import numpy as np


def path_value(pomdp, policy_table):
    """Exact value of a deterministic history policy by summing over state paths.

    ``policy_table`` maps ``(actions, observations)`` tuples to actions.
    """
    H, S = pomdp.horizon, pomdp.num_states
    O = pomdp.num_observations
    T = np.asarray(pomdp.transitions)
    E = np.asarray(pomdp.emissions)
    R = np.asarray(pomdp.rewards)
    b1 = np.asarray(pomdp.initial_belief)
    total = 0.0

    def rec(h, x, acts, obs, prob):
        nonlocal total
        if h == H or prob == 0.0:
            return
        a = policy_table[(acts, obs)]
        for x2 in range(S):
            pt = T[h - 1, a, x, x2]
            if pt == 0.0:
                continue
            for y in range(O):
                pe = E[h - 1, x2, y]
                if pe == 0.0:
                    continue
                pr = prob * pt * pe
                total += pr * R[h - 1, y]
                rec(h + 1, x2, acts + (a,), obs + (y,), pr)

    for x in range(S):
        rec(1, x, (), (), b1[x])
    return total


def histories(A, O, length):
    for acts in itertools.product(range(A), repeat=length):
        for obs in itertools.product(range(O), repeat=length):
            yield acts, obs


def brute_force_optimum(pomdp):
    """Maximum over every deterministic history policy; returns the value."""
    H, A, O = pomdp.horizon, pomdp.num_actions, pomdp.num_observations
    keys = [k for t in range(H - 1) for k in histories(A, O, t)]
    best = -np.inf
    for choice in itertools.product(range(A), repeat=len(keys)):
        best = max(best, path_value(pomdp, dict(zip(keys, choice))))
    return best
