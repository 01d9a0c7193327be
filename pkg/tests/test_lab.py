import math

import numpy as np
import pytest

from shortmem import gen, lab
from shortmem.belief import filter_from, window_prior
from shortmem.exactplan import history_tree


def oracle_curve(p, policy, anchor, t_max):
    """E||b_{anchor+t} - bhat||_1 by walking the history tree and refiltering each window."""
    out = np.zeros(t_max)
    for h, acts, obs, prob, b in history_tree(p, policy):
        t = h - anchor
        if 1 <= t <= t_max:
            start = anchor
            bh = filter_from(p, window_prior(p, start), start, acts[start - 1 :], obs[start - 1 :])
            out[t - 1] += prob * np.abs(b - bh).sum()
    return out


@pytest.mark.parametrize("policy_kind", ["uniform", "open-loop"])
def test_exact_tree_matches_oracle(policy_kind):
    p = gen.random_pomdp(3, 2, 2, 6, seed=3)
    pol = lab.UniformRandomPolicy(2) if policy_kind == "uniform" else lab.OpenLoopPolicy(2)
    c = lab.contraction_curve(p, pol, 2, 4, method="exact-tree")
    np.testing.assert_allclose([pt.mean_l1 for pt in c.points], oracle_curve(p, pol, 2, 4), atol=1e-13)
    assert c.method == "exact-tree" and c.policy == pol.tag
    assert all(pt.stderr == 0.0 for pt in c.points)


def test_tree_with_generic_policy_and_chunking(monkeypatch):
    p = gen.random_pomdp(2, 2, 3, 6, seed=1)
    ref = lab.contraction_curve(p, lab.OpenLoopPolicy(2), 2, 4, method="exact-tree")
    monkeypatch.setattr(lab, "TREE_CHUNK", 7)
    c = lab.contraction_curve(p, lambda a, o: len(a) % 2, 2, 4, method="exact-tree")
    np.testing.assert_allclose([x.mean_l1 for x in c.points], [x.mean_l1 for x in ref.points], atol=1e-14)


def test_anchor_at_step_one_gives_zero():
    p = gen.gen_random_observable(3, 2, 6, 0.3, seed=2)
    for method in ("mc", "exact-tree"):
        c = lab.contraction_curve(p, None, 1, 4, trials=200, method=method)
        assert all(pt.mean_l1 == 0.0 for pt in c.points)


def test_mc_agrees_with_exact_tree():
    p = gen.gen_random_observable(3, 2, 7, 0.4, seed=5)
    exact = lab.contraction_curve(p, None, 2, 5, method="exact-tree")
    mc = lab.contraction_curve(p, None, 2, 5, trials=20000, seed=1)
    for e, m in zip(exact.points, mc.points):
        assert abs(e.mean_l1 - m.mean_l1) <= 3 * m.stderr + 1e-12
        assert m.trials == 20000


def test_curve_invariants_and_envelope():
    for seed in range(3):
        p = gen.gen_random_observable(4, 2, 12, 0.5, seed=seed)
        c = lab.contraction_curve(p, None, 3, 8, trials=3000, seed=seed, gamma=0.5)
        ts = [pt.t for pt in c.points]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)
        env = lab.envelope(4, 0.5, ts)
        for pt, bound in zip(c.points, env):
            assert 0.0 <= pt.mean_l1 <= 2.0 and pt.stderr >= 0.0
            assert pt.mean_l1 <= bound + 2 * pt.stderr
        assert c.skipped == 0


def test_mc_reproducible_and_thread_independent():
    p = gen.gen_random_observable(3, 2, 10, 0.3, seed=0)
    a = lab.contraction_curve(p, None, 2, 6, trials=9000, seed=4, threads=1)
    b = lab.contraction_curve(p, None, 2, 6, trials=9000, seed=4, threads=4)
    assert a.to_csv() == b.to_csv()
    c = lab.contraction_curve(p, None, 2, 6, trials=9000, seed=5)
    assert c.to_csv() != a.to_csv()


def test_mc_generic_policy_path():
    p = gen.gen_random_observable(3, 2, 8, 0.3, seed=0)
    fast = lab.contraction_curve(p, lab.OpenLoopPolicy(2), 2, 5, trials=500, seed=2)
    slow = lab.contraction_curve(p, lambda a, o: len(a) % 2, 2, 5, trials=500, seed=2)
    assert fast.to_csv() == slow.to_csv()


def test_csv_and_errors():
    p = gen.gen_contraction_lb(0.05, 10)
    c = lab.contraction_curve(p, None, 2, 3, trials=50)
    lines = c.to_csv().splitlines()
    assert lines[0] == "t,mean_l1,stderr,trials" and len(lines) == 4
    with pytest.raises(ValueError):
        lab.contraction_curve(p, None, 5, 6)
    with pytest.raises(ValueError):
        lab.contraction_curve(p, None, 2, 3, method="bogus")


def test_decay_slope():
    pts = [lab.CurvePoint(t, 0.7 * math.exp(-0.03 * t), 1e-6, 100) for t in range(1, 51)]
    curve = lab.ContractionCurve(None, "x", "mc", 2, pts)
    fit = lab.decay_slope(curve, 10, 40)
    assert fit.slope == pytest.approx(-0.03, abs=1e-12)
    assert fit.points_used == 31
    noisy = lab.ContractionCurve(None, "x", "mc", 2, [lab.CurvePoint(t, 1e-3, 1e-3, 9) for t in range(5)])
    with pytest.raises(ValueError):
        lab.decay_slope(noisy, 0, 4)


def test_inequality_suite_passes():
    rep = lab.contraction_inequality_suite(seed=3, num_trials=150)
    assert rep.passed, rep.violations[:1]
    assert set(rep.checks) == set(lab.CHECK_NAMES)
    assert all(c.evaluated == 150 for c in rep.checks.values())
    d = rep.to_dict()
    assert d["passed"] is True and d["slack"] == 1e-9


def test_equal_beliefs_are_tight_at_zero():
    rng = np.random.default_rng(0)
    E = rng.dirichlet(np.ones(3), size=4)
    T = rng.dirichlet(np.ones(4), size=4)
    b = rng.dirichlet(np.ones(4))
    for name, lhs, rhs in lab._checks(E, T, b, b.copy(), 0.1, lab.bayes_posterior):
        if name != "linf-ratio-supermartingale":
            assert lhs == 0.0 and rhs == 0.0, name
        else:
            assert lhs == pytest.approx(1.0) and rhs == 1.0


def test_negative_control_is_caught():
    rep = lab.contraction_inequality_suite(seed=0, num_trials=100, bayes=lab.corrupted_posterior)
    assert not rep.passed
    v = rep.violations[0]
    for key in ("seed", "trial", "emission", "b", "b_prime", "lhs", "rhs"):
        assert key in v
    # the reproducer replays to the same violation
    E, T = np.array(v["emission"]), np.array(v["transition"])
    replay = {n: (l, r) for n, l, r in lab._checks(E, T, np.array(v["b"]), np.array(v["b_prime"]), v["gamma"],
                                                    lab.corrupted_posterior)}
    lhs, rhs = replay[v["check"]]
    assert lhs == v["lhs"] and rhs == v["rhs"] and lhs > rhs + lab.SLACK


def test_divergence_demo():
    d = lab.divergence_increase_demo()
    inc = d["increase"]
    assert inc["kl_before"] <= math.log(2)
    assert inc["kl_after_unlikely_observation"] >= 3.0
    assert inc["increased"]
    quad = d["quadratic_decrement"]
    assert len(quad["rows"]) == 3
    assert all(r["decrement"] > 0 for r in quad["rows"])
    assert quad["ratio_spread"] <= 4.0
    with pytest.raises(ValueError, match="eps must be positive"):
        lab.divergence_increase_demo(eps_increase=0.0)
    with pytest.raises(ValueError):
        lab.divergence_increase_demo(eps_grid=(0.1, 0.0))
