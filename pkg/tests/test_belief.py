import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shortmem import gen
from shortmem.belief import (
    DivergenceKind,
    approx_belief,
    bayes_update,
    belief_update,
    divergence,
    exact_belief,
    f_kl,
    kl,
    linf_ratio,
    obs_dist,
    renyi2,
    renyi_potential,
    tv,
)
from shortmem.errors import ImpossibleObservation
from shortmem.model import HistoryWindow, Pomdp
from shortmem.observability import gamma_exact


def single_step(E, b1=(0.5, 0.5), T=None):
    S = len(b1)
    T = np.eye(S) if T is None else T
    O = np.asarray(E).shape[1]
    return Pomdp(2, b1, np.asarray(T)[None, None], np.asarray(E)[None], np.zeros((1, O)))


# regression values -----------------------------------------------------------


def test_uninformative_channel_keeps_prior():
    p = single_step([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(bayes_update(p, [0.3, 0.7], 2, 0), [0.3, 0.7], atol=1e-15)


def test_noisy_binary_update():
    p = single_step([[0.9, 0.1], [0.1, 0.9]])
    out = bayes_update(p, [0.99, 0.01], 2, 1)
    np.testing.assert_allclose(out, [0.099 / 0.108, 0.009 / 0.108], rtol=1e-14)
    np.testing.assert_allclose(out, [0.9166666666666666, 0.08333333333333333], rtol=1e-14)


def test_identity_channel_collapses():
    p = single_step(np.eye(2))
    np.testing.assert_array_equal(bayes_update(p, [0.4, 0.6], 2, 1), [0.0, 1.0])


def test_impossible_observation():
    p = single_step(np.eye(2))
    with pytest.raises(ImpossibleObservation) as exc:
        bayes_update(p, [1.0, 0.0], 2, 1)
    assert exc.value.step == 2 and exc.value.observation == 1


def test_cyclic_shift_with_uniform_emission():
    shift = np.roll(np.eye(3), 1, axis=1)
    p = single_step(np.full((3, 3), 1 / 3), b1=(1, 0, 0), T=shift)
    for y in range(3):
        np.testing.assert_allclose(belief_update(p, [1, 0, 0], 1, 0, y), [0, 1, 0], atol=1e-15)


def test_contraction_lb_updates():
    p = gen.gen_contraction_lb(0.1, 5)
    np.testing.assert_allclose(belief_update(p, [0.5, 0.5], 1, 0, 0), [0.6, 0.4], rtol=1e-14)
    np.testing.assert_allclose(belief_update(p, [0.3, 0.7], 2, 0, 1), bayes_update(p, [0.3, 0.7], 3, 1))
    np.testing.assert_array_equal(exact_belief(p, (0, 0), (0, 0)), [1.0, 0.0])
    w = HistoryWindow(4, (0, 0), (0, 0))
    np.testing.assert_allclose(approx_belief(p, w), [0.36 / 0.52, 0.16 / 0.52], rtol=1e-14)


def test_empty_windows():
    p = gen.gen_random_observable(3, 2, 4, 0.5, seed=2)
    np.testing.assert_array_equal(approx_belief(p, HistoryWindow(3, (), ())), np.full(3, 1 / 3))
    np.testing.assert_array_equal(approx_belief(p, HistoryWindow(1, (), ())), p.initial_belief)
    np.testing.assert_array_equal(exact_belief(p), p.initial_belief)


def test_obs_dist_examples():
    E = gen.noisy_identity(3, 0.5)
    p = single_step(E, b1=(1 / 3,) * 3)
    np.testing.assert_allclose(obs_dist(p, [1, 0, 0], 2), [2 / 3, 1 / 6, 1 / 6], rtol=1e-14)
    np.testing.assert_allclose(obs_dist(p, np.full(3, 1 / 3), 2), np.full(3, 1 / 3), rtol=1e-14)
    np.testing.assert_allclose(np.abs(obs_dist(p, [1, 0, 0], 2) - obs_dist(p, [0, 1, 0], 2)).sum(), 1.0)


def test_divergence_values():
    assert divergence("TV", [1, 0], [0, 1]).value == 1.0
    assert float(divergence(DivergenceKind.KL, [0.2, 0.8], [0.2, 0.8])) == 0.0
    assert divergence("CHI2", [0.5, 0.5], [0.25, 0.75]).value == pytest.approx(1 / 3, rel=1e-14)
    assert divergence("RENYI2", [0.5, 0.5], [0.25, 0.75]).value == pytest.approx(math.log(4 / 3), rel=1e-14)
    assert divergence("HELLINGER2", [1, 0], [0, 1]).value == pytest.approx(1.0)
    assert divergence("LINF_RATIO", [0.3, 0.7], [0.3, 0.7]).value == 1.0
    assert math.isinf(divergence("KL", [0.5, 0.5], [1, 0]).value)
    assert math.isinf(divergence("LINF_RATIO", [0.5, 0.5], [1, 0]).value)
    with pytest.raises(ValueError):
        divergence("TV", [1, 0], [1, 0, 0])


# brute-force conditional -----------------------------------------------------


def brute_conditional(p, actions, obs):
    """P(x_h | history) by summing over every state path."""
    S = p.num_states
    h = len(actions) + 1
    post = np.zeros(S)
    for path in itertools.product(range(S), repeat=h):
        w = p.initial_belief[path[0]]
        for k in range(h - 1):
            w *= p.transition(k + 1, actions[k])[path[k], path[k + 1]]
            w *= p.emission(k + 2)[path[k + 1], obs[k]]
        post[path[-1]] += w
    return post / post.sum()


@given(st.integers(0, 10**6), st.integers(0, 3))
def test_exact_belief_matches_enumeration(seed, steps):
    p = gen.random_pomdp(3, 2, 3, 5, seed)
    rng = np.random.default_rng(seed)
    acts = tuple(int(a) for a in rng.integers(2, size=steps))
    obs = tuple(int(y) for y in rng.integers(3, size=steps))
    np.testing.assert_allclose(exact_belief(p, acts, obs), brute_conditional(p, acts, obs), atol=1e-12)


def test_identity_emissions_give_point_masses():
    p = gen.gen_random_observable(3, 2, 4, 1.0, seed=0)
    b = exact_belief(p, (1, 0), (2, 1))
    np.testing.assert_array_equal(b, [0, 1, 0])


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_full_window_equals_exact(seed, steps):
    p = gen.random_pomdp(3, 2, 3, 6, seed)
    rng = np.random.default_rng(seed)
    acts = tuple(int(a) for a in rng.integers(2, size=steps))
    obs = tuple(int(y) for y in rng.integers(3, size=steps))
    w = HistoryWindow.from_history(acts, obs)
    np.testing.assert_allclose(approx_belief(p, w), exact_belief(p, acts, obs), atol=1e-12)


# one-step inequalities as exact finite sums ----------------------------------


def dist(size, positive=True):
    lo = 1e-3 if positive else 0.0
    vecs = st.lists(st.floats(lo, 1.0), min_size=size, max_size=size).filter(lambda v: sum(v) > 1e-3)
    return vecs.map(lambda v: np.asarray(v) / np.sum(v))


@st.composite
def triples(draw):
    S = draw(st.integers(2, 4))
    O = draw(st.integers(2, 4))
    E = np.stack([draw(dist(O)) for _ in range(S)])
    bp = draw(dist(S))
    b = draw(dist(S, positive=False))
    return E, b, bp


def posterior(E, b, y):
    u = b * E[:, y]
    return u / u.sum()


@given(triples())
def test_weak_kl_contraction(t):
    E, b, bp = t
    py = b @ E
    lhs = sum(py[y] * kl(posterior(E, b, y), posterior(E, bp, y)) for y in range(E.shape[1]) if py[y] > 0)
    assert lhs <= kl(b, bp) + 1e-9


@given(triples())
def test_sqrt_kl_strict_contraction(t):
    E, b, bp = t
    g, _ = gamma_exact(E)
    d = kl(b, bp)
    py = b @ E
    lhs = sum(py[y] * math.sqrt(kl(posterior(E, b, y), posterior(E, bp, y))) for y in range(E.shape[1]) if py[y] > 0)
    assert lhs <= (1 - g**2 / (2**14 * max(1.0, d))) * math.sqrt(d) + 1e-9


@given(triples())
def test_renyi_potential_contraction(t):
    E, b, bp = t
    g, _ = gamma_exact(E)
    py = b @ E
    lhs = sum(py[y] * renyi_potential(posterior(E, b, y), posterior(E, bp, y)) for y in range(E.shape[1]) if py[y] > 0)
    assert lhs <= (1 - g**4 / 2**40) * renyi_potential(b, bp) + 1e-9


@given(triples(), st.integers(0, 10**6))
def test_linf_ratio_supermartingale(t, seed):
    E, b, bp = t
    S = len(b)
    T = np.random.default_rng(seed).dirichlet(np.ones(S), size=S)
    pb, pbp = b @ T, bp @ T
    py = pb @ E
    lhs = sum(py[y] * linf_ratio(posterior(E, pb, y), posterior(E, pbp, y)) for y in range(E.shape[1]) if py[y] > 0)
    assert lhs <= linf_ratio(b, bp) + 1e-9


@given(triples())
def test_tv_bounded_by_renyi_potential(t):
    _, b, bp = t
    assert tv(b, bp) <= 4 * renyi_potential(b, bp) + 1e-12
    assert renyi2(b, bp) >= 0


@given(st.floats(0.5, 1.5))
def test_fkl_sandwich(x):
    fx = float(f_kl(x))
    assert (x - 1) ** 2 / 4 <= fx + 1e-15
    assert fx <= (x - 1) ** 2 + 1e-15


def test_divergence_edge_values():
    assert kl([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert renyi_potential([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert tv([0.2, 0.8], [0.2, 0.8]) == 0.0
