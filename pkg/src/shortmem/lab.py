"""Filter-stability experiments.

How fast does a filter started from the wrong prior forget it? The curves
here compare the exact belief ``b_{h+t}`` with the belief obtained by
restarting the filter at step ``h`` from a uniform prior and feeding it the
same ``t`` actions and observations.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._lin import total, vecmat
from .belief import IMPOSSIBLE_MASS, f_kl, kl, linf_ratio, renyi2, renyi_potential, window_prior
from .errors import BudgetExceeded
from .exactplan import DEFAULT_BUDGET, episode_rng
from .model import Pomdp
from .observability import gamma_exact

# ---------------------------------------------------------------------------
# policies


class UniformRandomPolicy:
    """Every action with equal probability, whatever the history."""

    tag = "uniform-random"

    def __init__(self, num_actions: int):
        self.num_actions = num_actions

    def action_probs(self, actions, observations):
        return np.full(self.num_actions, 1.0 / self.num_actions)

    def batch_probs(self, h, n):
        return np.full((n, self.num_actions), 1.0 / self.num_actions)

    def sample(self, actions, observations, rng):
        return int(rng.integers(self.num_actions))


class OpenLoopPolicy:
    """Fixed action per step, ignoring observations. Default cycles ``a_h = (h-1) mod A``."""

    tag = "open-loop"

    def __init__(self, num_actions: int, schedule=None):
        self.num_actions = num_actions
        self.schedule = schedule

    def action_at(self, h: int) -> int:
        if self.schedule is None:
            return (h - 1) % self.num_actions
        if callable(self.schedule):
            return int(self.schedule(h))
        return int(self.schedule[h - 1])

    def __call__(self, actions, observations):
        return self.action_at(len(actions) + 1)

    def batch_probs(self, h, n):
        d = np.zeros((n, self.num_actions))
        d[:, self.action_at(h)] = 1.0
        return d


def _probs_for(policy, h, acts, obs, A):
    """Action distributions for n histories at stage ``h`` as an (n, A) array."""
    n = acts.shape[0]
    if hasattr(policy, "batch_probs"):
        return policy.batch_probs(h, n)
    out = np.zeros((n, A))
    for i in range(n):
        ha, ho = tuple(int(v) for v in acts[i]), tuple(int(v) for v in obs[i])
        if hasattr(policy, "action_probs"):
            out[i] = policy.action_probs(ha, ho)
        else:
            out[i, int(policy(ha, ho))] = 1.0
    return out


def _policy_tag(policy):
    return getattr(policy, "tag", type(policy).__name__)


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurvePoint:
    t: int
    mean_l1: float
    stderr: float
    trials: int


@dataclass
class ContractionCurve:
    gamma: float | None
    policy: str
    method: str
    anchor: int
    points: list = field(default_factory=list)
    skipped: int = 0  # windows with zero probability under the restarted prior

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean_l1", "stderr", "trials"])
        for p in self.points:
            w.writerow([p.t, repr(p.mean_l1), repr(p.stderr), p.trials])
        return buf.getvalue()

    def mean(self, t: int) -> float:
        for p in self.points:
            if p.t == t:
                return p.mean_l1
        raise KeyError(t)


def envelope(S: int, gamma: float, t) -> np.ndarray:
    """``min(2, S (1 - gamma^4)^t)``."""
    return np.minimum(2.0, S * (1.0 - gamma**4) ** np.asarray(t, dtype=float))


def _inverse_cdf(P, u):
    c = np.cumsum(P, axis=1)
    idx = (c <= (u * c[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1)


def _condition(pred, E, y):
    """Row-wise Bayes step; returns (posterior, ok mask)."""
    unnorm = pred * E.T[y]
    mass = total(unnorm)
    ok = mass > IMPOSSIBLE_MASS
    post = np.where(ok[:, None], unnorm / np.where(ok, mass, 1.0)[:, None], 0.0)
    return post, ok


def _gather_vecmat(B, T, a):
    """Row-wise ``B[n] @ T[a[n]]`` with the fixed summation order."""
    M = T[a]
    acc = B[:, 0, None] * M[:, 0]
    for i in range(1, M.shape[1]):
        acc += B[:, i, None] * M[:, i]
    return acc


MC_CHUNK = 4096


def _mc_chunk(pomdp, policy, anchor, t_max, seed, lo, hi):
    p = pomdp
    S, A = p.num_states, p.num_actions
    n = hi - lo
    end = anchor + t_max
    draws = np.stack([episode_rng(seed, k).random(3 * end) for k in range(lo, hi)])
    x = _inverse_cdf(np.broadcast_to(p.initial_belief, (n, S)), draws[:, 0])
    b = np.broadcast_to(p.initial_belief, (n, S)).astype(float)
    bh = None
    acts = np.zeros((n, 0), dtype=np.int64)
    obs = np.zeros((n, 0), dtype=np.int64)
    need_hist = not hasattr(policy, "batch_probs")
    valid = np.ones(n, dtype=bool)
    s1 = np.zeros(t_max)
    s2 = np.zeros(t_max)
    cnt = np.zeros(t_max, dtype=np.int64)
    for h in range(1, end):
        if h == anchor:
            bh = np.broadcast_to(window_prior(p, anchor), (n, S)).astype(float)
        dist = _probs_for(policy, h, acts, obs, A)
        a = _inverse_cdf(dist, draws[:, 3 * h - 2])
        T = p.transitions[h - 1]
        x = _inverse_cdf(T[a, x], draws[:, 3 * h - 1])
        E = p.emission(h + 1)
        y = _inverse_cdf(E[x], draws[:, 3 * h])
        b, _ = _condition(_gather_vecmat(b, T, a), E, y)
        if bh is not None:
            bh, ok = _condition(_gather_vecmat(bh, T, a), E, y)
            valid &= ok
            t = h + 1 - anchor
            err = np.abs(b - bh).sum(axis=1)[valid]
            s1[t - 1] = err.sum()
            s2[t - 1] = (err * err).sum()
            cnt[t - 1] = err.size
        if need_hist:
            acts = np.column_stack([acts, a])
            obs = np.column_stack([obs, y])
    return s1, s2, cnt


def _mc_curve(pomdp, policy, anchor, t_max, trials, seed, threads):
    starts = list(range(0, trials, MC_CHUNK))

    def run(lo):
        return _mc_chunk(pomdp, policy, anchor, t_max, seed, lo, min(lo + MC_CHUNK, trials))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    s1 = np.zeros(t_max)
    s2 = np.zeros(t_max)
    cnt = np.zeros(t_max, dtype=np.int64)
    for a, b, c in parts:  # chunk order
        s1 += a
        s2 += b
        cnt += c
    points = []
    for t in range(1, t_max + 1):
        n = int(cnt[t - 1])
        mean = s1[t - 1] / n if n else math.nan
        if n > 1:
            var = max(0.0, (s2[t - 1] - n * mean * mean) / (n - 1))
            se = math.sqrt(var / n)
        else:
            se = math.nan
        points.append(CurvePoint(t, float(mean), float(se), n))
    return points, trials - int(cnt[-1]) if t_max else 0


TREE_CHUNK = 1 << 15


def _tree_curve(pomdp, policy, anchor, t_max, budget):
    p = pomdp
    S, A, O = p.num_states, p.num_actions, p.num_observations
    end = anchor + t_max
    need_hist = not hasattr(policy, "batch_probs")
    sums = np.zeros(t_max)
    counts = np.zeros(t_max, dtype=np.int64)
    state = {"nodes": 0, "skipped": 0}

    def visit(h, prob, b, bh, acts, obs):
        n = prob.size
        state["nodes"] += n
        if state["nodes"] > budget:
            raise BudgetExceeded("contraction tree nodes", state["nodes"], budget)
        if h == anchor:
            bh = np.broadcast_to(window_prior(p, anchor), (n, S)).astype(float)
        elif h > anchor:
            t = h - anchor
            sums[t - 1] += float((prob * np.abs(b - bh).sum(axis=1)).sum())
            counts[t - 1] += n
        if h == end:
            return
        dist = _probs_for(policy, h, acts, obs, A)
        E = p.emission(h + 1)
        c_prob, c_b, c_bh, c_a, c_y = [], [], [], [], []
        for a in range(A):
            pa = dist[:, a]
            if not np.any(pa > 0):
                continue
            T = p.transition(h, a)
            pred = vecmat(b, T)
            py = vecmat(pred, E)
            predh = vecmat(bh, T) if bh is not None else None
            for y in range(O):
                w = prob * pa * py[:, y]
                keep = (pa > 0) & (py[:, y] > IMPOSSIBLE_MASS)
                if predh is not None:
                    unh = predh * E[:, y]
                    massh = total(unh)
                    okh = massh > IMPOSSIBLE_MASS
                    state["skipped"] += int(np.count_nonzero(keep & ~okh))
                    keep &= okh
                if not keep.any():
                    continue
                idx = np.flatnonzero(keep)
                un = pred[idx] * E[:, y]
                c_b.append(un / py[idx, y][:, None])
                c_bh.append(unh[idx] / massh[idx][:, None] if predh is not None else None)
                c_prob.append(w[idx])
                c_a.append(np.column_stack([idx, np.full(idx.size, a), np.full(idx.size, y)]))
        if not c_prob:
            return
        # node-major order: parent index, then action, then observation
        order_key = np.concatenate(c_a)
        order = np.lexsort((order_key[:, 2], order_key[:, 1], order_key[:, 0]))
        prob2 = np.concatenate(c_prob)[order]
        b2 = np.concatenate(c_b)[order]
        bh2 = np.concatenate(c_bh)[order] if bh is not None else None
        if need_hist:
            par = order_key[order, 0]
            acts2 = np.column_stack([acts[par], order_key[order, 1]])
            obs2 = np.column_stack([obs[par], order_key[order, 2]])
        else:
            acts2 = obs2 = np.zeros((prob2.size, 0), dtype=np.int64)
        for lo in range(0, prob2.size, TREE_CHUNK):
            sl = slice(lo, lo + TREE_CHUNK)
            visit(h + 1, prob2[sl], b2[sl], None if bh2 is None else bh2[sl], acts2[sl], obs2[sl])

    b1 = np.asarray(p.initial_belief, dtype=float)[None, :]
    empty = np.zeros((1, 0), dtype=np.int64)
    visit(1, np.ones(1), b1, None, empty, empty)
    points = [CurvePoint(t, float(sums[t - 1]), 0.0, int(counts[t - 1])) for t in range(1, t_max + 1)]
    return points, state["skipped"]


def contraction_curve(pomdp: Pomdp, policy=None, h_anchor: int = 2, t_max: int = 10, trials: int = 1000,
                      seed: int = 0, method: str = "mc", threads: int = 1, budget=DEFAULT_BUDGET,
                      gamma=None) -> ContractionCurve:
    """Expected ``||b_{h+t} - bhat_{h+t}||_1`` for ``t = 1..t_max`` with restart step ``h = h_anchor``.

    ``method="mc"`` averages over seeded rollouts (trial ``k`` uses its own
    stream derived from ``(seed, k)``); ``method="exact-tree"`` sums over all
    positive-probability histories. ``policy`` defaults to uniform random.
    """
    if h_anchor < 1 or h_anchor + t_max > pomdp.horizon:
        raise ValueError(f"need 1 <= h_anchor and h_anchor + t_max <= H, got {h_anchor} + {t_max} > {pomdp.horizon}")
    if policy is None:
        policy = UniformRandomPolicy(pomdp.num_actions)
    if method == "mc":
        if trials < 1:
            raise ValueError("trials must be at least 1")
        points, skipped = _mc_curve(pomdp, policy, h_anchor, t_max, trials, seed, threads)
    elif method == "exact-tree":
        points, skipped = _tree_curve(pomdp, policy, h_anchor, t_max, budget)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ContractionCurve(gamma, _policy_tag(policy), method, h_anchor, points, skipped)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    points_used: int


def decay_slope(curve: ContractionCurve, t_lo: int, t_hi: int) -> SlopeFit:
    """Least-squares slope of ``log mean_l1`` against ``t`` over points with mean above 5 stderr."""
    ts, ys = [], []
    for p in curve.points:
        if t_lo <= p.t <= t_hi and p.mean_l1 > 0 and p.mean_l1 > 5 * p.stderr:
            ts.append(p.t)
            ys.append(math.log(p.mean_l1))
    if len(ts) < 2:
        raise ValueError("fewer than two usable points for the slope fit")
    slope, intercept = np.polyfit(np.asarray(ts, float), np.asarray(ys), 1)
    return SlopeFit(float(slope), float(intercept), len(ts))


# ---------------------------------------------------------------------------
# one-step inequality checks

SLACK = 1e-9


def bayes_posterior(E, b, y):
    unnorm = np.asarray(b, float) * E[:, y]
    return unnorm / total(unnorm)


def corrupted_posterior(E, b, y):
    """Bayes update that reads the wrong observation column (harness sensitivity check)."""
    return bayes_posterior(E, b, (y + 1) % E.shape[1])


def _random_trial(rng):
    S = int(rng.integers(2, 7))
    O = int(rng.integers(2, 9))
    kind = rng.integers(3)
    if kind == 0:
        E = rng.dirichlet(np.full(O, 0.5), size=S)
    elif kind == 1 and O >= S:
        g = rng.uniform(0.05, 1.0)
        E = np.zeros((S, O))
        E[:, :S] = g * np.eye(S)
        E += (1.0 - g) / O
    else:
        E = rng.dirichlet(np.ones(O), size=S)
    T = rng.dirichlet(np.ones(S), size=S)
    bp = rng.dirichlet(np.ones(S))
    b = rng.dirichlet(np.ones(S))
    if rng.random() < 0.3:  # sparser b, still absolutely continuous w.r.t. b'
        b[rng.random(S) < 0.5] = 0.0
        if b.sum() == 0:
            b[0] = 1.0
        b /= b.sum()
    if rng.random() < 0.1:
        b = bp.copy()
    return E, T, b, bp


def _expect(E, b, fn, bayes):
    """``sum_y P(y) fn(B(b;y), B(b';y))`` with ``P = E^T b``; fn receives y."""
    py = vecmat(b, E)
    acc = 0.0
    for y in range(E.shape[1]):
        if py[y] > IMPOSSIBLE_MASS:
            acc += py[y] * fn(y)
    return acc


def _checks(E, T, b, bp, gamma, bayes):
    """Yields (name, lhs, rhs)."""
    d = kl(b, bp)
    post = lambda v, y: bayes(E, v, y)  # noqa: E731

    lhs = _expect(E, b, lambda y: kl(post(b, y), post(bp, y)), bayes)
    yield "weak-kl-contraction", lhs, d

    lhs = _expect(E, b, lambda y: math.sqrt(kl(post(b, y), post(bp, y))), bayes)
    yield "sqrt-kl-contraction", lhs, (1 - gamma**2 / (2**14 * max(1.0, d))) * math.sqrt(d)

    # belief update: push through T first, observation drawn from E^T T b
    pb, pbp = vecmat(b, T), vecmat(bp, T)
    lhs = _expect(E, pb, lambda y: math.sqrt(kl(post(pb, y), post(pbp, y))), bayes)
    yield "sqrt-kl-update-contraction", lhs, (1 - gamma**2 / (2**14 * max(1.0, d))) * math.sqrt(d)

    lhs = _expect(E, pb, lambda y: linf_ratio(post(pb, y), post(pbp, y)), bayes)
    yield "linf-ratio-supermartingale", lhs, linf_ratio(b, bp)

    yield "l1-renyi-potential", float(np.abs(b - bp).sum()), 4 * renyi_potential(b, bp)

    lhs = _expect(E, b, lambda y: renyi_potential(post(b, y), post(bp, y)), bayes)
    yield "renyi-potential-contraction", lhs, (1 - gamma**4 / 2**40) * renyi_potential(b, bp)

    lhs = _expect(E, pb, lambda y: renyi_potential(post(pb, y), post(pbp, y)), bayes)
    yield "renyi-potential-update-contraction", lhs, (1 - gamma**4 / 2**40) * renyi_potential(b, bp)


CHECK_NAMES = (
    "weak-kl-contraction",
    "sqrt-kl-contraction",
    "sqrt-kl-update-contraction",
    "linf-ratio-supermartingale",
    "l1-renyi-potential",
    "renyi-potential-contraction",
    "renyi-potential-update-contraction",
    "fkl-quadratic-lower",
    "fkl-quadratic-upper",
)


@dataclass
class CheckStats:
    evaluated: int = 0
    violations: int = 0
    max_excess: float = -math.inf


@dataclass
class InequalityReport:
    seed: int
    num_trials: int
    checks: dict
    violations: list
    slack: float = SLACK

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.checks.values())

    @property
    def passed(self) -> bool:
        return self.total_violations == 0

    def to_dict(self):
        return {
            "seed": self.seed,
            "num_trials": self.num_trials,
            "slack": self.slack,
            "passed": self.passed,
            "checks": {k: asdict(v) for k, v in self.checks.items()},
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def contraction_inequality_suite(seed: int = 0, num_trials: int = 500, bayes=None,
                                 max_reported: int = 20) -> InequalityReport:
    """Evaluate the one-step contraction inequalities on random channels and beliefs.

    Each trial draws ``S <= 6`` states, ``O <= 8`` observations, a channel, a
    transition kernel and beliefs ``b << b'``; the channel's observability
    comes from :func:`gamma_exact`. Every inequality is an exact finite sum.
    ``bayes(E, b, y)`` replaces the posterior computation (for negative tests).
    """
    bayes = bayes or bayes_posterior
    checks = {name: CheckStats() for name in CHECK_NAMES}
    violations = []

    def record(name, lhs, rhs, trial, repro):
        st = checks[name]
        st.evaluated += 1
        excess = lhs - rhs
        if not math.isnan(excess):
            st.max_excess = max(st.max_excess, excess)
        if not excess <= SLACK:
            st.violations += 1
            if len(violations) < max_reported:
                violations.append({"check": name, "trial": trial, "lhs": lhs, "rhs": rhs, **repro})

    for k in range(num_trials):
        rng = episode_rng(seed, k)
        E, T, b, bp = _random_trial(rng)
        gamma, _ = gamma_exact(E)
        repro = {
            "seed": seed,
            "gamma": gamma,
            "emission": E.tolist(),
            "transition": T.tolist(),
            "b": b.tolist(),
            "b_prime": bp.tolist(),
        }
        try:
            for name, lhs, rhs in _checks(E, T, b, bp, gamma, bayes):
                record(name, float(lhs), float(rhs), k, repro)
        except (ZeroDivisionError, FloatingPointError, ValueError) as exc:
            record("weak-kl-contraction", math.inf, 0.0, k, {**repro, "error": str(exc)})
        x = rng.uniform(0.5, 1.5)
        fx = float(f_kl(x))
        record("fkl-quadratic-lower", (x - 1) ** 2 / 4, fx, k, {"seed": seed, "x": x})
        record("fkl-quadratic-upper", fx, (x - 1) ** 2, k, {"seed": seed, "x": x})
    return InequalityReport(seed, num_trials, checks, violations)


# ---------------------------------------------------------------------------
# worked counterexamples


def divergence_increase_demo(eps_increase: float = 0.01, eps_grid=(0.1, 0.05, 0.01), gamma: float = 0.1) -> dict:
    """KL can grow after an unlikely observation, and its expected one-step drop is quadratic."""
    if not eps_increase > 0 or any(not e > 0 for e in eps_grid):
        raise ValueError("eps must be positive: at eps = 0 the channel is noiseless and the example degenerates")
    e = eps_increase
    E = np.array([[1 - e, e], [e, 1 - e]])
    b, bp = np.array([1 - e * e, e * e]), np.array([0.5, 0.5])
    before = kl(b, bp)
    after = kl(bayes_posterior(E, b, 1), bayes_posterior(E, bp, 1))
    increase = {
        "eps": e,
        "kl_before": before,
        "kl_after_unlikely_observation": after,
        "observation_probability": float(vecmat(b, E)[1]),
        "increased": after > before,
    }
    rows = []
    C = np.array([[0.5 + gamma, 0.5 - gamma], [0.5 - gamma, 0.5 + gamma]])
    for eps in eps_grid:
        b, bp = np.array([1.0, 0.0]), np.array([1 - eps, eps])
        d = kl(b, bp)
        py = vecmat(b, C)
        expected = sum(py[y] * kl(bayes_posterior(C, b, y), bayes_posterior(C, bp, y)) for y in range(2))
        dec = d - expected
        rows.append({"eps": eps, "kl": d, "expected_kl_after": expected, "decrement": dec,
                     "decrement_over_kl_squared": dec / d**2})
    ratios = [r["decrement_over_kl_squared"] for r in rows]
    return {
        "increase": increase,
        "quadratic_decrement": {"gamma": gamma, "rows": rows,
                                "ratio_spread": max(ratios) / min(ratios)},
    }
