"""How informative is an observation matrix?

The observability parameter of a row-stochastic matrix ``E`` (states x
observations) is

    gamma(E) = min over zero-sum v != 0 of ||E^T v||_1 / ||v||_1 .

Fixing the sign pattern of ``v`` turns the minimisation into a linear
program, so the exact value is the minimum over ``2^(S-1) - 1`` LPs (one per
pattern up to global negation, excluding the all-positive pattern which
admits no zero-sum vector). Beyond ``S = 14`` only sampled upper bounds are
offered.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionTooLarge, Infeasible
from .model import Pomdp
from .simplex import lp_solve

MAX_EXACT_STATES = 14


def ratio(E, v) -> float:
    """``||E^T v||_1 / ||v||_1``."""
    v = np.asarray(v, dtype=float)
    return float(np.abs(v @ E).sum() / np.abs(v).sum())


def _pattern_lp(E, signs):
    S, O = E.shape
    # variables: u (S, magnitudes of v) then w (O, |E^T v| bounds)
    Et_s = (E * signs[:, None]).T  # O x S, so E^T v = Et_s @ u
    A_ub = np.block([[Et_s, -np.eye(O)], [-Et_s, -np.eye(O)]])
    b_ub = np.zeros(2 * O)
    A_eq = np.vstack([
        np.concatenate([np.ones(S), np.zeros(O)]),
        np.concatenate([signs, np.zeros(O)]),
    ])
    b_eq = np.array([1.0, 0.0])
    c = np.concatenate([np.zeros(S), np.ones(O)])
    res = lp_solve(c, A_ub, b_ub, A_eq, b_eq, max_iter=1000 * S * O)
    v = signs * res.x[:S]
    return res.objective, v


def _patterns(S):
    # s_0 fixed to +1 by the v -> -v symmetry; mask bit k set means s_{k+1} = -1
    for mask in range(1, 2 ** (S - 1)):
        signs = np.ones(S)
        for k in range(S - 1):
            if mask >> k & 1:
                signs[k + 1] = -1.0
        yield mask, signs


def gamma_exact(E, threads: int = 1):
    """Exact observability of ``E`` and a minimising direction ``v``.

    Returns ``(gamma, v)`` with ``sum(v) == 0`` and ``||v||_1 == 1``. Ties
    between sign patterns go to the smallest pattern index.
    """
    E = np.asarray(E, dtype=float)
    S = E.shape[0]
    if S > MAX_EXACT_STATES:
        raise DimensionTooLarge(f"exact observability supports S <= {MAX_EXACT_STATES}, got S = {S}")
    if S == 1:
        return 1.0, np.zeros(1)

    def solve(item):
        mask, signs = item
        try:
            obj, v = _pattern_lp(E, signs)
        except Infeasible as exc:  # cannot happen: every mixed pattern admits a zero-sum v
            raise AssertionError(f"sign pattern {mask} infeasible") from exc
        return mask, obj, v

    items = list(_patterns(S))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, items))
    else:
        results = [solve(it) for it in items]
    best = None
    for mask, obj, v in results:  # already in pattern order
        if best is None or obj < best[1]:
            best = (mask, obj, v)
    _, _, v = best
    v = v / np.abs(v).sum()
    return ratio(E, v), v


def _zero_sum_unit(v):
    pos, neg = v.clip(min=0), (-v).clip(min=0)
    return pos / (2 * pos.sum()) - neg / (2 * neg.sum())


def gamma_mc_upper(E, num_samples: int = 1000, seed: int = 0):
    """Upper bound on the observability of ``E`` from sampled directions.

    Always tries every pairwise state difference, then ``num_samples`` random
    sparse sign vectors and Dirichlet difference pairs. Returns ``(bound, v)``.
    """
    E = np.asarray(E, dtype=float)
    S = E.shape[0]
    if S == 1:
        return 1.0, np.zeros(1)
    rng = np.random.default_rng(seed)
    best_val, best_v = np.inf, None

    def consider(v):
        nonlocal best_val, best_v
        r = ratio(E, v)
        if r < best_val:
            best_val, best_v = r, v

    for i, j in itertools.combinations(range(S), 2):
        v = np.zeros(S)
        v[i], v[j] = 0.5, -0.5
        consider(v)
    for k in range(num_samples):
        if k % 2 == 0:
            size = rng.integers(2, S + 1)
            support = rng.choice(S, size=size, replace=False)
            signs = rng.choice([-1.0, 1.0], size=size)
            signs[0], signs[1] = 1.0, -1.0
            v = np.zeros(S)
            v[support] = signs * rng.exponential(size=size)
        else:
            v = rng.dirichlet(np.ones(S)) - rng.dirichlet(np.ones(S))
        if np.all(v == 0):
            continue
        consider(_zero_sum_unit(v))
    return best_val, best_v


def gamma_weak(E):
    """Smallest 1-norm distance between two rows of ``E`` and the pair attaining it."""
    E = np.asarray(E, dtype=float)
    S = E.shape[0]
    if S < 2:
        raise ValueError("weak observability needs at least two states")
    best = (np.inf, (0, 1))
    for i in range(S - 1):
        d = np.abs(E[i + 1 :] - E[i]).sum(axis=1)
        j = int(np.argmin(d))
        if d[j] < best[0]:
            best = (float(d[j]), (i, i + 1 + j))
    return best


def closed_form_gamma(E, tol: float = 1e-12):
    """Observability of the channels with a known closed form, else ``None``.

    Recognises the noisy-identity channel (state revealed with probability g,
    otherwise a uniform state; includes the identity itself) and the
    null-observation channel (state revealed with probability g, otherwise
    an extra symbol). Both have observability exactly g.
    """
    E = np.asarray(E, dtype=float)
    S, O = E.shape
    if S == O:
        diag = np.diag(E)
        off = E[~np.eye(S, dtype=bool)]
        if S == 1:
            return 1.0
        if np.ptp(diag) <= tol and np.ptp(off) <= tol and diag[0] >= off[0] - tol:
            return float(diag[0] - off[0])
    if O == S + 1:
        g = E[0, 0]
        if (
            np.allclose(E[:, :S], g * np.eye(S), rtol=0, atol=tol)
            and np.allclose(E[:, S], 1.0 - g, rtol=0, atol=tol)
        ):
            return float(g)
    return None


@dataclass
class StepGamma:
    step: int
    value: float
    method: str  # "closed-form" | "exact-lp" | "mc-upper"
    certificate: np.ndarray | None = None
    weak: float | None = None
    weak_pair: tuple | None = None

    @property
    def is_upper_bound(self) -> bool:
        return self.method == "mc-upper"


@dataclass
class ObservabilityReport:
    steps: list = field(default_factory=list)

    @property
    def pomdp_gamma(self) -> float:
        return min(s.value for s in self.steps)

    @property
    def is_upper_bound(self) -> bool:
        """True when the minimum is only known as an upper bound."""
        lo = self.pomdp_gamma
        return any(s.is_upper_bound and s.value == lo for s in self.steps)

    @property
    def weak_gamma(self):
        vals = [s.weak for s in self.steps if s.weak is not None]
        return min(vals) if vals else None

    def rows(self):
        for s in self.steps:
            yield {
                "step": s.step,
                "gamma": s.value,
                "method": s.method,
                "weak_gamma": s.weak,
            }


def observability_report(pomdp: Pomdp, method: str = "auto", samples: int = 1000, seed: int = 0,
                         threads: int = 1) -> ObservabilityReport:
    """Per-step observability of every emission matrix of ``pomdp``.

    ``method`` is ``"auto"`` (closed form, else exact LP when S <= 14, else a
    sampled upper bound), ``"exact"`` or ``"mc"``.
    """
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown method {method!r}")
    cache = {}
    report = ObservabilityReport()
    for h in range(2, pomdp.horizon + 1):
        E = pomdp.emission(h)
        key = E.tobytes()
        if key not in cache:
            cf = closed_form_gamma(E) if method == "auto" else None
            if cf is not None:
                val, meth, cert = cf, "closed-form", None
            elif method == "mc" or (method == "auto" and E.shape[0] > MAX_EXACT_STATES):
                val, cert = gamma_mc_upper(E, samples, seed)
                meth = "mc-upper"
            else:
                val, cert = gamma_exact(E, threads=threads)
                meth = "exact-lp"
            weak = gamma_weak(E) if E.shape[0] >= 2 else (None, None)
            cache[key] = (val, meth, cert, weak)
        val, meth, cert, (wv, wp) = cache[key]
        report.steps.append(StepGamma(h, val, meth, cert, wv, wp))
    return report
