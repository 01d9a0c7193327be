"""Instance generators.

Hardness reductions from 3SAT, the two-state channel on which belief error
decays slowly, small worked examples, and random observable instances.
Every generator returns a validated :class:`~shortmem.model.Pomdp` whose
``metadata`` records how it was built.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelFormatError, SizeBudgetExceeded, UnknownExample
from .model import Pomdp, check_valid

#: Default cap on dense transition entries S*S*A*(H-1) for generated models.
DEFAULT_SIZE_BUDGET = 10**8


# ---------------------------------------------------------------------------
# formulas


@dataclass(frozen=True)
class CnfFormula:
    """CNF formula with clauses of at most three signed, 1-based literals."""

    num_vars: int
    clauses: tuple

    def __post_init__(self):
        clauses = tuple(tuple(int(l) for l in c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        if self.num_vars < 1:
            raise ValueError("formula needs at least one variable")
        if not clauses:
            raise ValueError("formula needs at least one clause")
        for c in clauses:
            if not 1 <= len(c) <= 3:
                raise ValueError(f"clause {c} must have 1 to 3 literals")
            for l in c:
                if l == 0 or abs(l) > self.num_vars:
                    raise ValueError(f"literal {l} out of range for {self.num_vars} variables")

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def satisfied_by(self, assignment) -> bool:
        """``assignment[k]`` is the value of variable ``k + 1``."""
        return all(any((assignment[abs(l) - 1] == 1) == (l > 0) for l in c) for c in self.clauses)

    def brute_force_sat(self, max_vars: int = 22):
        """A satisfying assignment, ``None`` if unsatisfiable; raises if too many variables."""
        if self.num_vars > max_vars:
            raise ValueError(f"{self.num_vars} variables is too many for brute force")
        for bits in itertools.product((0, 1), repeat=self.num_vars):
            if self.satisfied_by(bits):
                return bits
        return None


def parse_dimacs(text: str, path=None) -> CnfFormula:
    """Parse DIMACS CNF (``p cnf n m`` header, clauses terminated by 0)."""
    n = m = None
    clauses, cur = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line[0] in "c%":
            continue
        if line[0] == "p":
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ModelFormatError(f"line {lineno}: bad header {line!r}", path)
            n, m = int(parts[2]), int(parts[3])
            continue
        if n is None:
            raise ModelFormatError(f"line {lineno}: clause before 'p cnf' header", path)
        try:
            lits = [int(tok) for tok in line.split()]
        except ValueError:
            raise ModelFormatError(f"line {lineno}: non-integer literal in {line!r}", path) from None
        for lit in lits:
            if lit == 0:
                clauses.append(tuple(cur))
                cur = []
            else:
                cur.append(lit)
    if cur:
        clauses.append(tuple(cur))
    if n is None:
        raise ModelFormatError("missing 'p cnf' header", path)
    if m is not None and len(clauses) != m:
        raise ModelFormatError(f"header declares {m} clauses, found {len(clauses)}", path)
    try:
        return CnfFormula(n, tuple(clauses))
    except ValueError as exc:
        raise ModelFormatError(str(exc), path) from None


def load_dimacs(path) -> CnfFormula:
    with open(path, encoding="utf-8") as fh:
        return parse_dimacs(fh.read(), path)


def _check_size(S, A, H, budget):
    entries = S * S * A * (H - 1)
    if budget is not None and entries > budget:
        raise SizeBudgetExceeded(S, A, H, budget, entries)


def noisy_identity(S: int, gamma: float) -> np.ndarray:
    """Reveal the state with probability ``gamma``, otherwise emit a uniform state."""
    return gamma * np.eye(S) + (1.0 - gamma) / S


def null_channel(S: int, gamma: float) -> np.ndarray:
    """Reveal the state with probability ``gamma``, otherwise emit the extra symbol ``S``."""
    E = np.zeros((S, S + 1))
    E[:, :S] = gamma * np.eye(S)
    E[:, S] = 1.0 - gamma
    return E


# ---------------------------------------------------------------------------
# SAT reduction with noisy full-state observations


@dataclass
class SatHardParams:
    gamma: float
    trial_count: int | None = None
    block_size: int | None = None
    steps_per_trial: int | None = None


@dataclass
class ResolvedSatParams:
    gamma: float
    n: int  # variables after padding
    trial_count: int
    block_size: int
    steps_per_trial: int
    default_trial_count: int
    overrides: dict = field(default_factory=dict)


def default_trial_count(n: int, gamma: float) -> int:
    return math.ceil(2 * n**3 * math.exp(2 * math.sqrt(gamma * n)))


def resolve_sat_params(num_vars: int, params: SatHardParams) -> ResolvedSatParams:
    g = float(params.gamma)
    if not 0 < g <= 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2], got {g}")
    # pad with dummy variables so that gamma >= 1/n holds
    n = max(num_vars, math.ceil(1.0 / g - 1e-12))
    block = params.block_size or math.ceil(math.sqrt(g * n) - 1e-12)
    steps = params.steps_per_trial or math.ceil(math.sqrt(n / g) - 1e-12)
    if block < 1 or steps < 1:
        raise ValueError("block size and steps per trial must be positive")
    if block * steps < num_vars:
        raise ValueError(f"{steps} blocks of {block} variables cannot cover {num_vars} variables")
    T_default = default_trial_count(n, g)
    T = params.trial_count or T_default
    if T < 1:
        raise ValueError("trial count must be at least 1")
    overrides = {
        k: v
        for k, v in (("trial_count", params.trial_count), ("block_size", params.block_size),
                     ("steps_per_trial", params.steps_per_trial))
        if v is not None
    }
    return ResolvedSatParams(g, n, T, block, steps, T_default, overrides)


def sat_fail_bound(num_clauses: int, gamma: float, steps_per_trial: int, trial_count: int) -> float:
    """Upper bound on the optimal value for an unsatisfiable formula."""
    return (1.0 - (1.0 / num_clauses) * (1.0 - gamma) ** steps_per_trial) ** trial_count


def _block_satisfies(clause, block_index, block_size, action):
    """Does assigning bits of ``action`` to block ``block_index`` satisfy ``clause``?"""
    first = block_index * block_size  # 0-based index of the block's first variable
    for lit in clause:
        k = abs(lit) - 1 - first
        if 0 <= k < block_size:
            bit = (action >> k) & 1
            if bit == (1 if lit > 0 else 0):
                return True
    return False


def gen_sat_hard(formula: CnfFormula, params: SatHardParams, size_budget=DEFAULT_SIZE_BUDGET) -> Pomdp:
    """Trials of clause checking, each observed through a noisy-identity channel.

    State ``(t, f, i, j, s)`` flattened row-major over shape
    ``(T+1, 2, m, steps, 2)``: trial ``t`` (``t = T`` is terminal), failure
    flag ``f``, clause ``i`` drawn for this trial, step ``j`` within the trial
    and the flag ``s`` recording whether clause ``i`` is already satisfied.
    Action bit ``k`` assigns variable ``j * block_size + k + 1``. The terminal
    observation is noiseless so that the reward ``1 - f`` is a function of the
    observation.
    """
    p = resolve_sat_params(formula.num_vars, params)
    m = formula.num_clauses
    T, steps, block = p.trial_count, p.steps_per_trial, p.block_size
    shape = (T + 1, 2, m, steps, 2)
    S = int(np.prod(shape))
    A = 2**block
    H = T * steps + 1
    _check_size(S, A, H, size_budget)

    idx = np.arange(S).reshape(shape)
    kernel = np.zeros((A, S, S))
    for a in range(A):
        for t in range(T):
            for f in range(2):
                for i in range(m):
                    for j in range(steps):
                        g = _block_satisfies(formula.clauses[i], j, block, a)
                        for s in range(2):
                            x = idx[t, f, i, j, s]
                            s2 = s | g
                            if j + 1 < steps:
                                kernel[a, x, idx[t, f, i, j + 1, s2]] = 1.0
                            else:
                                f2 = f | (1 - s2)
                                for i2 in range(m):
                                    kernel[a, x, idx[t + 1, f2, i2, 0, 0]] = 1.0 / m
        # terminal states stay put
        terminal = idx[T].ravel()
        kernel[a, terminal, terminal] = 1.0
    transitions = np.broadcast_to(kernel, (H - 1, A, S, S))

    emissions = np.empty((H - 1, S, S))
    emissions[:] = noisy_identity(S, p.gamma)
    emissions[-1] = np.eye(S)

    rewards = np.zeros((H - 1, S))
    rewards[-1, idx[T, 0].ravel()] = 1.0

    b1 = np.zeros(S)
    b1[idx[0, 0, :, 0, 0]] = 1.0 / m

    bound = sat_fail_bound(m, p.gamma, steps, T)
    meta = {
        "generator": "sat-hard",
        "formula": {"num_vars": formula.num_vars, "clauses": [list(c) for c in formula.clauses]},
        "gamma": p.gamma,
        "padded_num_vars": p.n,
        "trial_count": T,
        "block_size": block,
        "steps_per_trial": steps,
        "default_trial_count": p.default_trial_count,
        "overrides": p.overrides,
        "state_layout": {"order": ["t", "failed", "clause", "step", "satisfied"], "shape": list(shape)},
        "action_layout": f"bit k assigns variable j*{block}+k+1 at trial step j",
        "unsat_value_bound": bound,
    }
    meta["value_certificate"] = _certificate(formula, bound)
    return check_valid(Pomdp(H, b1, transitions, emissions, rewards, meta))


def _certificate(formula, unsat_bound):
    if formula.num_vars > 22:
        return {"status": "unknown"}
    sol = formula.brute_force_sat()
    if sol is None:
        return {"status": "unsatisfiable", "value_at_most": unsat_bound}
    return {"status": "satisfiable", "value": 1.0, "assignment": list(sol)}


# ---------------------------------------------------------------------------
# SAT reduction with Hadamard-coded clause observations


def sylvester_hadamard(K: int) -> np.ndarray:
    if K < 1 or K & (K - 1):
        raise ValueError(f"Sylvester construction needs a power of two, got {K}")
    Hm = np.ones((1, 1), dtype=int)
    while Hm.shape[0] < K:
        Hm = np.block([[Hm, Hm], [Hm, -Hm]])
    return Hm


def gen_hadamard_sat(formula: CnfFormula, size_budget=DEFAULT_SIZE_BUDGET) -> Pomdp:
    """Clause checking whose observations only weakly identify the clause.

    State ``(j, i, b)`` over shape ``(2m, n+1, 2)``: clause ``j // 2`` with the
    two copies ``j = 2c, 2c+1``, variable counter ``i`` and satisfied bit ``b``.
    Observation ``(X, i, b)`` over shape ``(K, n+1, 2)`` where copy ``2c`` draws
    ``X`` uniformly from the positive entries of Hadamard row ``c + 1`` and copy
    ``2c+1`` from its negative entries; ``K`` is the smallest power of two above
    ``m``. The action at step ``i`` assigns variable ``x_i``; reward 1 at the
    last step iff the clause got satisfied.
    """
    n, m = formula.num_vars, formula.num_clauses
    K = 1 << m.bit_length()  # smallest power of two >= m + 1
    Hd = sylvester_hadamard(K)
    S_shape = (2 * m, n + 1, 2)
    O_shape = (K, n + 1, 2)
    S, O, A, H = int(np.prod(S_shape)), int(np.prod(O_shape)), 2, n + 1
    _check_size(S, A, H, size_budget)
    sidx = np.arange(S).reshape(S_shape)
    oidx = np.arange(O).reshape(O_shape)

    kernel = np.zeros((A, S, S))
    for a in range(A):
        for j in range(2 * m):
            clause = formula.clauses[j // 2]
            for i in range(n + 1):
                for b in range(2):
                    if i < n:
                        lit_hit = any(abs(l) == i + 1 and (a == 1) == (l > 0) for l in clause)
                        kernel[a, sidx[j, i, b], sidx[j, i + 1, b | lit_hit]] = 1.0
                    else:
                        kernel[a, sidx[j, i, b], sidx[j, i, b]] = 1.0
    transitions = np.broadcast_to(kernel, (H - 1, A, S, S))

    E = np.zeros((S, O))
    for j in range(2 * m):
        row = Hd[j // 2 + 1]
        support = np.flatnonzero(row > 0 if j % 2 == 0 else row < 0)
        for i in range(n + 1):
            for b in range(2):
                E[sidx[j, i, b], oidx[support, i, b]] = 1.0 / support.size
    emissions = np.broadcast_to(E, (H - 1, S, O))

    rewards = np.zeros((H - 1, O))
    rewards[-1, oidx[:, :, 1].ravel()] = 1.0

    b1 = np.zeros(S)
    b1[sidx[:, 0, 0]] = 1.0 / (2 * m)
    meta = {
        "generator": "hadamard-sat",
        "formula": {"num_vars": n, "clauses": [list(c) for c in formula.clauses]},
        "hadamard_size": K,
        "state_layout": {"order": ["clause_copy", "counter", "satisfied"], "shape": list(S_shape)},
        "observation_layout": {"order": ["symbol", "counter", "satisfied"], "shape": list(O_shape)},
        "unsat_value_bound": 1.0 - 1.0 / m,
    }
    meta["value_certificate"] = _certificate(formula, 1.0 - 1.0 / m)
    return check_valid(Pomdp(H, b1, transitions, emissions, rewards, meta))


# ---------------------------------------------------------------------------
# slow-contraction channel and random instances


def binary_channel(gamma: float) -> np.ndarray:
    return np.array([[0.5 + gamma, 0.5 - gamma], [0.5 - gamma, 0.5 + gamma]])


def gen_contraction_lb(gamma: float, horizon: int) -> Pomdp:
    """Two frozen states started in state 0, seen through a weakly biased binary channel.

    Any ``0 < gamma < 1/2`` gives a valid model; the slow-forgetting rate is
    only claimed for ``gamma < 1/10`` (``metadata["rate_regime"]``).
    """
    if not 0 < gamma < 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2), got {gamma}")
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    H = int(horizon)
    transitions = np.broadcast_to(np.eye(2), (H - 1, 1, 2, 2))
    emissions = np.broadcast_to(binary_channel(gamma), (H - 1, 2, 2))
    rewards = np.zeros((H - 1, 2))
    meta = {"generator": "contraction-lb", "gamma": gamma, "rate_regime": gamma < 0.1}
    return check_valid(Pomdp(H, [1.0, 0.0], transitions, emissions, rewards, meta))


def gen_random_observable(S: int, A: int, H: int, gamma0: float, seed: int = 0) -> Pomdp:
    """Random kernels and rewards with a noisy-identity channel of parameter ``gamma0``."""
    if not 0 < gamma0 <= 1:
        raise ValueError(f"gamma0 must lie in (0, 1], got {gamma0}")
    rng = np.random.default_rng(seed)
    b1 = rng.dirichlet(np.ones(S))
    transitions = rng.dirichlet(np.ones(S), size=(H - 1, A, S))
    rewards = rng.uniform(0.0, 1.0, size=(H - 1, S))
    emissions = np.broadcast_to(noisy_identity(S, gamma0), (H - 1, S, S))
    meta = {"generator": "random-observable", "gamma0": gamma0, "seed": seed}
    return check_valid(Pomdp(H, b1, transitions, emissions, rewards, meta))


def random_pomdp(S: int, A: int, O: int, H: int, seed: int = 0) -> Pomdp:
    """Everything random: Dirichlet(1) rows for all kernels, uniform rewards."""
    rng = np.random.default_rng(seed)
    b1 = rng.dirichlet(np.ones(S))
    transitions = rng.dirichlet(np.ones(S), size=(H - 1, A, S))
    emissions = rng.dirichlet(np.ones(O), size=(H - 1, S))
    rewards = rng.uniform(0.0, 1.0, size=(H - 1, O))
    meta = {"generator": "random", "seed": seed}
    return check_valid(Pomdp(H, b1, transitions, emissions, rewards, meta))


# ---------------------------------------------------------------------------
# worked examples

EXAMPLES = ("large-net", "divergence-increase", "no-linear-rate", "null-channel")


def _large_net(m=4):
    H = m
    S, A, O = m, m * m, m + 1
    kernel = np.zeros((A, S, S))
    for i in range(m):
        for j in range(m):
            a = i * m + j
            kernel[a] = np.eye(S)
            kernel[a, i] = 0.0
            kernel[a, i, j] = 1.0
    transitions = np.broadcast_to(kernel, (H - 1, A, S, S))
    emissions = np.broadcast_to(null_channel(S, 0.5), (H - 1, S, O))
    meta = {
        "claim": "every belief with entries in (1/m)Z is reachable through null observations, "
        "so covering reachable beliefs needs exponentially many points",
        "m": m,
        "action_layout": "action i*m+j moves state i to j and leaves other states fixed",
        "gamma": 0.5,
    }
    return Pomdp(H, np.full(S, 1.0 / S), transitions, emissions, np.zeros((H - 1, O)), meta)


def _divergence_increase(eps=0.1):
    if not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 1/2), got {eps}")
    E = np.array([[1 - eps, eps], [eps, 1 - eps]])
    b = [1 - eps**2, eps**2]
    meta = {
        "claim": "conditioning b and b_prime on the unlikely observation 1 increases KL(b || b_prime)",
        "eps": eps,
        "b": b,
        "b_prime": [0.5, 0.5],
    }
    return Pomdp(2, b, np.eye(2)[None, None], E[None], np.zeros((1, 2)), meta)


def _no_linear_rate(gamma=0.1, eps=0.1):
    if not 0 < gamma < 0.5:
        raise ValueError(f"gamma must lie in (0, 1/2), got {gamma}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    meta = {
        "claim": "one-step expected KL decrease is quadratic, not linear, in KL(b || b_prime)",
        "gamma": gamma,
        "eps": eps,
        "b": [1.0, 0.0],
        "b_prime": [1 - eps, eps],
    }
    return Pomdp(2, [1.0, 0.0], np.eye(2)[None, None], binary_channel(gamma)[None], np.zeros((1, 2)), meta)


def _null_channel_example(S=4, gamma=0.3, H=3):
    meta = {"claim": "observability equals the reveal probability", "gamma": gamma}
    return Pomdp(
        H,
        np.full(S, 1.0 / S),
        np.broadcast_to(np.eye(S), (H - 1, 1, S, S)),
        np.broadcast_to(null_channel(S, gamma), (H - 1, S, S + 1)),
        np.zeros((H - 1, S + 1)),
        meta,
    )


def gen_example(name: str, **params) -> Pomdp:
    """Named small example. Parameters: ``m`` (large-net), ``eps`` and ``gamma``."""
    builders = {
        "large-net": _large_net,
        "divergence-increase": _divergence_increase,
        "no-linear-rate": _no_linear_rate,
        "null-channel": _null_channel_example,
    }
    if name not in builders:
        raise UnknownExample(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    params = {k: v for k, v in params.items() if v is not None}
    pomdp = builders[name](**params)
    pomdp.metadata["example"] = name
    return check_valid(pomdp)
