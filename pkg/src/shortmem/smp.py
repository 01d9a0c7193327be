"""Short-memory planning: backward induction over windows of recent history.

At stage ``h`` the planner only sees the last ``t = min(L, h-1)`` actions
and observations. Each window is turned into a belief by filtering from a
uniform prior (from ``b_1`` when the window reaches step 1), and

    Q_h(w, a) = sum_y P(y | w, a) * (R_{h+1}(y) + V_{h+1}(shift(w, a, y)))
    V_h(w)    = max_a Q_h(w, a),         V_H = 0,

where ``shift`` appends ``(a, y)`` and drops the oldest step once the window
is longer than ``L``.

Window keys. A window with actions ``a_1..a_t`` (oldest first) and
observations ``o_1..o_t`` is stored under the integer

    key = (a_1 a_2 .. a_t in base A) * O**t + (o_1 .. o_t in base O),

most significant digit first. This is the row-major index into an array of
shape ``(A,)*t + (O,)*t``, so dense tables are plain arrays.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._lin import total, vecmat
from .belief import IMPOSSIBLE_MASS, approx_belief, window_prior
from .errors import BudgetExceeded, ImpossibleObservation, ModelFormatError
from .exactplan import DEFAULT_BUDGET, eval_policy_exact, history_tree, solve_exact
from .model import HistoryWindow, Pomdp, check_valid

DEFAULT_TABLE_BUDGET = 10**8
CHUNK = 4096


# ---------------------------------------------------------------------------
# key packing


def pack_key(actions, observations, A: int, O: int) -> int:
    ka = 0
    for a in actions:
        ka = ka * A + int(a)
    ko = 0
    for o in observations:
        ko = ko * O + int(o)
    return ka * O ** len(observations) + ko


def unpack_key(key: int, t: int, A: int, O: int):
    ka, ko = divmod(int(key), O**t)
    obs, acts = [], []
    for _ in range(t):
        ko, o = divmod(ko, O)
        obs.append(o)
        ka, a = divmod(ka, A)
        acts.append(a)
    return tuple(reversed(acts)), tuple(reversed(obs))


def _unpack_many(keys, t, A, O):
    """Digit arrays ``(actions (N, t), observations (N, t))`` for packed keys."""
    keys = np.asarray(keys, dtype=np.int64)
    ka, ko = np.divmod(keys, np.int64(O) ** t)
    acts = np.zeros((keys.size, t), dtype=np.int64)
    obs = np.zeros((keys.size, t), dtype=np.int64)
    for k in range(t - 1, -1, -1):
        ka, acts[:, k] = np.divmod(ka, A)
        ko, obs[:, k] = np.divmod(ko, O)
    return acts, obs


def window_length(L: int, h: int) -> int:
    return min(L, h - 1)


def _shift_keys(keys, t, t_next, A, O):
    """Keys of ``shift(w, a, y)`` for each window key, as an array (N, A, O)."""
    keys = np.asarray(keys, dtype=np.int64)
    if t_next == 0:
        return np.zeros((keys.size, A, O), dtype=np.int64)
    Ot = np.int64(O) ** t
    ka, ko = np.divmod(keys, Ot)
    if t_next == t:  # drop the oldest step
        ka = ka % (np.int64(A) ** (t - 1)) if t > 0 else ka
        ko = ko % (np.int64(O) ** (t - 1)) if t > 0 else ko
    a = np.arange(A, dtype=np.int64)
    y = np.arange(O, dtype=np.int64)
    ka2 = ka[:, None, None] * A + a[None, :, None]
    ko2 = ko[:, None, None] * O + y[None, None, :]
    return ka2 * np.int64(O) ** t_next + ko2


# ---------------------------------------------------------------------------
# batched window beliefs


def _batch_vecmat(B, M):
    """Row-wise ``B[n] @ M[n]`` for ``B`` (N, S), ``M`` (N, S, K); same arithmetic as ``vecmat``."""
    acc = B[:, 0, None] * M[:, 0]
    for i in range(1, M.shape[1]):
        acc += B[:, i, None] * M[:, i]
    return acc


def window_beliefs(pomdp: Pomdp, h: int, acts, obs):
    """Approximate beliefs for windows ending at stage ``h``.

    ``acts``/``obs`` are (N, t) digit arrays. Returns ``(beliefs (N, S), valid)``
    where ``valid`` is False for windows with zero probability under the prior.
    """
    N, t = acts.shape
    S = pomdp.num_states
    start = h - t
    B = np.broadcast_to(window_prior(pomdp, start), (N, S)).astype(float)
    valid = np.ones(N, dtype=bool)
    for k in range(t):
        step = start + k
        T = pomdp.transitions[step - 1]  # (A, S, S)
        pred = _batch_vecmat(B, T[acts[:, k]])
        unnorm = pred * pomdp.emission(step + 1).T[obs[:, k]]
        mass = total(unnorm)
        ok = mass > IMPOSSIBLE_MASS
        valid &= ok
        B = np.where(ok[:, None], unnorm / np.where(ok, mass, 1.0)[:, None], 0.0)
    return B, valid


# ---------------------------------------------------------------------------
# policy object


@dataclass
class StageTable:
    keys: np.ndarray  # sorted int64
    actions: np.ndarray  # int
    q: np.ndarray  # (N, A)

    def __eq__(self, other):
        if not isinstance(other, StageTable):
            return NotImplemented
        return (np.array_equal(self.keys, other.keys) and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.q, other.q))

    def lookup(self, key):
        i = np.searchsorted(self.keys, key)
        if i < self.keys.size and self.keys[i] == key:
            return int(i)
        return None

    @property
    def values(self):
        return self.q.max(axis=1) if self.q.size else np.zeros(0)


@dataclass
class SmpPolicy:
    window_length: int
    horizon: int
    num_actions: int
    num_observations: int
    value_estimate: float
    mode: str
    stages: list  # StageTable for h = 1..H-1
    pomdp: Pomdp | None = field(default=None, repr=False, compare=False)
    fallbacks: int = field(default=0, compare=False)

    def table(self, h: int) -> StageTable:
        return self.stages[h - 1]

    def next_value(self, h: int, key: int) -> float | None:
        """Stored V-hat at stage ``h`` for ``key``; 0 at the horizon; None if missing."""
        if h == self.horizon:
            return 0.0
        tab = self.table(h)
        i = tab.lookup(key)
        return None if i is None else float(tab.q[i].max())

    def act(self, actions, observations) -> int:
        return smp_act(self, self.pomdp, actions, observations)[0]

    __call__ = act

    def to_dict(self):
        return {
            "window_length": self.window_length,
            "horizon": self.horizon,
            "num_actions": self.num_actions,
            "num_observations": self.num_observations,
            "mode": self.mode,
            "value_estimate": self.value_estimate,
            "key_encoding": "actions base-A then observations base-O, oldest digit most significant",
            "stages": [
                {
                    "stage": h,
                    "keys": [int(k) for k in tab.keys],
                    "actions": [int(a) for a in tab.actions],
                    "q": [[float(v) for v in row] for row in tab.q],
                }
                for h, tab in enumerate(self.stages, start=1)
            ],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d, path=None):
        try:
            stages = []
            for st in d["stages"]:
                q = np.asarray(st.get("q", []), dtype=float).reshape(len(st["keys"]), -1)
                stages.append(StageTable(np.asarray(st["keys"], dtype=np.int64),
                                         np.asarray(st["actions"], dtype=int), q))
            return cls(int(d["window_length"]), int(d["horizon"]), int(d["num_actions"]),
                       int(d["num_observations"]), float(d["value_estimate"]), d.get("mode", "dense"),
                       stages)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed policy file: {exc}", path) from None

    @classmethod
    def load(cls, path, pomdp=None):
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", path) from None
        pol = cls.from_dict(d, path)
        pol.pomdp = pomdp
        return pol


# ---------------------------------------------------------------------------
# planning


def dense_entry_estimate(pomdp: Pomdp, L: int) -> int:
    H, A, O = pomdp.horizon, pomdp.num_actions, pomdp.num_observations
    return (A * O) ** min(L, H - 1) * H * A * O


def _stage_q(pomdp, h, keys, t, t_next, next_table, threads):
    """Q-values for the given windows of stage ``h``; chunked, order-preserving."""
    A, O = pomdp.num_actions, pomdp.num_observations
    R = pomdp.reward(h + 1)
    E = pomdp.emission(h + 1)

    def work(lo):
        ks = keys[lo : lo + CHUNK]
        acts, obs = _unpack_many(ks, t, A, O)
        B, valid = window_beliefs(pomdp, h, acts, obs)
        nk = _shift_keys(ks, t, t_next, A, O)
        q = np.zeros((ks.size, A))
        for a in range(A):
            pred = vecmat(B, pomdp.transition(h, a))
            py = vecmat(pred, E)
            if next_table is None:
                vn = np.zeros_like(py)
            else:
                vn = _lookup_values(next_table, nk[:, a, :], py)
            terms = np.where(py > IMPOSSIBLE_MASS, py * (R[None, :] + vn), 0.0)
            q[:, a] = total(terms)
        q[~valid] = 0.0
        return q, valid

    starts = range(0, keys.size, CHUNK)
    if threads > 1 and keys.size > CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    q = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, A))
    valid = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=bool)
    return q, valid


def _lookup_values(table: StageTable, keys, py):
    idx = np.searchsorted(table.keys, keys)
    idx_c = np.minimum(idx, table.keys.size - 1)
    found = table.keys[idx_c] == keys
    needed = py > IMPOSSIBLE_MASS
    if np.any(needed & ~found):
        raise AssertionError("successor window missing from the next stage table")
    vals = table.q.max(axis=1)[idx_c]
    return np.where(found, vals, 0.0)


def _reachable_keys(pomdp, L):
    """Windows generated forward from the empty window through positive-probability steps."""
    A, O, H = pomdp.num_actions, pomdp.num_observations, pomdp.horizon
    out = [np.zeros(1, dtype=np.int64)]
    for h in range(1, H - 1):
        keys = out[-1]
        t, t_next = window_length(L, h), window_length(L, h + 1)
        nxt = []
        for lo in range(0, keys.size, CHUNK):
            ks = keys[lo : lo + CHUNK]
            acts, obs = _unpack_many(ks, t, A, O)
            B, valid = window_beliefs(pomdp, h, acts, obs)
            nk = _shift_keys(ks, t, t_next, A, O)
            for a in range(A):
                py = vecmat(vecmat(B, pomdp.transition(h, a)), pomdp.emission(h + 1))
                ok = (py > IMPOSSIBLE_MASS) & valid[:, None]
                nxt.append(nk[:, a, :][ok])
        out.append(np.unique(np.concatenate(nxt)) if nxt else np.zeros(0, dtype=np.int64))
    return out


def smp_plan(pomdp: Pomdp, L: int, mode: str = "dense", budget=DEFAULT_TABLE_BUDGET, threads: int = 1) -> SmpPolicy:
    """Plan with windows of length ``L``; ``mode`` is ``"dense"`` or ``"reachable"``."""
    if L < 0:
        raise ValueError("window length must be nonnegative")
    if mode not in ("dense", "reachable"):
        raise ValueError(f"unknown mode {mode!r}")
    check_valid(pomdp)
    A, O, H = pomdp.num_actions, pomdp.num_observations, pomdp.horizon
    if mode == "dense":
        need = dense_entry_estimate(pomdp, L)
        if need > budget:
            raise BudgetExceeded("dense window table entries", need, budget)
        stage_keys = [np.arange((A * O) ** window_length(L, h), dtype=np.int64) for h in range(1, H)]
    else:
        stage_keys = _reachable_keys(pomdp, L)
        need = sum(k.size for k in stage_keys) * A * O
        if need > budget:
            raise BudgetExceeded("reachable window table entries", need, budget)

    stages = [None] * (H - 1)
    next_table = None
    for h in range(H - 1, 0, -1):
        keys = stage_keys[h - 1]
        q, _ = _stage_q(pomdp, h, keys, window_length(L, h), window_length(L, h + 1), next_table, threads)
        tab = StageTable(keys, np.argmax(q, axis=1) if q.size else np.zeros(0, dtype=int), q)
        stages[h - 1] = tab
        next_table = tab
    value = float(stages[0].q[0].max())
    return SmpPolicy(L, H, A, O, value, mode, stages, pomdp)


def _fallback_belief(pomdp, w):
    # drop the oldest steps until the window has positive probability under its prior
    for k in range(w.length + 1):
        short = HistoryWindow(w.stage, w.actions[k:], w.observations[k:])
        try:
            return approx_belief(pomdp, short)
        except ImpossibleObservation:
            continue
    raise AssertionError("empty window cannot be impossible")


def smp_act(policy: SmpPolicy, pomdp, actions, observations):
    """Action for a full history; returns ``(action, used_fallback)``.

    Missing windows (reachable mode, off-support play) get a one-step greedy
    action on the recomputed window belief (oldest steps dropped while the
    window is impossible under its prior), scored with the stored next-stage
    values (successors missing there count as 0).
    """
    actions, observations = tuple(actions), tuple(observations)
    h = len(actions) + 1
    if not 1 <= h < policy.horizon:
        raise ValueError(f"no decision at stage {h}")
    t = window_length(policy.window_length, h)
    w = HistoryWindow.from_history(actions, observations, t)
    A, O = policy.num_actions, policy.num_observations
    key = pack_key(w.actions, w.observations, A, O)
    tab = policy.table(h)
    i = tab.lookup(key)
    if i is not None:
        return int(tab.actions[i]), False
    if pomdp is None:
        raise ValueError("window missing from policy table and no model given for the fallback")
    policy.fallbacks += 1
    b = _fallback_belief(pomdp, w)
    t_next = window_length(policy.window_length, h + 1)
    nk = _shift_keys(np.array([key], dtype=np.int64), t, t_next, A, O)[0]
    R = pomdp.reward(h + 1)
    q = np.zeros(A)
    for a in range(A):
        py = vecmat(vecmat(b, pomdp.transition(h, a)), pomdp.emission(h + 1))
        acc = 0.0
        for y in range(O):
            if py[y] > IMPOSSIBLE_MASS:
                v = policy.next_value(h + 1, int(nk[a, y]))
                acc += py[y] * (R[y] + (v or 0.0))
        q[a] = acc
    return int(np.argmax(q)), True


# ---------------------------------------------------------------------------
# belief error and suboptimality


def belief_error_profile(pomdp: Pomdp, policy, L: int, budget=DEFAULT_BUDGET) -> np.ndarray:
    """``err[h-1] = E ||b_h - bhat_h||_1`` under ``policy`` for ``h = 1..H``, exactly."""
    err = np.zeros(pomdp.horizon)
    for h, acts, obs, prob, b in history_tree(pomdp, policy, budget):
        w = HistoryWindow.from_history(acts, obs, window_length(L, h))
        bh = approx_belief(pomdp, w)
        err[h - 1] += prob * float(np.abs(b - bh).sum())
    return err


def epsilon_hat(pomdp: Pomdp, L: int, policies, budget=DEFAULT_BUDGET) -> float:
    """Max over decision stages and the given policies of the expected belief error."""
    H = pomdp.horizon
    return max(float(belief_error_profile(pomdp, pi, L, budget)[: H - 1].max()) for pi in policies)


@dataclass
class SuboptimalityRow:
    L: int
    value_estimate: float | None = None
    policy_value: float | None = None
    optimal_value: float | None = None
    gap: float | None = None
    epsilon_hat: float | None = None
    bound: float | None = None
    error: str | None = None


def suboptimality_report(pomdp: Pomdp, L_values, mode="dense", budget=DEFAULT_BUDGET,
                         table_budget=DEFAULT_TABLE_BUDGET, threads=1, with_bound=True):
    """One row per window length: planner estimate, exact value of the executed policy, optimum, gap.

    The bound column is ``2 H^2 eps_hat`` with ``eps_hat`` the exact worst-stage
    belief error under the optimal and the executed policy.
    """
    H = pomdp.horizon
    try:
        v_star, pi_star = solve_exact(pomdp, budget)
    except BudgetExceeded:
        v_star, pi_star = None, None
    rows = []
    for L in L_values:
        row = SuboptimalityRow(int(L))
        try:
            pol = smp_plan(pomdp, L, mode, table_budget, threads)
            row.value_estimate = pol.value_estimate
            row.policy_value = eval_policy_exact(pomdp, pol, budget)
            if v_star is not None:
                row.optimal_value = v_star
                row.gap = v_star - row.policy_value
                if with_bound:
                    row.epsilon_hat = epsilon_hat(pomdp, L, [pi_star, pol], budget)
                    row.bound = 2 * H * H * row.epsilon_hat
        except BudgetExceeded as exc:
            row.error = str(exc)
        rows.append(row)
    return rows


REPORT_COLUMNS = ("L", "value_estimate", "policy_value", "optimal_value", "gap", "epsilon_hat", "bound", "error")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def recompute_q(policy: SmpPolicy, pomdp: Pomdp, h: int, index: int) -> np.ndarray:
    """Q-vector of one stored entry, recomputed from the stored next-stage table (audit)."""
    tab = policy.table(h)
    L = policy.window_length
    nxt = policy.table(h + 1) if h + 1 < policy.horizon else None
    q, _ = _stage_q(pomdp, h, tab.keys[index : index + 1], window_length(L, h), window_length(L, h + 1), nxt, 1)
    return q[0]

