"""Tabular finite-horizon POMDP: data model, validation and JSON file format.

Steps are 1-based as in the planning literature: actions are taken at steps
``h = 1 .. H-1`` and observations/rewards arrive at steps ``h = 2 .. H``.
Arrays are 0-based, so

* ``transitions[i]`` holds the kernels used at step ``h = i + 1``,
* ``emissions[i]`` and ``rewards[i]`` belong to step ``h = i + 2``.

``transitions[i, a, x, x2]`` is the probability of moving from ``x`` to
``x2`` under action ``a``; ``emissions[i, x, y]`` the probability of
observing ``y`` in state ``x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ModelFormatError, ShapeError, ValidationError

#: Tolerance on row sums of stochastic arrays.
STOCHASTIC_TOL = 1e-9

# Rows off by less than this are left untouched on load, so that
# load(save(m)) reproduces m bit-for-bit.
_RENORMALIZE_FLOOR = 1e-12

FORMAT_KEYS = (
    "horizon",
    "num_states",
    "num_actions",
    "num_observations",
    "initial_belief",
    "transitions",
    "emissions",
    "rewards",
)


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.where}: {self.detail}"


@dataclass(eq=False)
class Pomdp:
    horizon: int
    initial_belief: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    rewards: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.horizon = int(self.horizon)
        self.initial_belief = np.asarray(self.initial_belief, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.emissions = np.asarray(self.emissions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        for arr in (self.initial_belief, self.transitions, self.emissions, self.rewards):
            arr.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.initial_belief.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_observations(self) -> int:
        return self.emissions.shape[2]

    @property
    def shape(self):
        """``(H, S, A, O)``."""
        return self.horizon, self.num_states, self.num_actions, self.num_observations

    # step-indexed accessors
    def transition(self, h: int, a: int) -> np.ndarray:
        """Kernel used when acting at step ``h`` (1 <= h <= H-1)."""
        return self.transitions[h - 1, a]

    def emission(self, h: int) -> np.ndarray:
        """Observation matrix of step ``h`` (2 <= h <= H)."""
        return self.emissions[h - 2]

    def reward(self, h: int) -> np.ndarray:
        return self.rewards[h - 2]

    def __eq__(self, other):
        if not isinstance(other, Pomdp):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.initial_belief, other.initial_belief)
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.emissions, other.emissions)
            and np.array_equal(self.rewards, other.rewards)
        )

    def validate(self) -> list[Violation]:
        return validate(self)


def _check_simplex_rows(arr, name, index_names, out):
    arr = np.asarray(arr)
    neg = np.argwhere(arr < 0)
    for idx in neg[:50]:
        where = ", ".join(f"{n}={i}" for n, i in zip(index_names, idx))
        out.append(Violation("negative", f"{name}({where})", f"entry {arr[tuple(idx)]!r}"))
    sums = arr.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_TOL)
    for idx in bad:
        where = ", ".join(f"{n}={i}" for n, i in zip(index_names, idx))
        out.append(Violation("row-sum", f"{name}({where})", f"sums to {sums[tuple(idx)]!r}"))


def validate(pomdp: Pomdp) -> list[Violation]:
    """Return every invariant violation of ``pomdp``; an empty list means valid.

    Locations use 1-based step indices, e.g. ``transitions(h=1, a=0, x=0)``.
    """
    out: list[Violation] = []
    H = pomdp.horizon
    b1, T, E, R = pomdp.initial_belief, pomdp.transitions, pomdp.emissions, pomdp.rewards
    if H < 2:
        out.append(Violation("horizon", "horizon", f"H={H} < 2"))
    if b1.ndim != 1 or b1.shape[0] < 1:
        out.append(Violation("shape", "initial_belief", f"shape {b1.shape}"))
        return out
    S = b1.shape[0]
    expected = {
        "transitions": (H - 1, T.shape[1] if T.ndim == 4 else -1, S, S),
        "emissions": (H - 1, S, E.shape[2] if E.ndim == 3 else -1),
        "rewards": (H - 1, E.shape[2] if E.ndim == 3 else -1),
    }
    shape_ok = True
    for name, arr in (("transitions", T), ("emissions", E), ("rewards", R)):
        if arr.shape != expected[name] or min(arr.shape, default=0) < 1:
            out.append(Violation("shape", name, f"shape {arr.shape}, expected {expected[name]}"))
            shape_ok = False
    if not shape_ok:
        return out

    if np.any(b1 < 0) or abs(b1.sum() - 1.0) > STOCHASTIC_TOL:
        out.append(Violation("distribution", "initial_belief", f"sum {b1.sum()!r}, min {b1.min()!r}"))
    # step-indexed locations: transitions index i -> h=i+1, emissions index i -> h=i+2
    tmp: list[Violation] = []
    _check_simplex_rows(T, "transitions", ("i", "a", "x"), tmp)
    for v in tmp:
        out.append(_reindex(v, "i", 1))
    tmp = []
    _check_simplex_rows(E, "emissions", ("i", "x"), tmp)
    for v in tmp:
        out.append(_reindex(v, "i", 2))
    for i, o in np.argwhere((R < 0) | (R > 1) | ~np.isfinite(R)):
        out.append(Violation("range", f"rewards(h={i + 2}, o={o})", f"value {R[i, o]!r} outside [0, 1]"))
    return out


def _reindex(v: Violation, key: str, offset: int) -> Violation:
    name, _, rest = v.where.partition("(")
    parts = []
    for part in rest.rstrip(")").split(", "):
        k, _, val = part.partition("=")
        parts.append(f"h={int(val) + offset}" if k == key else part)
    return Violation(v.kind, f"{name}({', '.join(parts)})", v.detail)


def check_valid(pomdp: Pomdp) -> Pomdp:
    violations = validate(pomdp)
    if violations:
        raise ValidationError(violations)
    return pomdp


# ---------------------------------------------------------------------------
# file format


def to_dict(pomdp: Pomdp) -> dict[str, Any]:
    H, S, A, O = pomdp.shape
    d = {
        "horizon": H,
        "num_states": S,
        "num_actions": A,
        "num_observations": O,
        "initial_belief": pomdp.initial_belief.tolist(),
        "transitions": pomdp.transitions.tolist(),
        "emissions": pomdp.emissions.tolist(),
        "rewards": pomdp.rewards.tolist(),
    }
    if pomdp.metadata:
        d["metadata"] = pomdp.metadata
    return d


def save(pomdp: Pomdp, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_dict(pomdp), f, separators=(",", ":"), sort_keys=False)
        f.write("\n")


def _nested_array(value, shape: Sequence[int], name: str, path, dims: Sequence[str]):
    """Convert a nested list to an array, naming the first offending level."""

    def walk(v, depth, prefix):
        if depth == len(shape):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                if isinstance(v, list) and name == "rewards":
                    raise ModelFormatError(
                        "rewards must be a function of observations only "
                        f"(got a nested list at {prefix})",
                        path,
                    )
                raise ModelFormatError(f"{prefix} must be a number, got {type(v).__name__}", path)
            return
        if not isinstance(v, list):
            raise ShapeError(f"{prefix} must be an array of length {shape[depth]}", path)
        if len(v) != shape[depth]:
            raise ShapeError(f"{prefix} has length {len(v)}, expected {shape[depth]}", path)
        label = prefix + f"[{dims[depth]}]"
        for item in v:
            walk(item, depth + 1, label)

    walk(value, 0, name)
    return np.array(value, dtype=float)


def from_dict(d: dict, path=None, *, validate_model: bool = True) -> Pomdp:
    if not isinstance(d, dict):
        raise ModelFormatError("top-level JSON value must be an object", path)
    missing = [k for k in FORMAT_KEYS if k not in d]
    if missing:
        raise ModelFormatError(f"missing keys: {', '.join(missing)}", path)
    try:
        H, S, A, O = (int(d[k]) for k in ("horizon", "num_states", "num_actions", "num_observations"))
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"sizes must be integers ({exc})", path) from None
    if H < 2 or min(S, A, O) < 1:
        raise ModelFormatError(f"invalid sizes H={H}, S={S}, A={A}, O={O}", path)
    b1 = _nested_array(d["initial_belief"], (S,), "initial_belief", path, ("x",))
    T = _nested_array(d["transitions"], (H - 1, A, S, S), "transitions", path, ("h", "a", "x", "x2"))
    E = _nested_array(d["emissions"], (H - 1, S, O), "emissions", path, ("h", "x", "y"))
    R = _nested_array(d["rewards"], (H - 1, O), "rewards", path, ("h", "o"))

    b1 = _renormalize(b1)
    T = _renormalize(T)
    E = _renormalize(E)
    pomdp = Pomdp(H, b1, T, E, R, metadata=dict(d.get("metadata") or {}))
    if validate_model:
        check_valid(pomdp)
    return pomdp


def _renormalize(arr: np.ndarray) -> np.ndarray:
    sums = arr.sum(axis=-1, keepdims=True)
    drift = np.abs(sums - 1.0)
    fix = (drift > _RENORMALIZE_FLOOR) & (drift <= STOCHASTIC_TOL)
    if np.any(fix):
        arr = np.where(fix, arr / np.where(fix, sums, 1.0), arr)
    return arr


def load(path, *, validate_model: bool = True) -> Pomdp:
    path = str(path)
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ModelFormatError(str(exc), path) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}", path) from None
    return from_dict(d, path, validate_model=validate_model)


# ---------------------------------------------------------------------------
# small value types


@dataclass(frozen=True)
class Belief:
    step: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError(f"not a probability vector: {p!r}")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class HistoryWindow:
    """Suffix ``(a_{h-t}, .., a_{h-1})``, ``(o_{h-t+1}, .., o_h)`` anchored at stage ``h``."""

    stage: int
    actions: tuple = ()
    observations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "observations", tuple(int(o) for o in self.observations))
        if len(self.actions) != len(self.observations):
            raise ValueError("window needs as many actions as observations")
        if len(self.actions) > self.stage - 1:
            raise ValueError(f"window of length {len(self.actions)} does not fit before stage {self.stage}")

    @property
    def length(self) -> int:
        return len(self.actions)

    @classmethod
    def from_history(cls, actions, observations, length=None):
        """Window made of the last ``length`` steps of a full history."""
        actions, observations = tuple(actions), tuple(observations)
        stage = len(actions) + 1
        t = len(actions) if length is None else min(length, len(actions))
        if t == 0:
            return cls(stage)
        return cls(stage, actions[-t:], observations[-t:])


@dataclass
class Trajectory:
    states: list
    actions: list
    observations: list
    rewards: list

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))
