"""Bayes filtering on tabular POMDPs and the divergences used to measure it.

All functions take and return plain probability vectors (``np.ndarray`` of
length S); :class:`~shortmem.model.Belief` instances are accepted as input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._lin import total, vecmat
from .errors import ImpossibleObservation
from .model import Belief, HistoryWindow, Pomdp

#: Predictive mass at or below which an observation counts as impossible.
IMPOSSIBLE_MASS = 1e-300


def _probs(b):
    return b.probs if isinstance(b, Belief) else np.asarray(b, dtype=float)


def obs_dist(pomdp: Pomdp, b, h: int) -> np.ndarray:
    """Distribution of the step-``h`` observation when the state is drawn from ``b``."""
    return vecmat(_probs(b), pomdp.emission(h))


def predict(pomdp: Pomdp, b, h: int, a: int) -> np.ndarray:
    """Push ``b`` through the step-``h`` transition kernel of action ``a``."""
    return vecmat(_probs(b), pomdp.transition(h, a))


def bayes_update(pomdp: Pomdp, b, h: int, y: int) -> np.ndarray:
    """Condition a step-``h`` state distribution on observation ``y``.

    Raises :class:`ImpossibleObservation` when ``y`` has no mass under ``b``.
    """
    unnorm = _probs(b) * pomdp.emission(h)[:, y]
    mass = total(unnorm)
    if not mass > IMPOSSIBLE_MASS:
        raise ImpossibleObservation(h, int(y), float(mass))
    return unnorm / mass


def belief_update(pomdp: Pomdp, b, h: int, a: int, y: int) -> np.ndarray:
    """Act with ``a`` at step ``h``, then condition on ``y`` seen at step ``h + 1``."""
    return bayes_update(pomdp, predict(pomdp, b, h, a), h + 1, y)


def filter_from(pomdp: Pomdp, prior, start: int, actions, observations) -> np.ndarray:
    """Run the filter from ``prior`` at step ``start`` through the given suffix."""
    b = _probs(prior)
    for k, (a, y) in enumerate(zip(actions, observations)):
        b = belief_update(pomdp, b, start + k, a, y)
    return b


def exact_belief(pomdp: Pomdp, actions=(), observations=()) -> np.ndarray:
    """Posterior over the state at step ``len(actions) + 1`` given the full history."""
    if len(actions) != len(observations):
        raise ValueError("history needs as many actions as observations")
    return filter_from(pomdp, pomdp.initial_belief, 1, actions, observations)


def window_prior(pomdp: Pomdp, start: int) -> np.ndarray:
    """Prior used by approximate beliefs whose window begins at step ``start``."""
    if start == 1:
        return pomdp.initial_belief
    S = pomdp.num_states
    return np.full(S, 1.0 / S)


def approx_belief(pomdp: Pomdp, window: HistoryWindow) -> np.ndarray:
    """Approximate belief computed from the window alone, starting from a uniform prior.

    When the window reaches back to step 1 the true initial distribution is used,
    so the result coincides with :func:`exact_belief`.
    """
    start = window.stage - window.length
    return filter_from(pomdp, window_prior(pomdp, start), start, window.actions, window.observations)


# ---------------------------------------------------------------------------
# divergences


class DivergenceKind(str, Enum):
    TV = "TV"
    KL = "KL"
    CHI2 = "CHI2"
    RENYI2 = "RENYI2"
    HELLINGER2 = "HELLINGER2"
    LINF_RATIO = "LINF_RATIO"


@dataclass(frozen=True)
class Divergence:
    kind: DivergenceKind
    value: float

    def __float__(self):
        return float(self.value)


def f_kl(x):
    """``x - log x - 1``; nonnegative and convex on (0, inf)."""
    x = np.asarray(x, dtype=float)
    return x - np.log(x) - 1.0


def tv(P, Q) -> float:
    return 0.5 * float(total(np.abs(np.asarray(P, float) - np.asarray(Q, float))))


def kl(P, Q) -> float:
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    pos = P > 0
    if np.any(pos & (Q <= 0)):
        return math.inf
    terms = np.zeros_like(P)
    terms[pos] = P[pos] * np.log(P[pos] / Q[pos])
    return max(0.0, float(total(terms)))


def chi2(P, Q) -> float:
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    if np.any((P > 0) & (Q <= 0)):
        return math.inf
    sup = Q > 0
    terms = np.zeros_like(P)
    # sum (P-Q)^2/Q rather than sum P^2/Q - 1: exact zero at P == Q, no cancellation
    terms[sup] = (P[sup] - Q[sup]) ** 2 / Q[sup]
    return float(total(terms))


def renyi2(P, Q) -> float:
    c = chi2(P, Q)
    return math.inf if math.isinf(c) else math.log1p(c)


def hellinger2(P, Q) -> float:
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    return max(0.0, 1.0 - float(total(np.sqrt(P * Q))))


def linf_ratio(P, Q) -> float:
    """``max_x P(x)/Q(x)`` over the union of supports; inf if P puts mass where Q has none."""
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    if np.any((P > 0) & (Q <= 0)):
        return math.inf
    sup = Q > 0
    return float(np.max(P[sup] / Q[sup]))


_DIVERGENCES = {
    DivergenceKind.TV: tv,
    DivergenceKind.KL: kl,
    DivergenceKind.CHI2: chi2,
    DivergenceKind.RENYI2: renyi2,
    DivergenceKind.HELLINGER2: hellinger2,
    DivergenceKind.LINF_RATIO: linf_ratio,
}


def divergence(kind, P, Q) -> Divergence:
    kind = DivergenceKind(kind)
    P, Q = _probs(P), _probs(Q)
    if P.shape != Q.shape:
        raise ValueError(f"length mismatch: {P.shape} vs {Q.shape}")
    return Divergence(kind, _DIVERGENCES[kind](P, Q))


def renyi_potential(P, Q) -> float:
    """``sqrt(exp(D2(P||Q)/4) - 1)``, the quantity that contracts under Bayes updates."""
    d = renyi2(P, Q)
    if math.isinf(d):
        return math.inf
    return math.sqrt(max(0.0, math.expm1(d / 4.0)))
