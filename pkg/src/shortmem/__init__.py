"""Short-memory planning for observable POMDPs.

Submodules: ``model`` (POMDP container and files), ``belief`` (filtering and
divergences), ``exactplan`` (exact optimum and policy evaluation), ``smp``
(window-based planner), ``observability`` (the gamma parameter), ``lab``
(filter-stability experiments), ``gen`` (instance generators), ``cli``.
"""

__version__ = "0.1.0"

from .belief import approx_belief, belief_update, bayes_update, exact_belief
from .exactplan import eval_policy_exact, eval_policy_mc, solve_exact
from .model import HistoryWindow, Pomdp
from .observability import gamma_exact, observability_report
from .smp import SmpPolicy, smp_plan

__all__ = [
    "Pomdp",
    "HistoryWindow",
    "exact_belief",
    "approx_belief",
    "bayes_update",
    "belief_update",
    "solve_exact",
    "eval_policy_exact",
    "eval_policy_mc",
    "smp_plan",
    "SmpPolicy",
    "gamma_exact",
    "observability_report",
]
