"""Small dense two-phase simplex solver.

Written for the tiny LPs that arise when computing observability exactly
(tens of variables). Bland's rule guarantees termination on degenerate
problems, which are the norm here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, MaxIterations, Unbounded

PIVOT_TOL = 1e-10
# pivot elements below this fraction of the column's largest entry are refused
REL_PIVOT_TOL = 1e-8
FEAS_TOL = 1e-9


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    iterations: int
    # standard-form certificate: basis indices and reduced costs at the optimum
    basis: np.ndarray
    reduced_costs: np.ndarray
    standard_A: np.ndarray
    standard_b: np.ndarray
    standard_x: np.ndarray


class _Tableau:
    def __init__(self, A, b, max_iter):
        m, n = A.shape
        self.m, self.n = m, n
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = np.full(m, -1, dtype=int)
        self.max_iter = max_iter
        self.iterations = 0

    def set_objective(self, c):
        """Load cost vector ``c`` and price out the current basis."""
        n = self.n
        self.T[-1, :n] = c
        self.T[-1, n] = 0.0
        for i, j in enumerate(self.basis):
            if self.T[-1, j] != 0.0:
                self.T[-1] -= self.T[-1, j] * self.T[i]

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j

    def run(self, allowed):
        """Minimise the loaded objective; ``allowed`` masks columns that may enter."""
        T, m, n = self.T, self.m, self.n
        while True:
            rc = T[-1, :n]
            cand = np.flatnonzero((rc < -PIVOT_TOL) & allowed)
            if cand.size == 0:
                return
            if self.iterations >= self.max_iter:
                raise MaxIterations(f"simplex did not finish within {self.max_iter} pivots")
            j = cand[0]  # Bland: lowest index
            col = T[:m, j]
            rows = np.flatnonzero(col > max(PIVOT_TOL, REL_PIVOT_TOL * np.abs(col).max(initial=0.0)))
            if rows.size == 0:
                raise Unbounded(f"objective unbounded along column {j}")
            ratios = T[rows, n] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
            r = tied[np.argmin(self.basis[tied])]  # Bland: lowest basic index leaves
            self.pivot(r, j)
            self.iterations += 1


def _to_standard(c, A_ub, b_ub, A_eq, b_eq, bounds):
    c = np.asarray(c, dtype=float)
    nv = c.shape[0]
    A_ub = np.zeros((0, nv)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).ravel()
    A_eq = np.zeros((0, nv)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
    if bounds is None:
        bounds = [(0.0, None)] * nv
    elif len(bounds) == 2 and not isinstance(bounds[0], (tuple, list)):
        bounds = [tuple(bounds)] * nv

    # x = shift + M @ z with z >= 0
    cols, shift = [], np.zeros(nv)
    upper_rows = []
    for i, (lo, hi) in enumerate(bounds):
        if lo is None and hi is None:
            cols.append((i, 1.0))
            cols.append((i, -1.0))
        elif lo is None:  # x = hi - z
            shift[i] = hi
            cols.append((i, -1.0))
        else:
            shift[i] = lo
            cols.append((i, 1.0))
            if hi is not None:
                upper_rows.append((len(cols) - 1, hi - lo))
    M = np.zeros((nv, len(cols)))
    for k, (i, s) in enumerate(cols):
        M[i, k] = s
    nz = M.shape[1]

    ub_A = A_ub @ M
    ub_b = b_ub - A_ub @ shift
    if upper_rows:
        extra = np.zeros((len(upper_rows), nz))
        for r, (k, cap) in enumerate(upper_rows):
            extra[r, k] = 1.0
        ub_A = np.vstack([ub_A, extra])
        ub_b = np.concatenate([ub_b, [cap for _, cap in upper_rows]])
    eq_A = A_eq @ M
    eq_b = b_eq - A_eq @ shift

    n_slack = ub_A.shape[0]
    A = np.zeros((n_slack + eq_A.shape[0], nz + n_slack))
    A[:n_slack, :nz] = ub_A
    A[:n_slack, nz:] = np.eye(n_slack)
    A[n_slack:, :nz] = eq_A
    b = np.concatenate([ub_b, eq_b])
    cost = np.concatenate([M.T @ c, np.zeros(n_slack)])
    return A, b, cost, M, shift, float(c @ shift)


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, max_iter=None) -> LpResult:
    """Minimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and bounds.

    ``bounds`` is a list of ``(lo, hi)`` pairs (``None`` for unbounded sides),
    defaulting to ``x >= 0``. Raises :class:`Infeasible`, :class:`Unbounded` or
    :class:`MaxIterations`.
    """
    A, b, cost, M, shift, offset = _to_standard(c, A_ub, b_ub, A_eq, b_eq, bounds)
    m, n = A.shape
    if max_iter is None:
        max_iter = 1000 * max(1, m) * max(1, n)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1 with one artificial per row
    tab = _Tableau(np.hstack([A, np.eye(m)]), b, max_iter)
    tab.basis[:] = np.arange(n, n + m)
    tab.set_objective(np.concatenate([np.zeros(n), np.ones(m)]))
    tab.run(np.ones(n + m, dtype=bool))
    if -tab.T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        raise Infeasible(f"phase-1 residual {-tab.T[-1, -1]:.3g}")

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= n:
            row = np.abs(tab.T[r, :n])
            if row.max(initial=0.0) > PIVOT_TOL:
                tab.pivot(r, int(np.argmax(row)))
            else:
                keep[r] = False
    if not keep.all():
        rows = np.concatenate([np.flatnonzero(keep), [m]])
        tab.T = tab.T[rows]
        tab.basis = tab.basis[keep]
        tab.m = int(keep.sum())
    # remove artificial columns
    tab.T = np.hstack([tab.T[:, :n], tab.T[:, -1:]])
    tab.n = n

    tab.set_objective(cost)
    tab.run(np.ones(n, dtype=bool))

    z = np.zeros(n)
    z[tab.basis] = tab.T[:-1, -1]
    nz = M.shape[1]
    x = shift + M @ z[:nz]
    return LpResult(
        x=x,
        objective=float(cost @ z) + offset,
        iterations=tab.iterations,
        basis=tab.basis.copy(),
        reduced_costs=tab.T[-1, :n].copy(),
        standard_A=A,
        standard_b=b,
        standard_x=z,
    )
