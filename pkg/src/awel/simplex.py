"""Small dense simplex solver for the tiny LPs used in this package.

Problems here have at most a few dozen variables (no-arbitrage checks,
survivability feasibility), so a dense tableau with Bland's rule is
plenty and keeps the package free of external LP dependencies.
"""

from __future__ import annotations

import numpy as np


class SimplexError(RuntimeError):
    """Raised when the LP is unbounded or the tableau degenerates."""


def maximize(c, A_ub, b_ub, max_pivots=10000):
    """Solve  max c@x  s.t.  A_ub@x <= b_ub,  x >= 0.

    Requires b_ub >= 0 so the slack basis is feasible (all callers
    arrange their constraints this way).  Returns (value, x).
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A_ub, dtype=float)
    b = np.asarray(b_ub, dtype=float)
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("inconsistent LP dimensions")
    if np.any(b < -1e-12):
        raise ValueError("simplex.maximize requires b_ub >= 0")

    # Tableau rows: constraints with slack columns, last row = -objective.
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = np.maximum(b, 0.0)
    T[m, :n] = -c
    basis = list(range(n, n + m))

    for _ in range(max_pivots):
        # Bland's rule: smallest index with a negative reduced cost.
        reduced = T[m, :-1]
        candidates = np.flatnonzero(reduced < -1e-11)
        if candidates.size == 0:
            break
        col = int(candidates[0])
        ratios = np.full(m, np.inf)
        positive = T[:m, col] > 1e-11
        ratios[positive] = T[:m, -1][positive] / T[:m, col][positive]
        if not np.any(np.isfinite(ratios)):
            raise SimplexError("LP is unbounded")
        best = np.min(ratios)
        # Tie-break on smallest basis index (anti-cycling).
        tied = np.flatnonzero(ratios <= best + 1e-11)
        row = int(min(tied, key=lambda i: basis[i]))
        pivot = T[row, col]
        T[row] /= pivot
        for r in range(m + 1):
            if r != row and T[r, col] != 0.0:
                T[r] -= T[r, col] * T[row]
        basis[row] = col
    else:
        raise SimplexError("pivot limit exceeded")

    x = np.zeros(n + m)
    for i, v in enumerate(basis):
        x[v] = T[i, -1]
    return float(T[m, -1]), x[:n]
