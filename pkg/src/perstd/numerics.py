"""Shared numerical routines.

Rank decisions use a relative threshold: singular values at or below
``tol`` times the largest one count as zero.  The default tolerance is
1e-10, loose enough to absorb roundoff in the tensor pipelines and tight
enough to certify the rank conditions on well-scaled data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor_core import _as_matrix

DEFAULT_TOL = 1e-10

# exhaustive Kruskal-rank search is exponential in the column count
MAX_KRUSKAL_COLS = 20


class SingularSystemWarning(UserWarning):
    """A linear system was singular and solved with Tikhonov damping."""


def pinv(m, tol=DEFAULT_TOL):
    """Moore-Penrose pseudoinverse, singular values <= tol * sigma_max dropped."""
    return np.linalg.pinv(_as_matrix(m), rcond=tol)


def numeric_rank(m, tol=DEFAULT_TOL):
    """Number of singular values above tol * sigma_max."""
    s = np.linalg.svd(_as_matrix(m), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def kruskal_rank(m, tol=DEFAULT_TOL):
    """Largest k such that every set of k columns is linearly independent.

    Exhaustive over column subsets, so the column count is capped at
    MAX_KRUSKAL_COLS.  A (numerically) zero column gives 0.
    """
    m = _as_matrix(m)
    n_rows, n_cols = m.shape
    if n_cols > MAX_KRUSKAL_COLS:
        raise ValueError(
            f"kruskal_rank is exhaustive; refusing {n_cols} > {MAX_KRUSKAL_COLS} columns"
        )
    upper = min(n_rows, n_cols, numeric_rank(m, tol))
    for k in range(1, upper + 1):
        for subset in combinations(range(n_cols), k):
            if numeric_rank(m[:, subset], tol) < k:
                return k - 1
    return upper


@dataclass(frozen=True)
class SylvesterSystem:
    """Generalized Sylvester system sum_k A_k X B_k = F.

    ``terms`` holds the (A_k, B_k) pairs with A_k square of size r and
    B_k square of size m; ``rhs`` is the r x m right-hand side F.
    """

    terms: tuple
    rhs: np.ndarray

    def __post_init__(self):
        rhs = _as_matrix(self.rhs)
        terms = tuple((_as_matrix(a), _as_matrix(b)) for a, b in self.terms)
        if not terms:
            raise ValueError("system needs at least one (A_k, B_k) term")
        r, m = rhs.shape
        for i, (a, b) in enumerate(terms):
            if a.shape != (r, r):
                raise ValueError(f"term {i}: A has shape {a.shape}, expected ({r}, {r})")
            if b.shape != (m, m):
                raise ValueError(f"term {i}: B has shape {b.shape}, expected ({m}, {m})")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "rhs", rhs)


def solve_generalized_sylvester(system, tol=DEFAULT_TOL):
    """Solve sum_k A_k X B_k = F for X by Kronecker vectorization.

    Assembles G = sum_k B_k.T kron A_k and solves G vec(X) = vec(F)
    densely (problem sizes here are small).  A singular or numerically
    unreliable solve is retried once with Tikhonov damping
    lambda = 1e-10 * trace(G) / dim(G), and flagged with
    :class:`SingularSystemWarning`.
    """
    r, m = system.rhs.shape
    g = np.zeros((m * r, m * r))
    for a, b in system.terms:
        # kron(b.T, a) assembled in place; block (i, j) is b[j, i] * a
        g += (b.T[:, None, :, None] * a[None, :, None, :]).reshape(m * r, m * r)
    f = system.rhs.reshape(-1, order="F")

    def attempt(mat):
        try:
            x = np.linalg.solve(mat, f)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(x)):
            return None
        resid = np.linalg.norm(g @ x - f)
        scale = np.linalg.norm(g, "fro") * np.linalg.norm(x) + np.linalg.norm(f)
        if resid > 1e-6 * scale:
            return None
        return x

    x = attempt(g)
    if x is None:
        lam = 1e-10 * np.trace(g) / g.shape[0]
        if lam <= 0.0 or not np.isfinite(lam):
            lam = 1e-10
        warnings.warn(
            "singular coupled system, retrying with Tikhonov damping",
            SingularSystemWarning,
            stacklevel=2,
        )
        x = np.linalg.solve(g + lam * np.eye(g.shape[0]), f)
    return x.reshape(system.rhs.shape, order="F")


@dataclass(frozen=True)
class AssignmentResult:
    """Solution of a fixed-cardinality assignment: (row, col) pairs sorted
    by row, and the attained score sum."""

    pairs: tuple
    objective: float


def assign_fixed_cardinality(scores, r):
    """Pick exactly r score entries, at most one per row and per column,
    maximizing their sum.

    Exact optimum by successive shortest augmenting paths on the bipartite
    min-cost-flow formulation (costs are negated scores); after each
    augmentation the current matching is optimal for its cardinality, so
    stopping at r pairs is exact.  Not a greedy truncation.

    Parameters
    ----------
    scores : ndarray, shape (n, m)
        Finite similarity scores.
    r : int
        Number of pairs, 0 <= r <= min(n, m).

    Returns
    -------
    AssignmentResult
    """
    scores = _as_matrix(scores)
    n, m = scores.shape
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    r = int(r)
    if r < 0 or r > min(n, m):
        raise ValueError(f"cardinality {r} not in [0, {min(n, m)}]")

    cost = (-scores).tolist()
    match_row = [-1] * n  # row -> col
    match_col = [-1] * m  # col -> row
    inf = float("inf")
    for _ in range(r):
        # Bellman-Ford over the residual graph; free rows are the sources,
        # matched pairs contribute reversed edges with negated cost.
        dist_row = [0.0 if match_row[i] < 0 else inf for i in range(n)]
        dist_col = [inf] * m
        parent_col = [-1] * m  # row used to reach each column
        for _ in range(n + m):
            changed = False
            for i in range(n):
                di = dist_row[i]
                if di == inf:
                    continue
                row_cost = cost[i]
                for j in range(m):
                    if match_row[i] == j:
                        continue
                    nd = di + row_cost[j]
                    if nd < dist_col[j]:
                        dist_col[j] = nd
                        parent_col[j] = i
                        changed = True
            for j in range(m):
                i = match_col[j]
                if i >= 0 and dist_col[j] < inf:
                    nd = dist_col[j] - cost[i][j]
                    if nd < dist_row[i]:
                        dist_row[i] = nd
                        changed = True
            if not changed:
                break
        j_best, d_best = -1, inf
        for j in range(m):
            if match_col[j] < 0 and dist_col[j] < d_best:
                j_best, d_best = j, dist_col[j]
        if j_best < 0:
            raise RuntimeError("no augmenting path found")
        # trace the alternating path back, flipping matched edges
        j = j_best
        while j >= 0:
            i = parent_col[j]
            prev = match_row[i]
            match_row[i] = j
            match_col[j] = i
            j = prev

    pairs = tuple((i, match_row[i]) for i in range(n) if match_row[i] >= 0)
    objective = float(sum(scores[i, j] for i, j in pairs))
    return AssignmentResult(pairs=pairs, objective=objective)
