"""Canonical polyadic decomposition by alternating least squares.

Multi-restart ALS with Gaussian initializations: restart s draws its
factors from a counter-based generator keyed ``seed + s``, so runs are
reproducible and restarts are independent.  After every sweep the mode-1
and mode-2 factor columns are rescaled to unit norm with the scales
pushed into the mode-3 factor, which pins the scaling indeterminacy
without changing the fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import assign_fixed_cardinality, pinv
from .tensor_core import CpdFactors, _as_tensor, khatri_rao, unfold

# residual this far below the data norm counts as an exact fit; relative
# change alone never triggers on noiseless data where the residual decays
# geometrically
EXACT_FIT_REL = 1e-13


@dataclass(frozen=True)
class CpdOptions:
    """Settings for :func:`cpd_als`.

    rank >= 1 components; up to ``max_iters`` sweeps per restart;
    convergence when the relative fit change drops below ``tol``;
    ``restarts`` independent initializations seeded ``seed + s``.
    """

    rank: int
    max_iters: int = 1000
    tol: float = 1e-9
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class CpdResult:
    """Best-of-restarts ALS output.

    ``rel_error`` is ||t - reconstruction||_F / ||t||_F; ``converged``
    is False when the winning restart hit max_iters without meeting the
    tolerance; ``error_trace`` holds that restart's per-sweep relative
    errors.
    """

    factors: CpdFactors
    rel_error: float
    converged: bool
    n_iters: int
    restart_index: int
    error_trace: tuple


def _init_factors(dims, rank, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    return [rng.standard_normal((n, rank)) for n in dims]


def _normalize(a, b, c):
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    sa = np.where(na > 0, na, 1.0)
    sb = np.where(nb > 0, nb, 1.0)
    return a / sa, b / sb, c * (sa * sb)


def cpd_als(t, opts):
    """Rank-R CPD of a third-order tensor by multi-restart ALS.

    Returns the restart with the smallest reconstruction error (ties go
    to the lowest restart index).  Non-convergence is reported through
    ``converged`` on the result, not raised.
    """
    t = _as_tensor(t)
    if not isinstance(opts, CpdOptions):
        raise TypeError(f"opts must be CpdOptions, got {type(opts).__name__}")
    y1, y2, y3 = (unfold(t, mode) for mode in (1, 2, 3))
    norm_t = np.linalg.norm(t)
    scale = max(norm_t, np.finfo(float).tiny)

    best = None
    for s in range(opts.restarts):
        a, b, c = _init_factors(t.shape, opts.rank, opts.seed + s)
        prev = np.inf
        trace = []
        converged = False
        n_iters = 0
        for n_iters in range(1, opts.max_iters + 1):
            g = (b.T @ b) * (c.T @ c)
            a = y1.T @ khatri_rao(c, b) @ pinv(g)
            g = (a.T @ a) * (c.T @ c)
            b = y2.T @ khatri_rao(c, a) @ pinv(g)
            kr3 = khatri_rao(b, a)
            g = (a.T @ a) * (b.T @ b)
            c = y3.T @ kr3 @ pinv(g)
            err = np.linalg.norm(y3 - kr3 @ c.T) / scale
            a, b, c = _normalize(a, b, c)
            trace.append(err)
            if err <= EXACT_FIT_REL or (
                np.isfinite(prev) and abs(prev - err) <= opts.tol * max(prev, 1e-300)
            ):
                converged = True
                break
            prev = err
        if best is None or trace[-1] < best[0]:
            best = (trace[-1], CpdFactors(a, b, c), converged, n_iters, s, tuple(trace))
        if best[0] <= EXACT_FIT_REL:
            # no later restart can improve on an exact fit
            break

    rel_error, factors, converged, n_iters, s, trace = best
    return CpdResult(
        factors=factors,
        rel_error=float(rel_error),
        converged=converged,
        n_iters=n_iters,
        restart_index=s,
        error_trace=trace,
    )


def _congruence(f, g):
    """Matrix of per-component absolute cosine products across the modes."""
    out = np.ones((f.rank, g.rank))
    for u, v in zip(f.matrices(), g.matrices()):
        nu = np.linalg.norm(u, axis=0)
        nv = np.linalg.norm(v, axis=0)
        dot = np.abs(u.T @ v)
        denom = np.outer(nu, nv)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(denom > 0, dot / denom, 0.0)
        out *= cos
    return out


def factor_match_score(f, g):
    """Similarity of two factor sets in [0, 1].

    Mean over the best column matching of the product across modes of
    absolute cosines, so the score is 1 exactly when the factor sets
    agree up to a shared column permutation and per-mode scalings.
    """
    if f.rank != g.rank:
        raise ValueError(f"rank mismatch: {f.rank} vs {g.rank}")
    scores = _congruence(f, g)
    res = assign_fixed_cardinality(scores, f.rank)
    return float(np.clip(res.objective / f.rank, 0.0, 1.0))
