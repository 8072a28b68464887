"""Constructive semi-algebraic recovery of the common tensor.

One dataset with a fully unique decomposition anchors the column order
and scaling; per-mode witness datasets with left-invertible mode
operators supply the common factors.  Each tensor is decomposed
independently, the common components are identified by a similarity
matching in the anchor's row space, scaling ambiguities are corrected by
per-column least squares, and the common tensor is reassembled from the
corrected factors.  No iteration couples the datasets, so the cost is a
few standalone decompositions plus linear algebra.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cpd import CpdOptions, cpd_als
from .numerics import DEFAULT_TOL, assign_fixed_cardinality, numeric_rank, pinv
from .tensor_core import CpdFactors, cp_tensor, khatri_rao, unfold

# seed strides keeping the per-dataset and per-residual CPD restarts on
# disjoint streams
_DATASET_STRIDE = 7919
_RESIDUAL_OFFSET = 104729

# below this column norm the scale correction is meaningless
_SCALE_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SemiAlgResult:
    """Outputs of the semi-algebraic pipeline.

    ``distinct`` holds per-dataset residuals Y_k minus the degraded
    common estimate (exact complements); ``distinct_factors`` holds
    their rank-L_k decompositions when requested, None entries for
    datasets with L_k = 0.  ``match_scores`` maps each matched mode
    (1-based) to its assignment objective; ``scalings`` maps every mode
    to the per-column scale corrections.  ``cpd_factors`` records the
    factor sets actually used per decomposed dataset.
    """

    common: CpdFactors
    distinct: tuple
    match_scores: dict
    scalings: dict
    distinct_factors: tuple | None
    cpd_factors: dict


def _cosine_scores(u, v):
    nu = np.linalg.norm(u, axis=0)
    nv = np.linalg.norm(v, axis=0)
    denom = np.outer(nu, nv)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, np.abs(u.T @ v) / denom, 0.0)


def _scale_to_reference(reference, candidate):
    """Per-column least-squares scales lam_r minimizing
    ||reference_r - lam_r * candidate_r||; near-zero candidate columns
    get scale 0 with a warning."""
    norms2 = np.einsum("ij,ij->j", candidate, candidate)
    dots = np.einsum("ij,ij->j", candidate, reference)
    lam = np.zeros(candidate.shape[1])
    ok = np.sqrt(norms2) >= _SCALE_NORM_FLOOR
    lam[ok] = dots[ok] / norms2[ok]
    if not np.all(ok):
        warnings.warn(
            "degenerate column(s) in scale correction, scale set to 0",
            stacklevel=3,
        )
    return lam


def semialg_decompose(
    y,
    meas,
    rank,
    l_ranks,
    witness,
    opts,
    distinct_cpd=False,
    precomputed=None,
):
    """Recover common and distinct components along a witness.

    Parameters
    ----------
    y : sequence of ndarray
        The datasets.
    meas : sequence of MeasurementModel
        Per-dataset measurement operators, aligned with ``y``.
    rank : int
        Common rank R.
    l_ranks : sequence of int
        Distinct ranks, one per dataset.
    witness : Witness
        Fully unique dataset ``eta`` and per-mode datasets ``xi``;
        every P_{xi[j], j} must have full column rank.
    opts : CpdOptions
        Settings for the internal decompositions; ``opts.rank`` is
        ignored (each dataset is decomposed at R + L_k, dataset k's
        restarts are seeded from opts.seed + 7919 k).
    distinct_cpd : bool
        Also decompose each residual at rank L_k.
    precomputed : dict, optional
        Dataset index -> CpdFactors overriding that dataset's internal
        decomposition (testing hook; used factors are always reported).
    """
    y = [np.asarray(t, dtype=float) for t in y]
    if len(meas) != len(y):
        raise ValueError(f"{len(meas)} measurement models for {len(y)} datasets")
    l_ranks = tuple(int(v) for v in l_ranks)
    if len(l_ranks) != len(y):
        raise ValueError(f"{len(l_ranks)} distinct ranks for {len(y)} datasets")
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    eta = witness.eta
    xi = tuple(witness.xi)
    for k in (eta, *xi):
        if not 0 <= k < len(y):
            raise ValueError(f"witness index {k} out of range")
    cross_modes = [j for j in range(3) if xi[j] != eta]
    if not cross_modes:
        raise ValueError("witness needs some mode with xi[j] != eta")
    for j in range(3):
        p = meas[xi[j]].matrices()[j]
        if numeric_rank(p) < p.shape[1]:
            raise ValueError(
                f"mode-{j + 1} operator of dataset {xi[j]} is not left-invertible"
            )

    cpd_used = {}

    def factors_of(k):
        if k not in cpd_used:
            if precomputed is not None and k in precomputed:
                cpd_used[k] = precomputed[k]
            else:
                sub = CpdOptions(
                    rank=rank + l_ranks[k],
                    max_iters=opts.max_iters,
                    tol=opts.tol,
                    restarts=opts.restarts,
                    seed=opts.seed + _DATASET_STRIDE * k,
                )
                cpd_used[k] = cpd_als(y[k], sub).factors
        return cpd_used[k]

    match_scores = {}
    scalings = {}
    c_hat = [None, None, None]

    # anchor decomposition and the first cross mode
    j0 = cross_modes[0]
    u_eta = factors_of(eta).matrices()
    u_xi0 = factors_of(xi[j0]).matrices()
    p_eta_j0 = meas[eta].matrices()[j0]
    p_xi_j0 = meas[xi[j0]].matrices()[j0]
    pdag_xi_j0 = pinv(p_xi_j0)
    v = p_eta_j0 @ (pdag_xi_j0 @ u_xi0[j0])
    res = assign_fixed_cardinality(_cosine_scores(u_eta[j0], v), rank)
    match_scores[j0 + 1] = res.objective
    rows = [i for i, _ in res.pairs]
    cols0 = [c for _, c in res.pairs]
    xc_eta = [u[:, rows] for u in u_eta]

    def recover_mode(mode, selected, p_xi_mode):
        """Map a selected mode factor back to common space, scale-locked
        to the anchor's block."""
        p_eta_mode = meas[eta].matrices()[mode]
        pulled = pinv(p_xi_mode) @ selected
        lam = _scale_to_reference(xc_eta[mode], p_eta_mode @ pulled)
        scalings[mode + 1] = lam
        return pulled * lam

    c_hat[j0] = recover_mode(j0, u_xi0[j0][:, cols0], p_xi_j0)

    for mode in range(3):
        if mode == j0:
            continue
        k = xi[mode]
        if k == eta:
            selected = xc_eta[mode]
        elif k == xi[j0]:
            selected = u_xi0[mode][:, cols0]
        else:
            u_k = factors_of(k).matrices()
            p_k_mode = meas[k].matrices()[mode]
            v = meas[eta].matrices()[mode] @ (pinv(p_k_mode) @ u_k[mode])
            res = assign_fixed_cardinality(_cosine_scores(xc_eta[mode], v), rank)
            match_scores[mode + 1] = res.objective
            selected = u_k[mode][:, [c for _, c in res.pairs]]
        c_hat[mode] = recover_mode(mode, selected, meas[k].matrices()[mode])

    common = CpdFactors(*c_hat)
    distinct = []
    for k in range(len(y)):
        p1, p2, p3 = meas[k].matrices()
        degraded = cp_tensor(p1 @ common.a, p2 @ common.b, p3 @ common.c)
        distinct.append(y[k] - degraded)
    distinct = tuple(distinct)

    distinct_factors = None
    if distinct_cpd:
        fitted = []
        for k, resid in enumerate(distinct):
            if l_ranks[k] == 0:
                fitted.append(None)
                continue
            sub = CpdOptions(
                rank=l_ranks[k],
                max_iters=opts.max_iters,
                tol=opts.tol,
                restarts=opts.restarts,
                seed=opts.seed + _RESIDUAL_OFFSET + _DATASET_STRIDE * k,
            )
            fitted.append(cpd_als(resid, sub).factors)
        distinct_factors = tuple(fitted)

    return SemiAlgResult(
        common=common,
        distinct=distinct,
        match_scores=match_scores,
        scalings=scalings,
        distinct_factors=distinct_factors,
        cpd_factors=cpd_used,
    )


def hybrid_regression_mode3(y1, meas1, c1_hat, c2_hat, tol=DEFAULT_TOL):
    """Mode-3 factor by linear regression against one dataset.

    Given matched mode-1/mode-2 common factors, solves
    min_C3 ||y1 - [[P_11 c1_hat, P_12 c2_hat, C3]]||_F on the mode-3
    unfolding.  A rank-deficient regressor is flagged with a warning and
    solved via the pseudoinverse.
    """
    y1 = np.asarray(y1, dtype=float)
    a = meas1.p1 @ np.asarray(c1_hat, dtype=float)
    b = meas1.p2 @ np.asarray(c2_hat, dtype=float)
    reg = khatri_rao(b, a)
    if numeric_rank(reg, tol) < reg.shape[1]:
        warnings.warn("rank-deficient mode-3 regressor, using pseudoinverse", stacklevel=2)
    return (pinv(reg, tol) @ unfold(y1, 3)).T
