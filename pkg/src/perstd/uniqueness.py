"""Recoverability certificates for the personalized coupled model.

Two checkers certify that the common tensor can be recovered from the
datasets.  The generic checker works from dimensions and declared
operator ranks alone (conditions that hold with probability one for
generic factors); the deterministic checker evaluates Kruskal-rank
conditions on explicit factor matrices.  Both are sufficient conditions:
a False report means "not guaranteed", never "not unique".
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .numerics import DEFAULT_TOL, MAX_KRUSKAL_COLS, kruskal_rank, numeric_rank, pinv


@dataclass(frozen=True)
class ProblemDims:
    """Dimensional description of a coupled problem.

    ``p_ranks[k][j]`` is the declared rank of dataset k's mode-j
    operator; omitted it defaults to the generic min(N_{k,j}, M_j).
    """

    common_dims: tuple
    rank: int
    dataset_dims: tuple
    l_ranks: tuple
    p_ranks: tuple = None

    def __post_init__(self):
        common = tuple(int(v) for v in self.common_dims)
        if len(common) != 3 or any(v < 1 for v in common):
            raise ValueError(f"bad common dims {self.common_dims}")
        dataset = tuple(tuple(int(v) for v in row) for row in self.dataset_dims)
        if not dataset or any(len(row) != 3 or any(v < 1 for v in row) for row in dataset):
            raise ValueError(f"bad dataset dims {self.dataset_dims}")
        l_ranks = tuple(int(v) for v in self.l_ranks)
        if len(l_ranks) != len(dataset) or any(v < 0 for v in l_ranks):
            raise ValueError(f"bad distinct ranks {self.l_ranks}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.p_ranks is None:
            p_ranks = tuple(
                tuple(min(n, m) for n, m in zip(row, common)) for row in dataset
            )
        else:
            p_ranks = tuple(tuple(int(v) for v in row) for row in self.p_ranks)
            if len(p_ranks) != len(dataset):
                raise ValueError("p_ranks length must match dataset count")
            for k, row in enumerate(p_ranks):
                for j, r in enumerate(row):
                    cap = min(dataset[k][j], common[j])
                    if not 0 <= r <= cap:
                        raise ValueError(
                            f"p_ranks[{k}][{j}] = {r} outside [0, {cap}]"
                        )
        object.__setattr__(self, "common_dims", common)
        object.__setattr__(self, "dataset_dims", dataset)
        object.__setattr__(self, "l_ranks", l_ranks)
        object.__setattr__(self, "rank", int(self.rank))
        object.__setattr__(self, "p_ranks", p_ranks)

    @property
    def n_datasets(self):
        return len(self.dataset_dims)

    def full_col(self, k, j):
        """Whether dataset k's mode-j operator has full column rank."""
        return self.p_ranks[k][j] == self.common_dims[j]

    @classmethod
    def from_measurements(cls, meas, rank, l_ranks):
        """Build dims from measurement operators, using declared ranks."""
        common = meas[0].in_dims
        for k, m in enumerate(meas):
            if m.in_dims != common:
                raise ValueError(
                    f"dataset {k} consumes dims {m.in_dims}, dataset 0 {common}"
                )
        return cls(
            common_dims=common,
            rank=rank,
            dataset_dims=tuple(m.out_dims for m in meas),
            l_ranks=tuple(l_ranks),
            p_ranks=tuple(m.ranks for m in meas),
        )


@dataclass(frozen=True)
class Witness:
    """Designated dataset indices: ``eta`` must be fully unique, ``xi[j]``
    supplies the mode-j factor.  Indices are 0-based."""

    eta: int
    xi: tuple


@dataclass(frozen=True)
class UniquenessReport:
    """Outcome of the generic check.

    ``overall`` True certifies recovery for generic factors; False means
    the sufficient conditions could not be certified, not that recovery
    is impossible.
    """

    eta_candidates: tuple
    unimode_candidates: tuple
    a6_satisfied: bool
    overall: bool
    witness: Witness | None


def _full_bound(dims, k):
    """Generic full-uniqueness count for dataset k."""
    t = dims.rank + dims.l_ranks[k]
    return sum(min(dims.p_ranks[k][j], t) for j in range(3)), 2 * t + 2


def _unimode_bound(dims, k, j):
    """Generic mode-j uniqueness count for dataset k."""
    t = dims.rank + dims.l_ranks[k]
    own = min(
        dims.dataset_dims[k][j],
        min(dims.common_dims[j], dims.rank) + dims.l_ranks[k],
    )
    rest = sum(min(dims.p_ranks[k][i], t) for i in range(3) if i != j)
    return own + rest, 2 * t + 2


def check_generic(dims):
    """Certify generic recoverability from dimensions and operator ranks.

    A dataset is a full-uniqueness candidate when its operator ranks
    carry Kruskal's count for the stacked factors; it is a mode-j
    candidate when its mode-j operator has full column rank and the
    mode-j count holds.  Recovery additionally needs some mode witness
    different from the fully unique dataset.
    """
    etas = tuple(
        k for k in range(dims.n_datasets) if _full_bound(dims, k)[0] >= _full_bound(dims, k)[1]
    )
    unimode = tuple(
        tuple(
            k
            for k in range(dims.n_datasets)
            if dims.full_col(k, j)
            and _unimode_bound(dims, k, j)[0] >= _unimode_bound(dims, k, j)[1]
        )
        for j in range(3)
    )

    best = None
    for eta in etas:
        if any(not pool for pool in unimode):
            break
        for xi in product(*unimode):
            if all(x == eta for x in xi):
                continue
            involved = {eta, *xi}
            size = sum(sum(dims.dataset_dims[k]) for k in involved)
            key = (len(involved), -size, (eta,) + tuple(xi))
            if best is None or key < best[0]:
                best = (key, Witness(eta=eta, xi=tuple(xi)))
    witness = best[1] if best is not None else None
    return UniquenessReport(
        eta_candidates=etas,
        unimode_candidates=unimode,
        a6_satisfied=witness is not None,
        overall=witness is not None,
        witness=witness,
    )


@dataclass(frozen=True)
class DeterministicReport:
    """Outcome of the explicit-factor check.

    ``a1``: the fully unique dataset's stacked factors meet Kruskal's
    condition.  ``a2[j]``: the mode-j witness is mode-j unique with a
    left-invertible mode-j operator.  ``a3[j]``: the cross-dataset
    Kruskal condition, None for modes whose witness is ``eta`` itself.
    ``alt_unimode`` reports the alternative mode-j condition
    (rank + min Kruskal of the other modes) informationally; it does not
    gate ``overall``.
    """

    a1: bool
    a2: tuple
    a3: tuple
    exists_distinct_witness: bool
    overall: bool
    alt_unimode: tuple


def stacked_factors(model, meas, k):
    """Dataset k's CPD factors [P_{k,j} C_j, D_{k,j}] per mode."""
    out = []
    for j, (p, c) in enumerate(zip(meas[k].matrices(), model.common.matrices())):
        d = model.distinct[k][j]
        out.append(np.hstack([p @ c, d]))
    return tuple(out)


def _no_zero_columns(m, tol):
    norms = np.linalg.norm(m, axis=0)
    if norms.size == 0:
        return True
    return bool(np.all(norms > tol * norms.max()))


def check_deterministic(model, meas, witness, tol=DEFAULT_TOL):
    """Certify recoverability for explicit factors along a witness.

    Evaluates Kruskal's condition on the fully unique dataset, the
    mode-wise uniqueness conditions on each mode witness, and the
    cross-dataset Kruskal-rank condition tying every mode witness that
    differs from ``eta`` back to it.  Exhaustive Kruskal ranks cap the
    stacked factor widths at MAX_KRUSKAL_COLS.
    """
    r = model.rank
    ls = model.l_ranks
    k_all = {witness.eta, *witness.xi}
    for k in k_all:
        if not 0 <= k < model.n_datasets:
            raise ValueError(f"witness index {k} out of range")
        if r + ls[k] > MAX_KRUSKAL_COLS:
            raise ValueError(
                f"dataset {k} stacked width {r + ls[k]} exceeds {MAX_KRUSKAL_COLS}"
            )
    eta = witness.eta
    stacked = {k: stacked_factors(model, meas, k) for k in k_all}

    a1 = sum(kruskal_rank(f, tol) for f in stacked[eta]) >= 2 * (r + ls[eta]) + 2

    a2 = []
    alt = []
    for j, xi in enumerate(witness.xi):
        f = stacked[xi]
        others = [i for i in range(3) if i != j]
        kr_others = [kruskal_rank(f[i], tol) for i in others]
        rank_own = numeric_rank(f[j], tol)
        bound = 2 * (r + ls[xi]) + 2
        p = meas[xi].matrices()[j]
        full_col = numeric_rank(p, tol) == p.shape[1]
        a2.append(
            _no_zero_columns(f[j], tol)
            and sum(kr_others) + rank_own >= bound
            and full_col
        )
        alt.append(rank_own + min(kr_others) >= (r + ls[xi]) + 1)

    a3 = []
    for j, xi in enumerate(witness.xi):
        if xi == eta:
            a3.append(None)
            continue
        width = r + ls[xi] + ls[eta]
        if width > MAX_KRUSKAL_COLS:
            raise ValueError(
                f"mode {j + 1} cross-check width {width} exceeds {MAX_KRUSKAL_COLS}"
            )
        p_eta = meas[eta].matrices()[j]
        p_xi = meas[xi].matrices()[j]
        mapped = p_eta @ pinv(p_xi, tol) @ model.distinct[xi][j]
        g = np.hstack(
            [p_eta @ model.common.matrices()[j], mapped, model.distinct[eta][j]]
        )
        a3.append(kruskal_rank(g, tol) > 1)

    exists = any(xi != eta for xi in witness.xi)
    overall = (
        a1
        and all(a2)
        and exists
        and all(ok for ok in a3 if ok is not None)
    )
    return DeterministicReport(
        a1=a1,
        a2=tuple(a2),
        a3=tuple(a3),
        exists_distinct_witness=exists,
        overall=overall,
        alt_unimode=tuple(alt),
    )
