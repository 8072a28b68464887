"""Shared model types for the coupled decomposition.

A dataset observes the common tensor through a separable multilinear
measurement (one matrix per mode) and adds its own low-rank distinct
component.  These types carry the measurement operators and ground-truth
factor sets used by the checkers, solvers, and generators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import CpdFactors, _as_matrix, cp_tensor, multilinear_product


@dataclass(frozen=True)
class MeasurementModel:
    """One dataset's mode degradation matrices (P_1, P_2, P_3).

    ``ranks`` are the declared operator ranks, defaulting to the generic
    value min(rows, cols) per matrix.
    """

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    ranks: tuple = None

    def __post_init__(self):
        mats = tuple(_as_matrix(p) for p in (self.p1, self.p2, self.p3))
        object.__setattr__(self, "p1", mats[0])
        object.__setattr__(self, "p2", mats[1])
        object.__setattr__(self, "p3", mats[2])
        if self.ranks is None:
            ranks = tuple(min(p.shape) for p in mats)
        else:
            ranks = tuple(int(r) for r in self.ranks)
            if len(ranks) != 3:
                raise ValueError(f"ranks must have length 3, got {ranks}")
            for r, p in zip(ranks, mats):
                if not 0 <= r <= min(p.shape):
                    raise ValueError(
                        f"declared rank {r} outside [0, {min(p.shape)}] for shape {p.shape}"
                    )
        object.__setattr__(self, "ranks", ranks)

    def matrices(self):
        return (self.p1, self.p2, self.p3)

    @property
    def in_dims(self):
        """Common-tensor dims this operator consumes."""
        return (self.p1.shape[1], self.p2.shape[1], self.p3.shape[1])

    @property
    def out_dims(self):
        """Dataset dims this operator produces."""
        return (self.p1.shape[0], self.p2.shape[0], self.p3.shape[0])

    def apply(self, t):
        """Degrade a common-space tensor into this dataset's space."""
        return multilinear_product(t, self.matrices())


def identity_measurement(dims):
    """Measurement that observes the common tensor unchanged."""
    return MeasurementModel(*(np.eye(int(n)) for n in dims))


@dataclass(frozen=True)
class CoupledModel:
    """Ground-truth factors: a common factor set plus per-dataset distinct
    factor triples (possibly zero-width when a dataset has no distinct
    component)."""

    common: CpdFactors
    distinct: tuple = field(default=())

    def __post_init__(self):
        triples = []
        for k, triple in enumerate(self.distinct):
            d = tuple(_as_matrix(m) for m in triple)
            if len(d) != 3:
                raise ValueError(f"dataset {k}: distinct triple must have 3 matrices")
            if not (d[0].shape[1] == d[1].shape[1] == d[2].shape[1]):
                raise ValueError(f"dataset {k}: distinct factor column counts differ")
            triples.append(d)
        object.__setattr__(self, "distinct", tuple(triples))

    @property
    def rank(self):
        return self.common.rank

    @property
    def l_ranks(self):
        return tuple(d[0].shape[1] for d in self.distinct)

    @property
    def n_datasets(self):
        return len(self.distinct)

    @property
    def common_dims(self):
        return self.common.dims

    def common_tensor(self):
        return cp_tensor(*self.common.matrices())

    def distinct_tensor(self, k):
        return cp_tensor(*self.distinct[k])


def clean_datasets(model, meas):
    """Noise-free datasets: degraded common tensor plus distinct parts."""
    if len(meas) != model.n_datasets:
        raise ValueError(
            f"{len(meas)} measurement models for {model.n_datasets} datasets"
        )
    out = []
    c1, c2, c3 = model.common.matrices()
    for k, m in enumerate(meas):
        common_part = cp_tensor(m.p1 @ c1, m.p2 @ c2, m.p3 @ c3)
        out.append(common_part + model.distinct_tensor(k))
    return out
