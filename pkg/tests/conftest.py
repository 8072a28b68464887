"""Shared builders for the coupled-decomposition test suite."""

import numpy as np

from perstd.model import CoupledModel, MeasurementModel, clean_datasets
from perstd.tensor_core import CpdFactors


def reference_instance(seed, common=(7, 11, 9), rank=5, l_ranks=(5, 5, 5),
                       dataset=((10, 5, 7), (5, 12, 7), (5, 7, 10))):
    """Three-dataset instance: Gaussian common/distinct factors, uniform
    [0, 1] mode operators.

    The default shapes make every tensor's rank exceed two of its mode
    dimensions, so the standalone decompositions are deliberately
    challenging while the coupled problem stays well posed.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    c = CpdFactors(*(rng.standard_normal((m, rank)) for m in common))
    distinct = tuple(
        tuple(rng.standard_normal((n, l)) for n in dims)
        for dims, l in zip(dataset, l_ranks)
    )
    meas = tuple(
        MeasurementModel(*(rng.uniform(0.0, 1.0, (n, m)) for n, m in zip(dims, common)))
        for dims in dataset
    )
    model = CoupledModel(common=c, distinct=distinct)
    return model, meas, clean_datasets(model, meas)
