"""Synthetic instances, noise injection, cloud simulation, and metrics.

Generation is seed-deterministic through a counter-based generator, so
any run can be reproduced from its config alone.  Noise is rescaled to
the realized signal energy of each dataset, making the requested
signal-to-noise ratio exact rather than an expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CoupledModel, MeasurementModel, clean_datasets
from .tensor_core import CpdFactors, _as_matrix, _as_tensor

P_DISTRIBUTIONS = ("uniform01", "gaussian")


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for one coupled instance.

    ``common_dims`` are the sides of the shared tensor, ``dataset_dims``
    the observed sides per dataset, ``rank`` the shared rank, ``l_ranks``
    the per-dataset distinct ranks.  ``p_dist`` picks the entry law for
    the mode operators; factor matrices are always standard normal.
    """

    common_dims: tuple
    dataset_dims: tuple
    rank: int
    l_ranks: tuple
    snr_db: float = math.inf
    p_dist: str = "uniform01"
    seed: int = 0

    def __post_init__(self):
        common = tuple(int(n) for n in self.common_dims)
        if len(common) != 3 or any(n < 1 for n in common):
            raise ValueError(f"common dims must be 3 positive sizes, got {common}")
        dataset = tuple(tuple(int(n) for n in dims) for dims in self.dataset_dims)
        if not dataset:
            raise ValueError("need at least one dataset")
        for k, dims in enumerate(dataset):
            if len(dims) != 3 or any(n < 1 for n in dims):
                raise ValueError(f"dataset {k} dims must be 3 positive sizes, got {dims}")
        l_ranks = tuple(int(v) for v in self.l_ranks)
        if len(l_ranks) != len(dataset):
            raise ValueError(f"{len(l_ranks)} distinct ranks for {len(dataset)} datasets")
        if any(v < 0 for v in l_ranks):
            raise ValueError(f"distinct ranks must be nonnegative, got {l_ranks}")
        if int(self.rank) < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        snr = float(self.snr_db)
        if math.isnan(snr) or snr == -math.inf:
            raise ValueError(f"snr_db must be finite or +inf, got {snr}")
        if self.p_dist not in P_DISTRIBUTIONS:
            raise ValueError(f"p_dist must be one of {P_DISTRIBUTIONS}, got {self.p_dist!r}")
        object.__setattr__(self, "common_dims", common)
        object.__setattr__(self, "dataset_dims", dataset)
        object.__setattr__(self, "rank", int(self.rank))
        object.__setattr__(self, "l_ranks", l_ranks)
        object.__setattr__(self, "snr_db", snr)

    @property
    def n_datasets(self):
        return len(self.dataset_dims)


@dataclass(frozen=True)
class SynthData:
    """One generated instance: ground truth, operators, and observations."""

    model: CoupledModel
    meas: tuple
    clean: tuple
    datasets: tuple

    def common_tensor(self):
        return self.model.common_tensor()


def generate_synthetic(cfg):
    """Draw a coupled instance per ``cfg``.

    Common and distinct factors are i.i.d. standard normal; mode
    operators follow ``cfg.p_dist``.  Each dataset gets white Gaussian
    noise rescaled so its realized energy ratio matches ``snr_db``
    exactly (noiseless when infinite).
    """
    rng = _rng(cfg.seed)
    common = CpdFactors(*(rng.standard_normal((m, cfg.rank)) for m in cfg.common_dims))
    distinct = tuple(
        tuple(rng.standard_normal((n, l)) for n in dims)
        for dims, l in zip(cfg.dataset_dims, cfg.l_ranks)
    )
    if cfg.p_dist == "uniform01":
        draw_p = lambda shape: rng.uniform(0.0, 1.0, shape)
    else:
        draw_p = rng.standard_normal
    meas = tuple(
        MeasurementModel(*(draw_p((n, m)) for n, m in zip(dims, cfg.common_dims)))
        for dims in cfg.dataset_dims
    )
    model = CoupledModel(common=common, distinct=distinct)
    clean = tuple(clean_datasets(model, meas))
    noisy = tuple(add_noise(clean, cfg.snr_db, rng))
    return SynthData(model=model, meas=meas, clean=clean, datasets=noisy)


def add_noise(datasets, snr_db, seed_or_rng):
    """White Gaussian noise at an exact per-dataset energy ratio.

    ``snr_db = inf`` returns the inputs unchanged.  An all-zero dataset
    cannot carry a finite ratio and is rejected.
    """
    snr = float(snr_db)
    if math.isnan(snr) or snr == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr}")
    if isinstance(seed_or_rng, np.random.Generator):
        rng = seed_or_rng
    else:
        rng = _rng(seed_or_rng)
    out = []
    for k, t in enumerate(datasets):
        t = _as_tensor(t)
        if snr == math.inf:
            out.append(t.copy())
            continue
        signal = np.linalg.norm(t)
        if signal == 0.0:
            raise ValueError(f"dataset {k} has zero energy, SNR undefined")
        g = rng.standard_normal(t.shape)
        out.append(t + g * (signal / (np.linalg.norm(g) * 10.0 ** (snr / 20.0))))
    return out


def blend_common(c, alpha, rank, count, seed):
    """Per-dataset corrupted copies of a shared tensor.

    Each copy is (1 - alpha) * c + alpha * e_k where e_k is an
    independent rank-``rank`` tensor drawn from standard normal factors,
    so alpha = 0 reproduces ``c`` and alpha = 1 replaces it outright.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    c = _as_tensor(c)
    rng = _rng(seed)
    out = []
    for _ in range(int(count)):
        factors = CpdFactors(*(rng.standard_normal((m, int(rank))) for m in c.shape))
        out.append((1.0 - alpha) * c + alpha * factors.reconstruct())
    return out


@dataclass(frozen=True)
class CloudConfig:
    """Cloud overlay for a pair of co-registered images.

    ``g`` is the per-band cloud signature (flat 0.7 when omitted);
    ``s_maps`` the two per-pixel cover maps in [0, 1]; ``threshold``
    the cover level counted as cloud presence.
    """

    dims: tuple
    g: np.ndarray = None
    s_maps: tuple = None
    threshold: float = 0.15

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValueError(f"image dims must be 3 positive sizes, got {dims}")
        if self.g is None:
            g = np.full(dims[2], 0.7)
        else:
            g = np.asarray(self.g, dtype=float)
            if g.shape != (dims[2],):
                raise ValueError(f"cloud spectrum must have {dims[2]} bands, got {g.shape}")
            if (g < 0).any():
                raise ValueError("cloud spectrum must be nonnegative")
        if self.s_maps is None:
            raise ValueError("cover maps are required; generate with generate_cloud_map")
        maps = tuple(_as_matrix(s) for s in self.s_maps)
        if len(maps) != 2:
            raise ValueError(f"expected 2 cover maps, got {len(maps)}")
        for i, s in enumerate(maps):
            if s.shape != dims[:2]:
                raise ValueError(f"cover map {i} shape {s.shape} != image plane {dims[:2]}")
            if (s < 0).any() or (s > 1).any():
                raise ValueError(f"cover map {i} has entries outside [0, 1]")
        if not 0.0 <= float(self.threshold) <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "s_maps", maps)
        object.__setattr__(self, "threshold", float(self.threshold))


def apply_clouds(c, cfg):
    """Blend the cloud signature over an image per cover map.

    Each output is c * (1 - s) + g * s with the map broadcast over
    bands: fully covered pixels show only the cloud spectrum.
    """
    c = _as_tensor(c)
    if c.shape != cfg.dims:
        raise ValueError(f"image shape {c.shape} != configured dims {cfg.dims}")
    out = []
    for s in cfg.s_maps:
        w = s[:, :, None]
        out.append(c * (1.0 - w) + cfg.g[None, None, :] * w)
    return out


def cloud_metrics(s1, s2, threshold=0.15):
    """Mean cover and presence fraction pooled over both maps."""
    s1 = _as_matrix(s1)
    s2 = _as_matrix(s2)
    for i, s in enumerate((s1, s2)):
        if (s < 0).any() or (s > 1).any():
            raise ValueError(f"cover map {i} has entries outside [0, 1]")
    total = s1.size + s2.size
    cc = float(s1.sum() + s2.sum()) / total
    cp = float((s1 > threshold).sum() + (s2 > threshold).sum()) / total
    return cc, cp


def _smooth_field(rng, shape, window, passes):
    """Box-smoothed white noise, standardized."""
    f = rng.standard_normal(shape)
    kernel = np.ones(window) / window
    for _ in range(passes):
        for axis in (0, 1):
            f = np.apply_along_axis(
                lambda v: np.convolve(v, kernel, mode="same"), axis, f
            )
    f -= f.mean()
    sd = f.std()
    if sd > 0:
        f /= sd
    return f


def generate_cloud_map(shape, coverage, seed, window=5, passes=2, softness=0.5):
    """Cover map with mean cover tuned to ``coverage``.

    Smoothed standardized noise is pushed through a soft threshold
    clip((f - t) / softness, 0, 1); t is bisected until the map's mean
    matches the requested coverage.  Blobs come out spatially coherent,
    with soft edges controlled by ``softness``.
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) != 2 or any(n < 1 for n in shape):
        raise ValueError(f"cover map shape must be 2 positive sizes, got {shape}")
    coverage = float(coverage)
    if not 0.0 <= coverage <= 1.0:
        raise ValueError(f"coverage must lie in [0, 1], got {coverage}")
    if coverage == 0.0:
        return np.zeros(shape)
    if coverage == 1.0:
        return np.ones(shape)
    f = _smooth_field(_rng(seed), shape, window, passes)
    softness = float(softness)

    def mean_cover(t):
        return float(np.clip((f - t) / softness, 0.0, 1.0).mean())

    lo, hi = float(f.min()) - softness, float(f.max()) + softness
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_cover(mid) > coverage:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    return np.clip((f - t) / softness, 0.0, 1.0)


def spatial_decimation(n, factor):
    """Box-averaging decimation matrix, (n / factor) x n.

    Each output sample is the mean of ``factor`` consecutive inputs;
    ``n`` must divide evenly.
    """
    n = int(n)
    factor = int(factor)
    if factor < 1 or n % factor != 0:
        raise ValueError(f"decimation factor {factor} must divide size {n}")
    m = n // factor
    d = np.zeros((m, n))
    for i in range(m):
        d[i, i * factor:(i + 1) * factor] = 1.0 / factor
    return d


def band_averaging(n_bands, groups):
    """Spectral aggregation matrix, ``groups`` x ``n_bands``.

    Contiguous equal-width band groups are averaged; ``n_bands`` must
    divide evenly into ``groups``.
    """
    n_bands = int(n_bands)
    groups = int(groups)
    if groups < 1 or n_bands % groups != 0:
        raise ValueError(f"{groups} groups must divide {n_bands} bands evenly")
    return spatial_decimation(n_bands, n_bands // groups)


def nrmse(estimate, truth):
    """Relative recovery error ||estimate - truth|| / ||truth||."""
    estimate = _as_tensor(estimate)
    truth = _as_tensor(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    scale = np.linalg.norm(truth)
    if scale == 0.0:
        raise ValueError("reference tensor has zero norm")
    return float(np.linalg.norm(estimate - truth) / scale)
