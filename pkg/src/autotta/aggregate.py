"""Descriptor aggregation and post-processing.

Pools a (C, H, W) feature map into a 1-D descriptor (MAC, SPoC, GeM,
R-MAC or CRoW), then optionally PCA-whitens and L2-normalizes it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

GEM_DEFAULT_P = 3.0
RMAC_DEFAULT_LEVELS = 3
EIGEN_FLOOR_DEFAULT = 1e-8
_GEM_EPS = 1e-6


class AggregateError(Exception):
    pass


class ZeroNormError(AggregateError):
    """L2 normalization of an all-zero vector."""


class AggregationKind(enum.IntEnum):
    MAC = 1
    SPOC = 2
    GEM = 3
    RMAC = 4
    CROW = 5


@dataclass(frozen=True)
class Aggregator:
    """Aggregation choice plus its hyper-parameters."""

    kind: AggregationKind
    gem_p: float = GEM_DEFAULT_P
    rmac_levels: int = RMAC_DEFAULT_LEVELS

    def __call__(self, fmap: np.ndarray, pca: "PcaModel | None" = None) -> np.ndarray:
        if self.kind is AggregationKind.MAC:
            return mac(fmap)
        if self.kind is AggregationKind.SPOC:
            return spoc(fmap)
        if self.kind is AggregationKind.GEM:
            return gem(fmap, self.gem_p)
        if self.kind is AggregationKind.RMAC:
            return rmac(fmap, self.rmac_levels, pca)
        return crow(fmap)


def mac(fmap: np.ndarray) -> np.ndarray:
    """Per-channel spatial maximum."""
    return fmap.max(axis=(1, 2))


def spoc(fmap: np.ndarray) -> np.ndarray:
    """Per-channel spatial sum."""
    return fmap.sum(axis=(1, 2))


def gem(fmap: np.ndarray, p: float) -> np.ndarray:
    """Generalized-mean pooling; p=1 is the mean, large p approaches MAC."""
    if p <= 0:
        raise AggregateError(f"GeM exponent must be positive, got {p}")
    clamped = np.maximum(fmap, _GEM_EPS)
    return (clamped**p).mean(axis=(1, 2)) ** (1.0 / p)


def _region_starts(extent: int, side: int) -> list[int]:
    """Uniform region starts along one axis with ~40% overlap."""
    if side >= extent:
        return [0]
    n = math.ceil((extent - side) / (0.6 * side)) + 1
    span = extent - side
    return sorted({round(i * span / (n - 1)) for i in range(n)})


def rmac_regions(width: int, height: int, levels: int) -> list[tuple[int, int, int, int]]:
    """(x, y, w, h) regions for all scales 1..levels, clamped to the map."""
    regions = []
    for level in range(1, levels + 1):
        side = math.ceil(2 * max(width, height) / (level + 1))
        rw, rh = min(side, width), min(side, height)
        for y in _region_starts(height, rh):
            for x in _region_starts(width, rw):
                regions.append((x, y, rw, rh))
    return regions


def rmac(fmap: np.ndarray, levels: int, pca: "PcaModel | None" = None) -> np.ndarray:
    """Regional MAC: per-region max pooling, normalize (and whiten), sum."""
    if levels < 1:
        raise AggregateError(f"R-MAC needs levels >= 1, got {levels}")
    _, h, w = fmap.shape
    out = None
    for x, y, rw, rh in rmac_regions(w, h, levels):
        v = mac(fmap[:, y : y + rh, x : x + rw])
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
        if pca is not None:
            v = pca_apply(pca, v)
            norm = np.linalg.norm(v)
            if norm > 0:
                v = v / norm
        out = v if out is None else out + v
    return out


def crow(fmap: np.ndarray, spatial_a: float = 2.0, spatial_b: float = 2.0) -> np.ndarray:
    """Cross-dimensional weighting: spatial aggregate weights x channel
    sparsity weights applied to sum pooling."""
    c, h, w = fmap.shape
    s = fmap.sum(axis=0)
    z = (np.abs(s) ** spatial_a).sum() ** (1.0 / spatial_a)
    if z > 0:
        spatial = (np.abs(s) / z) ** (1.0 / spatial_b) * np.sign(s)
    else:
        spatial = np.full((h, w), 1.0 / (h * w))
    q = (fmap > 0).mean(axis=(1, 2))
    qsum = q.sum()
    if qsum > 0:
        channel = np.where(q > 0, np.log(qsum / np.maximum(q, 1e-12)), 0.0)
    else:
        channel = np.ones(c)
    return channel * (fmap * spatial).sum(axis=(1, 2))


@dataclass(frozen=True)
class PcaModel:
    """Whitening projection: scale * (components @ (v - mean))."""

    mean: np.ndarray
    components: np.ndarray  # (output_dim, input_dim), rows orthonormal
    whitening_scale: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]


def pca_fit(
    corpus: np.ndarray, output_dim: int, eigen_floor: float = EIGEN_FLOOR_DEFAULT
) -> PcaModel:
    """Fit a whitening PCA on a (n, input_dim) corpus."""
    corpus = np.asarray(corpus, dtype=np.float64)
    n, input_dim = corpus.shape
    if output_dim > input_dim:
        raise AggregateError(f"output_dim {output_dim} exceeds input_dim {input_dim}")
    if n < output_dim:
        raise AggregateError(f"corpus of {n} vectors cannot support output_dim {output_dim}")
    mean = corpus.mean(axis=0)
    centered = corpus - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:output_dim]
    components = eigvecs[:, order].T
    scale = 1.0 / np.sqrt(np.maximum(eigvals[order], eigen_floor))
    return PcaModel(mean=mean, components=components, whitening_scale=scale)


def pca_apply(model: PcaModel, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise AggregateError(
            f"vector dim {v.shape[-1]} does not match PCA input dim {model.input_dim}"
        )
    return model.whitening_scale * (model.components @ (v - model.mean))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ZeroNormError("cannot L2-normalize an all-zero vector")
    return v / norm


@dataclass
class PostprocessStats:
    """Counts pipeline fallbacks worth surfacing to the operator."""

    zero_vector_substitutions: int = 0


def postprocess(
    v: np.ndarray,
    pca: PcaModel | None = None,
    stats: PostprocessStats | None = None,
) -> np.ndarray:
    """PCA-whiten (optional) then L2-normalize, substituting a uniform
    unit vector for all-zero inputs so the search never aborts on a
    degenerate image."""
    if pca is not None:
        v = pca_apply(pca, v)
    try:
        return l2_normalize(v)
    except ZeroNormError:
        if stats is not None:
            stats.zero_vector_substitutions += 1
        return np.full(v.shape, 1.0 / math.sqrt(v.shape[0]))
