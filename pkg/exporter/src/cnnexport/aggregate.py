"""Descriptor pooling and whitening for exported activation maps."""
from __future__ import annotations

import math

import numpy as np

# Tags shared with the cache format.
MAC, SPOC, GEM, RMAC, CROW = 1, 2, 3, 4, 5
AGGREGATION_TAGS = {"mac": MAC, "spoc": SPOC, "gem": GEM, "rmac": RMAC, "crow": CROW}


class AggregateError(Exception):
    pass


def mac(fmap: np.ndarray) -> np.ndarray:
    return fmap.max(axis=(1, 2))


def spoc(fmap: np.ndarray) -> np.ndarray:
    return fmap.sum(axis=(1, 2))


def gem(fmap: np.ndarray, p: float = 3.0) -> np.ndarray:
    if p <= 0:
        raise AggregateError("GeM exponent must be positive")
    clamped = np.maximum(fmap, 1e-6)
    return (clamped**p).mean(axis=(1, 2)) ** (1.0 / p)


def _region_starts(extent: int, side: int) -> list[int]:
    if side >= extent:
        return [0]
    step = max(1, int(round(0.6 * side)))
    starts = list(range(0, extent - side + 1, step))
    if starts[-1] != extent - side:
        starts.append(extent - side)
    return starts


def rmac(fmap: np.ndarray, levels: int = 3) -> np.ndarray:
    if levels < 1:
        raise AggregateError("R-MAC needs at least one level")
    _, h, w = fmap.shape
    out = np.zeros(fmap.shape[0])
    for level in range(1, levels + 1):
        side = max(1, math.ceil(2 * max(w, h) / (level + 1)))
        side = min(side, w, h)
        for y in _region_starts(h, side):
            for x in _region_starts(w, side):
                v = fmap[:, y : y + side, x : x + side].max(axis=(1, 2))
                norm = np.linalg.norm(v)
                if norm > 0:
                    out += v / norm
    return out


def crow(fmap: np.ndarray) -> np.ndarray:
    c, h, w = fmap.shape
    s = fmap.sum(axis=0)
    z = np.linalg.norm(s)
    spatial = np.zeros_like(s) if z == 0 else np.sign(s) * np.sqrt(np.abs(s) / z)
    q = (fmap > 0).mean(axis=(1, 2))
    total = q.sum()
    channel = np.where(q > 0, np.log(np.maximum(total, 1e-12) / np.maximum(q, 1e-12)), 0.0)
    return channel * (fmap * spatial).sum(axis=(1, 2))


_POOLS = {MAC: mac, SPOC: spoc, GEM: gem, RMAC: rmac, CROW: crow}


def aggregate(fmap: np.ndarray, tag: int) -> np.ndarray:
    try:
        return _POOLS[tag](fmap)
    except KeyError:
        raise AggregateError(f"unknown aggregation tag {tag}") from None


class PcaWhitener:
    """PCA projection with per-axis variance equalization."""

    def __init__(self, mean, components, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.components = np.asarray(components, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, corpus: np.ndarray, output_dim: int, eigen_floor: float = 1e-8):
        corpus = np.asarray(corpus, dtype=np.float64)
        if corpus.ndim != 2 or corpus.shape[0] < 3:
            raise AggregateError("PCA corpus needs at least 3 samples")
        if not 1 <= output_dim <= corpus.shape[1]:
            raise AggregateError(f"bad PCA output dim {output_dim}")
        mean = corpus.mean(axis=0)
        centered = corpus - mean
        cov = centered.T @ centered / corpus.shape[0]
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:output_dim]
        components = eigvecs[:, order].T
        scale = 1.0 / np.sqrt(np.maximum(eigvals[order], eigen_floor))
        return cls(mean, components, scale)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return (self.components @ (np.asarray(v, dtype=np.float64) - self.mean)) * self.scale


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        # degenerate map: fall back to the uniform unit vector
        return np.full(v.shape, 1.0 / math.sqrt(v.shape[0]))
    return v / norm
