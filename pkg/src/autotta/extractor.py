"""Feature extraction.

A feature map is a channel-major float64 array of shape (C, H, W).
Extraction is pluggable through a descriptor registry; the built-in
"desk" extractor is a fixed, fully deterministic filter bank so the whole
pipeline runs without any neural network.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.signal import correlate2d

from .transforms import Image

# Rec. 601 luminance weights.
_LUMA = np.array([0.299, 0.587, 0.114])

DESK_CHANNELS = 16
_DESK_POOL = 4


class ExtractorError(Exception):
    """Unknown descriptor or malformed extractor configuration."""


@dataclass(frozen=True)
class ExtractorDescriptor:
    name: str
    channels: int
    version: int = 1
    deterministic_seed: int = 0


@lru_cache(maxsize=None)
def _desk_filter_bank(seed: int) -> np.ndarray:
    """16 fixed 3x3 filters: 8 oriented-edge kernels + 8 seeded random ones."""
    bank = np.empty((DESK_CHANNELS, 3, 3))
    ys, xs = np.mgrid[-1:2, -1:2].astype(float)
    for k in range(8):
        theta = k * np.pi / 4.0
        bank[k] = np.cos(theta) * xs - np.sin(theta) * ys
    rng = np.random.default_rng(seed)
    bank[8:] = rng.standard_normal((8, 3, 3))
    bank.setflags(write=False)
    return bank


def builtin_desk_extract(image: Image, seed: int = 0) -> np.ndarray:
    """Grayscale -> 16-filter bank -> ReLU -> 4x4 average pooling."""
    gray = image.to_array().astype(np.float64) @ _LUMA
    gray /= 255.0
    bank = _desk_filter_bank(seed)
    responses = np.stack(
        [correlate2d(gray, k, mode="same", boundary="symm") for k in bank]
    )
    np.maximum(responses, 0.0, out=responses)
    c, h, w = responses.shape
    ph, pw = max(1, h // _DESK_POOL), max(1, w // _DESK_POOL)
    cropped = responses[:, : ph * _DESK_POOL, : pw * _DESK_POOL]
    if h < _DESK_POOL or w < _DESK_POOL:
        # Tiny images: single pooled cell over whatever is there.
        return responses.mean(axis=(1, 2), keepdims=True)
    return cropped.reshape(c, ph, _DESK_POOL, pw, _DESK_POOL).mean(axis=(2, 4))


DESK_DESCRIPTOR = ExtractorDescriptor("desk16", DESK_CHANNELS)

_REGISTRY: dict[str, Callable[[Image, ExtractorDescriptor], np.ndarray]] = {}


def register_extractor(
    name: str, fn: Callable[[Image, ExtractorDescriptor], np.ndarray]
) -> None:
    _REGISTRY[name] = fn


register_extractor(
    "desk16", lambda image, desc: builtin_desk_extract(image, desc.deterministic_seed)
)


def extract(image: Image, descriptor: ExtractorDescriptor) -> np.ndarray:
    """Run the registered extractor named by the descriptor."""
    try:
        fn = _REGISTRY[descriptor.name]
    except KeyError:
        raise ExtractorError(f"unknown extractor: {descriptor.name!r}") from None
    fmap = fn(image, descriptor)
    if fmap.shape[0] != descriptor.channels:
        raise ExtractorError(
            f"extractor {descriptor.name!r} produced {fmap.shape[0]} channels, "
            f"descriptor declares {descriptor.channels}"
        )
    return fmap
