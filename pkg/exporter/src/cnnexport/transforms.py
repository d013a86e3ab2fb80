"""Transformation grid and backbone preprocessing.

Images are uint8 RGB arrays of shape (H, W, 3).  The transformation
semantics mirror the search engine's grid exactly; the conformance test
suite pins both implementations against the same corpus.
"""
from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from PIL import ImageEnhance, ImageFilter, ImageOps


class TransformError(Exception):
    pass


# op_id -> canonical name; 0 is the reserved baseline key in the cache.
OP_NAMES = {
    1: "Resize",
    2: "Rotate",
    3: "ShearX",
    4: "ShearY",
    5: "TranslateX",
    6: "TranslateY",
    7: "AutoContrast",
    8: "Invert",
    9: "Equalize",
    10: "Solarize",
    11: "Posterize",
    12: "Contrast",
    13: "Color",
    14: "Brightness",
    15: "Sharpness",
    16: "HorizontalFlip",
    17: "Contour",
}

MAGNITUDE_FREE = frozenset({7, 8, 9, 16, 17})

# Parameter ranges; Resize (op 1) takes its range from the profile.
RANGES = {
    2: (-180.0, 162.0),
    3: (-0.3, 0.3),
    4: (-0.3, 0.3),
    5: (-0.45, 0.36),
    6: (-0.45, 0.36),
    10: (0.0, 256.0),
    11: (1.0, 8.0),
    12: (0.1, 1.9),
    13: (0.1, 1.9),
    14: (0.4, 1.9),
    15: (0.1, 1.9),
}

PROFILE_RESIZE = {"trademark": (64, 352), "landmark": (384, 1536)}
PROFILE_TAGS = {"trademark": 1, "landmark": 2}

N_LEVELS = 10

# Backbone input policy per profile: trademarks are padded square and
# resized to a fixed edge; landmarks are only capped.
TRADEMARK_INPUT_EDGE = 224
LANDMARK_MAX_EDGE = 1024
PAD_COLOR = (255, 255, 255)


def full_grid() -> list[tuple[int, int]]:
    """All 125 (op_id, magnitude) cache keys."""
    grid = []
    for op_id in sorted(OP_NAMES):
        if op_id in MAGNITUDE_FREE:
            grid.append((op_id, 1))
        else:
            grid.extend((op_id, level) for level in range(1, N_LEVELS + 1))
    return grid


def level_value(op_id: int, level: int, profile: str) -> float:
    if op_id in MAGNITUDE_FREE:
        raise TransformError(f"{OP_NAMES[op_id]} takes no magnitude")
    if not 1 <= level <= N_LEVELS:
        raise TransformError(f"magnitude level {level} not in [1, 10]")
    lo, hi = PROFILE_RESIZE[profile] if op_id == 1 else RANGES[op_id]
    value = lo + (level - 1) * (hi - lo) / (N_LEVELS - 1)
    return float(round(value)) if op_id == 1 else value


def _to_pil(arr: np.ndarray) -> PILImage.Image:
    return PILImage.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB")


def _from_pil(img: PILImage.Image) -> np.ndarray:
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _translate(arr: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """Shift with symmetric edge reflection filling the exposed band."""
    if shift == 0:
        return arr
    extent = arr.shape[axis]
    s = abs(shift)
    if s >= extent:
        s = extent - 1
        shift = s if shift > 0 else -s
        if s == 0:
            return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (s, s)
    padded = np.pad(arr, pad, mode="symmetric")
    start = s - shift
    return np.take(padded, np.arange(start, start + extent), axis=axis)


def _resize_longest(img: PILImage.Image, target: int) -> PILImage.Image:
    w, h = img.size
    scale = target / max(w, h)
    new_w = max(1, round(w * scale))
    new_h = max(1, round(h * scale))
    if max(w, h) == w:
        new_w = target
    else:
        new_h = target
    return img.resize((new_w, new_h), PILImage.BILINEAR)


def apply_transform(arr: np.ndarray, op_id: int, level: int, profile: str) -> np.ndarray:
    """Apply one grid entry to an image array."""
    if op_id in MAGNITUDE_FREE:
        pil = _to_pil(arr)
        if op_id == 7:
            return _from_pil(ImageOps.autocontrast(pil))
        if op_id == 8:
            return _from_pil(ImageOps.invert(pil))
        if op_id == 9:
            return _from_pil(ImageOps.equalize(pil))
        if op_id == 16:
            return _from_pil(ImageOps.mirror(pil))
        return _from_pil(pil.filter(ImageFilter.CONTOUR))

    value = level_value(op_id, level, profile)
    height, width = arr.shape[:2]

    if op_id == 1:
        return _from_pil(_resize_longest(_to_pil(arr), int(value)))
    if op_id == 2:
        return _from_pil(
            _to_pil(arr).rotate(value, resample=PILImage.BILINEAR, fillcolor=(0, 0, 0))
        )
    if op_id in (3, 4):
        coeffs = (1.0, value, 0.0, 0.0, 1.0, 0.0) if op_id == 3 else (
            1.0, 0.0, 0.0, value, 1.0, 0.0
        )
        return _from_pil(
            _to_pil(arr).transform(
                (width, height),
                PILImage.AFFINE,
                coeffs,
                resample=PILImage.BILINEAR,
                fillcolor=(0, 0, 0),
            )
        )
    if op_id == 5:
        return _translate(arr, round(value * width), axis=1)
    if op_id == 6:
        return _translate(arr, round(value * height), axis=0)
    if op_id == 10:
        return np.where(arr > value, 255 - arr, arr).astype(np.uint8)
    if op_id == 11:
        bits = int(round(value))
        mask = np.uint8(0xFF & ~((1 << (8 - bits)) - 1))
        return (arr & mask).astype(np.uint8)

    enhancer = {
        12: ImageEnhance.Contrast,
        13: ImageEnhance.Color,
        14: ImageEnhance.Brightness,
        15: ImageEnhance.Sharpness,
    }[op_id]
    return _from_pil(enhancer(_to_pil(arr)).enhance(value))


def preprocess(arr: np.ndarray, profile: str) -> np.ndarray:
    """Shape an image for the backbone.

    Trademarks: symmetric white padding to a square, then a fixed
    224 x 224 input.  Landmarks: cap the longest edge at 1024, otherwise
    keep the native resolution.
    """
    if profile == "trademark":
        height, width = arr.shape[:2]
        side = max(height, width)
        pad_y = side - height
        pad_x = side - width
        if pad_y or pad_x:
            canvas = np.full((side, side, 3), PAD_COLOR, dtype=np.uint8)
            y0 = pad_y // 2
            x0 = pad_x // 2
            canvas[y0 : y0 + height, x0 : x0 + width] = arr
            arr = canvas
        pil = _to_pil(arr).resize(
            (TRADEMARK_INPUT_EDGE, TRADEMARK_INPUT_EDGE), PILImage.BILINEAR
        )
        return _from_pil(pil)
    if profile == "landmark":
        if max(arr.shape[:2]) > LANDMARK_MAX_EDGE:
            return _from_pil(_resize_longest(_to_pil(arr), LANDMARK_MAX_EDGE))
        return arr
    raise TransformError(f"unknown profile {profile!r}")
