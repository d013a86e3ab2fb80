"""Image transformation bank.

Seventeen transformations over 8-bit RGB images, each with an optional
magnitude discretized into 10 levels that map linearly onto the
transformation's real-valued parameter range.  Five operations
(AutoContrast, Invert, Equalize, HorizontalFlip, Contour) take no
magnitude.  All functions here are pure; images are immutable value
objects.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import ImageEnhance, ImageFilter, ImageOps


class TransformError(Exception):
    """Base class for transformation errors."""


class NoMagnitudeError(TransformError):
    """Raised when a magnitude value is requested for a magnitude-free op."""


class TransformOp(enum.IntEnum):
    RESIZE = 1
    ROTATE = 2
    SHEAR_X = 3
    SHEAR_Y = 4
    TRANSLATE_X = 5
    TRANSLATE_Y = 6
    AUTO_CONTRAST = 7
    INVERT = 8
    EQUALIZE = 9
    SOLARIZE = 10
    POSTERIZE = 11
    CONTRAST = 12
    COLOR = 13
    BRIGHTNESS = 14
    SHARPNESS = 15
    HORIZONTAL_FLIP = 16
    CONTOUR = 17


OP_NAMES: dict[TransformOp, str] = {
    TransformOp.RESIZE: "Resize",
    TransformOp.ROTATE: "Rotate",
    TransformOp.SHEAR_X: "ShearX",
    TransformOp.SHEAR_Y: "ShearY",
    TransformOp.TRANSLATE_X: "TranslateX",
    TransformOp.TRANSLATE_Y: "TranslateY",
    TransformOp.AUTO_CONTRAST: "AutoContrast",
    TransformOp.INVERT: "Invert",
    TransformOp.EQUALIZE: "Equalize",
    TransformOp.SOLARIZE: "Solarize",
    TransformOp.POSTERIZE: "Posterize",
    TransformOp.CONTRAST: "Contrast",
    TransformOp.COLOR: "Color",
    TransformOp.BRIGHTNESS: "Brightness",
    TransformOp.SHARPNESS: "Sharpness",
    TransformOp.HORIZONTAL_FLIP: "HorizontalFlip",
    TransformOp.CONTOUR: "Contour",
}

# Accepted spellings on parse; canonical spelling on format.
OP_ALIASES: dict[str, TransformOp] = {name.lower(): op for op, name in OP_NAMES.items()}
OP_ALIASES.update(
    {
        "solarise": TransformOp.SOLARIZE,
        "horizontal-flip": TransformOp.HORIZONTAL_FLIP,
        "equalise": TransformOp.EQUALIZE,
    }
)

MAGNITUDE_FREE = frozenset(
    {
        TransformOp.AUTO_CONTRAST,
        TransformOp.INVERT,
        TransformOp.EQUALIZE,
        TransformOp.HORIZONTAL_FLIP,
        TransformOp.CONTOUR,
    }
)

# Parameter ranges for the 11 non-Resize ranged ops; Resize takes its
# range from the domain profile.
MAGNITUDE_RANGES: dict[TransformOp, tuple[float, float]] = {
    TransformOp.ROTATE: (-180.0, 162.0),
    TransformOp.SHEAR_X: (-0.3, 0.3),
    TransformOp.SHEAR_Y: (-0.3, 0.3),
    TransformOp.TRANSLATE_X: (-0.45, 0.36),
    TransformOp.TRANSLATE_Y: (-0.45, 0.36),
    TransformOp.SOLARIZE: (0.0, 256.0),
    TransformOp.POSTERIZE: (1.0, 8.0),
    TransformOp.CONTRAST: (0.1, 1.9),
    TransformOp.COLOR: (0.1, 1.9),
    TransformOp.BRIGHTNESS: (0.4, 1.9),
    TransformOp.SHARPNESS: (0.1, 1.9),
}

N_LEVELS = 10


@dataclass(frozen=True)
class DomainProfile:
    """Retrieval domain; fixes the Resize magnitude range."""

    name: str
    resize_range: tuple[int, int]


TRADEMARK = DomainProfile("trademark", (64, 352))
LANDMARK = DomainProfile("landmark", (384, 1536))

_PROFILES = {p.name: p for p in (TRADEMARK, LANDMARK)}


def profile_by_name(name: str) -> DomainProfile:
    try:
        return _PROFILES[name]
    except KeyError:
        raise TransformError(f"unknown domain profile: {name!r}") from None


@dataclass(frozen=True)
class Image:
    """8-bit RGB raster stored as row-major packed bytes."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise TransformError("image dimensions must be >= 1")
        if len(self.pixels) != self.width * self.height * 3:
            raise TransformError(
                f"pixel buffer has {len(self.pixels)} bytes, expected "
                f"{self.width * self.height * 3}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        h, w, _ = arr.shape
        return cls(w, h, arr.tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )

    @classmethod
    def from_pil(cls, img: PILImage.Image) -> "Image":
        return cls.from_array(np.asarray(img.convert("RGB")))

    def to_pil(self) -> PILImage.Image:
        return PILImage.fromarray(self.to_array(), mode="RGB")

    @classmethod
    def open(cls, path) -> "Image":
        with PILImage.open(path) as img:
            return cls.from_pil(img)

    def save(self, path) -> None:
        self.to_pil().save(path)


@dataclass(frozen=True)
class TransformSpec:
    """One (operation, magnitude level) slot."""

    op: TransformOp
    magnitude: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.magnitude <= N_LEVELS:
            raise TransformError(f"magnitude level {self.magnitude} not in [1, 10]")


def op_requires_magnitude(op: TransformOp) -> bool:
    return op not in MAGNITUDE_FREE


def magnitude_value(op: TransformOp, level: int, profile: DomainProfile) -> float:
    """Map a discrete level in [1, 10] onto the op's parameter range.

    Level 1 hits the range's low endpoint and level 10 the high endpoint.
    Resize values are rounded to whole pixels.
    """
    if op in MAGNITUDE_FREE:
        raise NoMagnitudeError(f"{OP_NAMES[op]} takes no magnitude")
    if not 1 <= level <= N_LEVELS:
        raise TransformError(f"magnitude level {level} not in [1, 10]")
    if op is TransformOp.RESIZE:
        lo, hi = profile.resize_range
    else:
        lo, hi = MAGNITUDE_RANGES[op]
    value = lo + (level - 1) * (hi - lo) / (N_LEVELS - 1)
    if op is TransformOp.RESIZE:
        return float(round(value))
    return value


def _translate(arr: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """Shift along an axis, filling the exposed band with an edge reflection."""
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


def _resize(img: PILImage.Image, target: int) -> PILImage.Image:
    w, h = img.size
    scale = target / max(w, h)
    new_w = max(1, round(w * scale))
    new_h = max(1, round(h * scale))
    if max(w, h) == w:
        new_w = target
    else:
        new_h = target
    return img.resize((new_w, new_h), PILImage.BILINEAR)


def apply(spec: TransformSpec, image: Image, profile: DomainProfile) -> Image:
    """Apply one transformation slot to an image."""
    op = spec.op
    if op in MAGNITUDE_FREE:
        pil = image.to_pil()
        if op is TransformOp.AUTO_CONTRAST:
            return Image.from_pil(ImageOps.autocontrast(pil))
        if op is TransformOp.INVERT:
            return Image.from_pil(ImageOps.invert(pil))
        if op is TransformOp.EQUALIZE:
            return Image.from_pil(ImageOps.equalize(pil))
        if op is TransformOp.HORIZONTAL_FLIP:
            return Image.from_pil(ImageOps.mirror(pil))
        # Contour: edge extraction plus inversion (PIL's CONTOUR kernel).
        return Image.from_pil(pil.filter(ImageFilter.CONTOUR))

    value = magnitude_value(op, spec.magnitude, profile)

    if op is TransformOp.RESIZE:
        return Image.from_pil(_resize(image.to_pil(), int(value)))
    if op is TransformOp.ROTATE:
        # Original canvas kept; exposed corners filled with black.
        return Image.from_pil(
            image.to_pil().rotate(value, resample=PILImage.BILINEAR, fillcolor=(0, 0, 0))
        )
    if op is TransformOp.SHEAR_X:
        return Image.from_pil(
            image.to_pil().transform(
                (image.width, image.height),
                PILImage.AFFINE,
                (1.0, value, 0.0, 0.0, 1.0, 0.0),
                resample=PILImage.BILINEAR,
                fillcolor=(0, 0, 0),
            )
        )
    if op is TransformOp.SHEAR_Y:
        return Image.from_pil(
            image.to_pil().transform(
                (image.width, image.height),
                PILImage.AFFINE,
                (1.0, 0.0, 0.0, value, 1.0, 0.0),
                resample=PILImage.BILINEAR,
                fillcolor=(0, 0, 0),
            )
        )
    if op is TransformOp.TRANSLATE_X:
        shift = round(value * image.width)
        return Image.from_array(_translate(image.to_array(), shift, axis=1))
    if op is TransformOp.TRANSLATE_Y:
        shift = round(value * image.height)
        return Image.from_array(_translate(image.to_array(), shift, axis=0))
    if op is TransformOp.SOLARIZE:
        arr = image.to_array()
        return Image.from_array(np.where(arr > value, 255 - arr, arr))
    if op is TransformOp.POSTERIZE:
        bits = int(round(value))
        mask = np.uint8(0xFF & ~((1 << (8 - bits)) - 1))
        return Image.from_array(image.to_array() & mask)

    enhancer = {
        TransformOp.CONTRAST: ImageEnhance.Contrast,
        TransformOp.COLOR: ImageEnhance.Color,
        TransformOp.BRIGHTNESS: ImageEnhance.Brightness,
        TransformOp.SHARPNESS: ImageEnhance.Sharpness,
    }[op]
    return Image.from_pil(enhancer(image.to_pil()).enhance(value))
