"""Batch export of backbone features into the cache format."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .aggregate import AGGREGATION_TAGS, PcaWhitener, aggregate, l2_normalize
from .backbones import extract_fmap, layer_channels, load_backbone
from .cachefmt import BASELINE_OP_ID, write_cache
from .transforms import (
    MAGNITUDE_FREE,
    PROFILE_TAGS,
    apply_transform,
    full_grid,
    preprocess,
)


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportJob:
    manifest: str
    backbone: str
    layer: str
    profile: str = "trademark"
    aggregation: str = "mac"
    pca_dim: int | None = None
    out_path: str = "features.ttac"
    pretrained: bool = True

    def __post_init__(self) -> None:
        if self.profile not in PROFILE_TAGS:
            raise ExportError(f"unknown profile {self.profile!r}")
        if self.aggregation not in AGGREGATION_TAGS:
            raise ExportError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class ExportReport:
    feature_dim: int
    entry_count: int
    n_images: int
    errors: list[tuple[int, str, str]]


def read_manifest(path) -> list[tuple[int, str]]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ExportError(f"{path}:{lineno}: expected 'image_id<TAB>path'")
            try:
                image_id = int(parts[0])
            except ValueError:
                raise ExportError(f"{path}:{lineno}: bad image id {parts[0]!r}") from None
            entries.append((image_id, parts[1]))
    if not entries:
        raise ExportError(f"{path}: manifest is empty")
    return entries


def _load_image(path: str) -> np.ndarray:
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def export(job: ExportJob, grid: list[tuple[int, int]] | None = None) -> ExportReport:
    """Run the backbone over every (image, grid entry) and write the cache.

    The PCA whitener, when requested, is fit on the untransformed images
    only; every stored vector is whitened with that one model.
    """
    entries = read_manifest(job.manifest)
    module = load_backbone(job.backbone, job.layer, job.pretrained)
    agg_tag = AGGREGATION_TAGS[job.aggregation]
    channels = layer_channels(job.backbone, job.layer)
    if grid is None:
        grid = full_grid()
    if not grid:
        raise ExportError("transform grid is empty")

    images = []
    errors: list[tuple[int, str, str]] = []
    for image_id, path in entries:
        try:
            images.append((image_id, _load_image(path)))
        except OSError as exc:
            errors.append((image_id, path, str(exc)))
    if not images:
        raise ExportError("no images could be read")

    def pooled(arr: np.ndarray) -> np.ndarray:
        fmap = extract_fmap(module, preprocess(arr, job.profile))
        if fmap.shape[0] != channels:
            raise ExportError(
                f"layer produced {fmap.shape[0]} channels, expected {channels}"
            )
        return aggregate(fmap, agg_tag)

    baselines = {image_id: pooled(arr) for image_id, arr in images}

    pca = None
    if job.pca_dim is not None:
        corpus = np.stack(list(baselines.values()))
        pca = PcaWhitener.fit(corpus, job.pca_dim)
    feature_dim = channels if pca is None else job.pca_dim

    def finish(v: np.ndarray) -> np.ndarray:
        return l2_normalize(v if pca is None else pca(v))

    records: dict[tuple[int, int, int], np.ndarray] = {}
    for image_id, arr in images:
        records[(image_id, BASELINE_OP_ID, 1)] = finish(baselines[image_id])
        for op_id, magnitude in grid:
            key_mag = 1 if op_id in MAGNITUDE_FREE else magnitude
            transformed = apply_transform(arr, op_id, magnitude, job.profile)
            records[(image_id, op_id, key_mag)] = finish(pooled(transformed))

    write_cache(
        job.out_path,
        feature_dim,
        f"{job.backbone}:{job.layer}",
        agg_tag,
        PROFILE_TAGS[job.profile],
        pca,
        records,
    )
    return ExportReport(
        feature_dim=feature_dim,
        entry_count=len(records),
        n_images=len(images),
        errors=errors,
    )
