"""Shared fixtures: synthetic images, hand-written caches, and the
planted-optimum search task."""
from __future__ import annotations

import numpy as np

from autotta.aggregate import AggregationKind
from autotta.cache import CacheHeader, canonical_key, full_grid, write_cache
from autotta.reward import Triplet
from autotta.transforms import TRADEMARK, Image


def make_test_image(seed: int = 0, width: int = 48, height: int = 40) -> Image:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return Image.from_array(arr)


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def write_random_cache(path, image_ids, dim=8, seed=0, profile=TRADEMARK):
    """A full-grid cache of random unit vectors, plus baseline entries."""
    rng = np.random.default_rng(seed)
    records = {}
    for image_id in image_ids:
        records[(image_id, 0, 1)] = random_unit(rng, dim)
        for spec in full_grid():
            key = canonical_key(image_id, int(spec.op), spec.magnitude)
            records[key] = random_unit(rng, dim)
    header = CacheHeader(
        feature_dim=dim,
        entry_count=len(records),
        extractor_name="synthetic",
        aggregation=AggregationKind.MAC,
        profile=profile,
        pca=None,
    )
    write_cache(path, header, records)
    return records


def write_planted_cache(path, planted_op, planted_magnitude, n_triplets=4, dim=8):
    """Search task with one rewarding slot choice.

    For every triplet (a, p, n): under every key except the planted
    (op, magnitude), the negative shares the anchor's direction while the
    positive is orthogonal, so a policy avoiding the planted slot scores
    hinge = sqrt(2) + margin.  The planted key flips that: it sends anchor
    and positive to a shared direction and the negative elsewhere, so the
    reward rises steeply and monotonically with the L1 weight mass on the
    planted slot, reaching exactly 0 for the all-planted policy.
    """
    e = np.eye(dim)
    records = {}
    triplets = []
    for t in range(n_triplets):
        a_id, p_id, n_id = 10 * t + 1, 10 * t + 2, 10 * t + 3
        triplets.append(Triplet(a_id, p_id, n_id))
        vecs = {a_id: e[0], p_id: e[1], n_id: e[0]}
        planted = {a_id: e[3], p_id: e[3], n_id: e[2]}
        for image_id, base in vecs.items():
            records[(image_id, 0, 1)] = base
            for spec in full_grid():
                key = canonical_key(image_id, int(spec.op), spec.magnitude)
                if (
                    key[1] == int(planted_op)
                    and key[2] == planted_magnitude
                ):
                    records[key] = planted[image_id]
                else:
                    records[key] = base
    header = CacheHeader(
        feature_dim=dim,
        entry_count=len(records),
        extractor_name="synthetic",
        aggregation=AggregationKind.MAC,
        profile=TRADEMARK,
        pca=None,
    )
    write_cache(path, header, records)
    return triplets


def write_manifest(tmp_path, images: dict[int, Image]):
    lines = []
    for image_id, image in sorted(images.items()):
        img_path = tmp_path / f"img_{image_id}.png"
        image.save(img_path)
        lines.append(f"{image_id}\t{img_path}")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
