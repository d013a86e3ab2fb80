"""Writer for the TTAC feature-cache format.

Layout (little-endian):
    magic "TTAC" | version u16 | feature_dim u32 | entry_count u64
    | extractor_name u16-length-prefixed UTF-8 | aggregation tag u8
    | profile tag u8 | pca_present u8
    | [input_dim u32 | output_dim u32 | mean | components | scale as f32]
    | records of: image_id u64 | op_id u8 | magnitude u8 | 6 zero bytes
      | feature_dim f32s, sorted by (image_id, op_id, magnitude)
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TTAC"
VERSION = 1
BASELINE_OP_ID = 0


class CacheWriteError(Exception):
    pass


def write_cache(
    path,
    feature_dim: int,
    extractor_name: str,
    aggregation_tag: int,
    profile_tag: int,
    pca,
    records: dict[tuple[int, int, int], np.ndarray],
) -> None:
    """Serialize records (keyed by image_id, op_id, magnitude) atomically."""
    if not records:
        raise CacheWriteError("no records to write")
    name = extractor_name.encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HIQ", VERSION, feature_dim, len(records)))
        fh.write(struct.pack("<H", len(name)) + name)
        fh.write(struct.pack("<BBB", aggregation_tag, profile_tag, 0 if pca is None else 1))
        if pca is not None:
            input_dim = pca.mean.shape[0]
            output_dim = pca.scale.shape[0]
            fh.write(struct.pack("<II", input_dim, output_dim))
            fh.write(pca.mean.astype("<f4").tobytes())
            fh.write(np.ascontiguousarray(pca.components).astype("<f4").tobytes())
            fh.write(pca.scale.astype("<f4").tobytes())
        for key in sorted(records):
            image_id, op_id, magnitude = key
            vec = np.asarray(records[key])
            if vec.shape != (feature_dim,):
                raise CacheWriteError(
                    f"record {key}: vector shape {vec.shape} != ({feature_dim},)"
                )
            fh.write(struct.pack("<QBB6x", image_id, op_id, magnitude))
            fh.write(vec.astype("<f4").tobytes())
    os.replace(tmp, path)
