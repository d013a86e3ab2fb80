"""Offline feature cache.

Every (image, op, magnitude) descriptor is computed once and stored in a
flat binary file, then replayed across the ~10,000 policy-search
iterations.  Stored vectors are fully post-processed (aggregation, PCA,
L2) unit vectors in float32.

File layout (little-endian):
    magic "TTAC" | version u16 | feature_dim u32 | entry_count u64
    | extractor_name u16-length-prefixed UTF-8 | aggregation tag u8
    | profile tag u8 | pca_present u8
    | [input_dim u32 | output_dim u32 | mean | components | scale as f32]
    | entry_count records of:
        image_id u64 | op_id u8 | magnitude u8 | 6 zero bytes | dim f32s
Records sorted by (image_id, op_id, magnitude).  op_id 0 is the reserved
baseline key holding the untransformed image's descriptor.
"""
from __future__ import annotations

import concurrent.futures
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import Aggregator, AggregationKind, PcaModel, PostprocessStats, postprocess
from .extractor import ExtractorDescriptor, extract
from .transforms import (
    MAGNITUDE_FREE,
    DomainProfile,
    Image,
    TransformOp,
    TransformSpec,
    apply,
    profile_by_name,
)

MAGIC = b"TTAC"
VERSION = 1
BASELINE_OP_ID = 0

_PROFILE_TAGS = {"trademark": 1, "landmark": 2}
_PROFILE_NAMES = {v: k for k, v in _PROFILE_TAGS.items()}


class CacheError(Exception):
    pass


class CacheFormatError(CacheError):
    """Strict reader rejection: the file is not a valid cache."""


class CacheKeyError(CacheError):
    """Lookup of a key that is not in the cache."""


class CacheBuildError(CacheError):
    pass


def canonical_key(image_id: int, op_id: int, magnitude: int) -> tuple[int, int, int]:
    """Magnitude-free ops (and the baseline) always store magnitude 1."""
    if op_id == BASELINE_OP_ID or TransformOp(op_id) in MAGNITUDE_FREE:
        magnitude = 1
    return (image_id, op_id, magnitude)


def full_grid() -> list[TransformSpec]:
    """All 125 canonical keys: 12 ranged ops x 10 levels + 5 magnitude-free."""
    grid = []
    for op in TransformOp:
        if op in MAGNITUDE_FREE:
            grid.append(TransformSpec(op, 1))
        else:
            grid.extend(TransformSpec(op, level) for level in range(1, 11))
    return grid


@dataclass(frozen=True)
class CacheHeader:
    feature_dim: int
    entry_count: int
    extractor_name: str
    aggregation: AggregationKind
    profile: DomainProfile
    pca: PcaModel | None


@dataclass
class BuildReport:
    header: CacheHeader
    grid_entries: int
    baseline_entries: int
    errors: list[tuple[int, str, str]] = field(default_factory=list)
    zero_vector_substitutions: int = 0


def read_manifest(path) -> list[tuple[int, str]]:
    """Parse an "image_id<TAB>path" manifest."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CacheBuildError(f"{path}:{lineno}: expected 'image_id<TAB>path'")
            try:
                image_id = int(parts[0])
            except ValueError:
                raise CacheBuildError(f"{path}:{lineno}: bad image id {parts[0]!r}") from None
            entries.append((image_id, parts[1]))
    return entries


def _pack_header(header: CacheHeader) -> bytes:
    name = header.extractor_name.encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HIQ", VERSION, header.feature_dim, header.entry_count)
    out += struct.pack("<H", len(name)) + name
    out += struct.pack(
        "<BBB",
        int(header.aggregation),
        _PROFILE_TAGS[header.profile.name],
        0 if header.pca is None else 1,
    )
    if header.pca is not None:
        pca = header.pca
        out += struct.pack("<II", pca.input_dim, pca.output_dim)
        out += pca.mean.astype("<f4").tobytes()
        out += np.ascontiguousarray(pca.components).astype("<f4").tobytes()
        out += pca.whitening_scale.astype("<f4").tobytes()
    return bytes(out)


def _describe(
    fmap: np.ndarray,
    aggregation: Aggregator,
    pca: PcaModel | None,
    stats: PostprocessStats,
) -> np.ndarray:
    # R-MAC consumes the PCA model per region; everything else whitens the
    # pooled descriptor once.
    if aggregation.kind is AggregationKind.RMAC and pca is not None:
        return postprocess(aggregation(fmap, pca), None, stats)
    return postprocess(aggregation(fmap), pca, stats)


def _image_entries(
    image_id: int,
    path: str,
    grid: list[TransformSpec],
    descriptor: ExtractorDescriptor,
    aggregation: Aggregator,
    pca: PcaModel | None,
    profile: DomainProfile,
    stats: PostprocessStats,
) -> list[tuple[tuple[int, int, int], np.ndarray]]:
    image = Image.open(path)
    entries = []
    # Baseline key: untransformed image under the reserved op id.
    base = _describe(extract(image, descriptor), aggregation, pca, stats)
    entries.append(((image_id, BASELINE_OP_ID, 1), base))
    for spec in grid:
        transformed = apply(spec, image, profile)
        vec = _describe(extract(transformed, descriptor), aggregation, pca, stats)
        key = canonical_key(image_id, int(spec.op), spec.magnitude)
        entries.append((key, vec))
    return entries


def _worker_count() -> int:
    cap = os.environ.get("TTA_WORKERS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def build_cache(
    manifest: list[tuple[int, str]],
    grid: list[TransformSpec],
    descriptor: ExtractorDescriptor,
    aggregation: Aggregator,
    pca: PcaModel | None,
    profile: DomainProfile,
    path,
) -> BuildReport:
    """Compute and persist descriptors for every (image, grid spec) pair
    plus one baseline entry per image.  Deterministic: rebuilding from the
    same inputs yields a byte-identical file."""
    if not grid:
        raise CacheBuildError("transform grid is empty")
    if not manifest:
        raise CacheBuildError("image manifest is empty")

    stats = PostprocessStats()
    errors: list[tuple[int, str, str]] = []
    records: dict[tuple[int, int, int], np.ndarray] = {}

    def run(item):
        image_id, img_path = item
        return image_id, img_path, _image_entries(
            image_id, img_path, grid, descriptor, aggregation, pca, profile, stats
        )

    workers = _worker_count()
    if workers > 1 and len(manifest) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, item) for item in manifest]
            results = []
            for item, fut in zip(manifest, futures):
                try:
                    results.append(fut.result())
                except OSError as exc:
                    errors.append((item[0], item[1], str(exc)))
    else:
        results = []
        for item in manifest:
            try:
                results.append(run(item))
            except OSError as exc:
                errors.append((item[0], item[1], str(exc)))

    for _, _, entries in results:
        for key, vec in entries:
            records[key] = vec

    if not records:
        raise CacheBuildError("no cache entries could be built")

    feature_dim = next(iter(records.values())).shape[0]
    header = CacheHeader(
        feature_dim=feature_dim,
        entry_count=len(records),
        extractor_name=descriptor.name,
        aggregation=aggregation.kind,
        profile=profile,
        pca=pca,
    )
    write_cache(path, header, records)

    n_images = len(results)
    return BuildReport(
        header=header,
        grid_entries=len(records) - n_images,
        baseline_entries=n_images,
        errors=errors,
        zero_vector_substitutions=stats.zero_vector_substitutions,
    )


def write_cache(
    path, header: CacheHeader, records: dict[tuple[int, int, int], np.ndarray]
) -> None:
    """Serialize a header and key-sorted records to the cache format."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_pack_header(header))
        for key in sorted(records):
            image_id, op_id, magnitude = key
            fh.write(struct.pack("<QBB6x", image_id, op_id, magnitude))
            fh.write(np.asarray(records[key]).astype("<f4").tobytes())
    os.replace(tmp, path)


_RECORD_KEY = struct.Struct("<QBB6x")


class FeatureCache:
    """Read-only cache with an in-memory key index; safe to share across
    threads once opened."""

    def __init__(self, path, strict: bool = True):
        self.path = Path(path)
        data = self.path.read_bytes()
        self.header, offset = self._parse_header(data)
        self._record_size = _RECORD_KEY.size + 4 * self.header.feature_dim
        body = len(data) - offset
        if body != self.header.entry_count * self._record_size:
            raise CacheFormatError(
                f"body is {body} bytes, expected "
                f"{self.header.entry_count * self._record_size}"
            )
        self._data = data
        self._offset = offset
        self._index: dict[tuple[int, int, int], int] = {}
        prev = None
        for i in range(self.header.entry_count):
            rec = offset + i * self._record_size
            image_id, op_id, magnitude = struct.unpack_from("<QBB", data, rec)
            if data[rec + 10 : rec + 16] != b"\x00" * 6:
                raise CacheFormatError(f"record {i}: nonzero padding")
            if op_id > 17:
                raise CacheFormatError(f"record {i}: op id {op_id} out of range")
            if not 1 <= magnitude <= 10:
                raise CacheFormatError(f"record {i}: magnitude {magnitude} out of range")
            if op_id == BASELINE_OP_ID or TransformOp(op_id) in MAGNITUDE_FREE:
                if magnitude != 1:
                    raise CacheFormatError(
                        f"record {i}: non-canonical magnitude {magnitude} for op {op_id}"
                    )
            key = (image_id, op_id, magnitude)
            if prev is not None and key <= prev:
                raise CacheFormatError(f"record {i}: keys not sorted")
            prev = key
            if strict:
                vec = self._vector_at(rec)
                if not np.all(np.isfinite(vec)):
                    raise CacheFormatError(f"record {i}: non-finite feature values")
                norm = float(np.linalg.norm(vec))
                if abs(norm - 1.0) > 1e-3:
                    raise CacheFormatError(
                        f"record {i}: stored vector norm {norm:.6f} is not unit"
                    )
            self._index[key] = rec

    @staticmethod
    def _parse_header(data: bytes) -> tuple[CacheHeader, int]:
        if len(data) < 4 + struct.calcsize("<HIQ") + 2 + 3:
            raise CacheFormatError("file too short for a cache header")
        if data[:4] != MAGIC:
            raise CacheFormatError(f"bad magic {data[:4]!r}")
        version, feature_dim, entry_count = struct.unpack_from("<HIQ", data, 4)
        if version != VERSION:
            raise CacheFormatError(f"unsupported cache version {version}")
        if feature_dim == 0:
            raise CacheFormatError("feature_dim must be positive")
        if entry_count == 0:
            raise CacheFormatError("cache holds no entries")
        offset = 4 + struct.calcsize("<HIQ")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        try:
            extractor_name = data[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise CacheFormatError("extractor name is not valid UTF-8") from None
        offset += name_len
        agg_tag, profile_tag, pca_present = struct.unpack_from("<BBB", data, offset)
        offset += 3
        try:
            aggregation = AggregationKind(agg_tag)
        except ValueError:
            raise CacheFormatError(f"unknown aggregation tag {agg_tag}") from None
        if profile_tag not in _PROFILE_NAMES:
            raise CacheFormatError(f"unknown profile tag {profile_tag}")
        profile = profile_by_name(_PROFILE_NAMES[profile_tag])
        if pca_present not in (0, 1):
            raise CacheFormatError(f"bad pca_present flag {pca_present}")
        pca = None
        if pca_present:
            if len(data) < offset + 8:
                raise CacheFormatError("truncated PCA block")
            input_dim, output_dim = struct.unpack_from("<II", data, offset)
            offset += 8
            if input_dim == 0 or output_dim == 0 or output_dim > input_dim:
                raise CacheFormatError(
                    f"bad PCA dims in={input_dim} out={output_dim}"
                )
            need = 4 * (input_dim + output_dim * input_dim + output_dim)
            if len(data) < offset + need:
                raise CacheFormatError("truncated PCA block")
            mean = np.frombuffer(data, "<f4", input_dim, offset).astype(np.float64)
            offset += 4 * input_dim
            components = (
                np.frombuffer(data, "<f4", output_dim * input_dim, offset)
                .astype(np.float64)
                .reshape(output_dim, input_dim)
            )
            offset += 4 * output_dim * input_dim
            scale = np.frombuffer(data, "<f4", output_dim, offset).astype(np.float64)
            offset += 4 * output_dim
            if not (
                np.all(np.isfinite(mean))
                and np.all(np.isfinite(components))
                and np.all(np.isfinite(scale))
            ):
                raise CacheFormatError("non-finite PCA parameters")
            if np.any(scale <= 0):
                raise CacheFormatError("non-positive PCA whitening scale")
            pca = PcaModel(mean=mean, components=components, whitening_scale=scale)
            if pca.output_dim != feature_dim:
                raise CacheFormatError(
                    f"PCA output dim {pca.output_dim} != feature_dim {feature_dim}"
                )
        header = CacheHeader(
            feature_dim=feature_dim,
            entry_count=entry_count,
            extractor_name=extractor_name,
            aggregation=aggregation,
            profile=profile,
            pca=pca,
        )
        return header, offset

    def _vector_at(self, rec: int) -> np.ndarray:
        return np.frombuffer(
            self._data, "<f4", self.header.feature_dim, rec + _RECORD_KEY.size
        )

    def __contains__(self, key) -> bool:
        return canonical_key(*key) in self._index

    @property
    def image_ids(self) -> list[int]:
        return sorted({k[0] for k in self._index})

    def get(self, image_id: int, op_id: int, magnitude: int = 1) -> np.ndarray:
        key = canonical_key(image_id, op_id, magnitude)
        try:
            rec = self._index[key]
        except KeyError:
            raise CacheKeyError(
                f"no cache entry for image={key[0]} op={key[1]} magnitude={key[2]}"
            ) from None
        return self._vector_at(rec).astype(np.float64)

    def accumulate_weighted(
        self, image_id: int, slots: list[tuple[int, int, float]]
    ) -> np.ndarray:
        """Streaming weighted sum over slot entries; memory use does not
        grow with the slot count.  Output is not L2-normalized."""
        acc = np.zeros(self.header.feature_dim)
        for op_id, magnitude, weight in slots:
            acc += weight * self.get(image_id, op_id, magnitude)
        return acc
