"""Joint feature space: normalization, similarity, crop-averaged extraction, storage.

Image and text features live in a shared d-dimensional space; downstream
training always conditions on the unit-normalized vectors. Features are
persisted in a small binary format (``.lftf``) with a JSON-lines manifest
so externally extracted features can be ingested from any language.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, DimensionError, FormatError, NormalizationError

UNIT_TOL = 1e-6

STORE_MAGIC = b"LFTF"
STORE_VERSION = 1


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2 as float64. Raises NormalizationError on a zero vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NormalizationError("vector has non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise NormalizationError("cannot normalize a zero vector")
    return v / norm


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity <u,v> / (||u|| ||v||), in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise NormalizationError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class AugmentSpec:
    """Random-crop augmentation: k crops with side drawn uniformly from [a, w]."""

    k: int
    a: int
    w: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"crop count k must be >= 1, got {self.k}")
        if not (1 <= self.a <= self.w):
            raise ConfigError(f"need 1 <= a <= w, got a={self.a}, w={self.w}")

    @property
    def disabled(self) -> bool:
        return self.k == 1 and self.a == self.w


@dataclass(frozen=True)
class EncoderPair:
    """Matched image/text encoders emitting vectors of a shared dimension d.

    Both callables must be deterministic: the same input always yields the
    identical output vector.
    """

    image_encoder: Callable
    text_encoder: Callable
    d: int


def _resize_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    """Resize an (H, W, C) float array to (side, side, C) with bilinear sampling."""
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(side, side), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


def extract_image_feature(
    x: np.ndarray,
    enc: EncoderPair,
    aug: AugmentSpec | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Crop-averaged image feature.

    Takes k random square crops of x, each with side drawn uniformly from the
    integers [a, w] and position uniform over valid offsets, resizes each crop
    back to w x w (bilinear), encodes it, and returns the mean feature. With
    augmentation disabled (aug is None, or k == 1 and a == w) this is exactly
    ``enc.image_encoder(x)``.
    """
    if aug is None or aug.disabled:
        return np.asarray(enc.image_encoder(x), dtype=np.float64)
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"expected a square (H, H, C) image, got shape {x.shape}")
    w = x.shape[0]
    if w < aug.a:
        raise ConfigError(f"image side {w} smaller than minimum crop side a={aug.a}")
    acc = np.zeros(enc.d, dtype=np.float64)
    for _ in range(aug.k):
        side = int(rng.integers(aug.a, w + 1))
        top = int(rng.integers(0, w - side + 1))
        left = int(rng.integers(0, w - side + 1))
        crop = x[top : top + side, left : left + side]
        if side != w:
            crop = _resize_bilinear(crop, w)
        acc += np.asarray(enc.image_encoder(crop), dtype=np.float64)
    return acc / aug.k


@dataclass(frozen=True)
class ManifestEntry:
    row: int
    source: str
    caption: str | None = None


@dataclass
class FeatureStore:
    """N x d float32 feature matrix plus a manifest linking rows to sources."""

    d: int
    rows: np.ndarray
    manifest: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32).reshape(-1, self.d)
        if len(self.rows) != len(self.manifest):
            raise DataError(
                f"row count {len(self.rows)} != manifest count {len(self.manifest)}"
            )

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return (
            self.d == other.d
            and self.rows.shape == other.rows.shape
            and bool(np.all(self.rows.view(np.uint32) == other.rows.view(np.uint32)))
            and self.manifest == other.manifest
        )


def _manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.jsonl")


def store_write(fs: FeatureStore, path) -> None:
    """Write a FeatureStore: little-endian binary matrix plus JSON-lines manifest."""
    path = Path(path)
    n = len(fs.rows)
    header = STORE_MAGIC + struct.pack("<IIQ", STORE_VERSION, fs.d, n)
    path.write_bytes(header + fs.rows.astype("<f4", copy=False).tobytes())
    with open(_manifest_path(path), "w", encoding="utf-8") as fh:
        for entry in fs.manifest:
            fh.write(
                json.dumps(
                    {"row": entry.row, "source": entry.source, "caption": entry.caption},
                    separators=(",", ":"),
                )
                + "\n"
            )


def store_read(path) -> FeatureStore:
    """Read a FeatureStore written by store_write. Bit-exact inverse."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != STORE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a feature store")
    version, d, n = struct.unpack("<IIQ", raw[4:20])
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 20 + n * d * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: payload length {len(raw)} != expected {expected}")
    rows = np.frombuffer(raw[20:], dtype="<f4").reshape(n, d).copy()
    manifest = []
    mpath = _manifest_path(path)
    if not mpath.exists():
        raise FormatError(f"missing manifest file {mpath}")
    with open(mpath, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            rec = json.loads(line)
            if rec.get("row") != i:
                raise FormatError(f"{mpath}: manifest row index {rec.get('row')} != line {i}")
            manifest.append(ManifestEntry(row=i, source=rec["source"], caption=rec.get("caption")))
    if len(manifest) != n:
        raise FormatError(f"{mpath}: manifest has {len(manifest)} entries, store has {n} rows")
    return FeatureStore(d=d, rows=rows, manifest=manifest)


@dataclass
class PairedFeatures:
    """Matched (image feature, text feature) rows used to train the inference model."""

    image: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.text = np.asarray(self.text, dtype=np.float32)
        if self.image.ndim != 2 or self.text.ndim != 2:
            raise DataError("paired features must be 2-d (N, d) arrays")
        if self.image.shape != self.text.shape:
            raise DataError(
                f"mismatched pair shapes: image {self.image.shape} vs text {self.text.shape}"
            )

    @classmethod
    def from_stores(cls, image_store: FeatureStore, text_store: FeatureStore) -> "PairedFeatures":
        if image_store.d != text_store.d:
            raise DataError(f"store dimensions differ: {image_store.d} vs {text_store.d}")
        if len(image_store) != len(text_store):
            raise DataError(
                f"store row counts differ: {len(image_store)} vs {len(text_store)}"
            )
        return cls(image=image_store.rows, text=text_store.rows)

    def __len__(self) -> int:
        return len(self.image)

    @property
    def d(self) -> int:
        return self.image.shape[1]
