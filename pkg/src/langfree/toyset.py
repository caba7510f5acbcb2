"""Procedural image-caption toy data: colored shapes on a dark canvas.

Every sample is a 32x32 anti-aliased rendering of one shape with a color and a
size attribute, captioned by the fixed template "a {size} {color} {shape}".
Attribute sampling and position jitter are fully seeded, so datasets
regenerate byte-identically. The oracle encoder pair embeds attributes (not
pixels) as normalized sums of per-value random unit directions, giving exact
image-text alignment for matched pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .features import EncoderPair, normalize

RESOLUTION = 32
_SUPERSAMPLE = 4
_JITTER = 3.0  # max center offset in pixels, per axis

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple")
SIZES = ("small", "large")

_PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 1.0),
}
_HALF_EXTENT = {"small": 6.0, "large": 10.0}


@dataclass(frozen=True)
class ToyAttributes:
    shape: str
    color: str
    size: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DataError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise DataError(f"unknown color {self.color!r}")
        if self.size not in SIZES:
            raise DataError(f"unknown size {self.size!r}")

    @property
    def caption(self) -> str:
        return f"a {self.size} {self.color} {self.shape}"


def parse_caption(caption: str) -> ToyAttributes:
    """Invert the caption template; raises DataError on anything else."""
    parts = caption.split(" ")
    if len(parts) != 4 or parts[0] != "a":
        raise DataError(f"caption does not match template: {caption!r}")
    try:
        return ToyAttributes(shape=parts[3], color=parts[2], size=parts[1])
    except DataError as exc:
        raise DataError(f"caption does not match template: {caption!r}") from exc


def _sdf(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    """Signed distance (negative inside) from center offsets to the shape boundary."""
    if shape == "circle":
        return np.hypot(dx, dy) - r
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) - r
    if shape == "triangle":
        # upward isoceles triangle: apex (0, -r), base corners (+-r, +r);
        # max of the three half-plane distances is exact inside a convex shape
        base = dy - r
        # edge from apex to (+r, +r): direction (r, 2r) -> outward normal (2, -1)/sqrt(5)
        right = (2.0 * dx - dy - r) / np.sqrt(5.0)
        left = (-2.0 * dx - dy - r) / np.sqrt(5.0)
        return np.maximum(base, np.maximum(right, left))
    if shape == "cross":
        w = r / 3.0
        horiz = np.maximum(np.abs(dx) - r, np.abs(dy) - w)
        vert = np.maximum(np.abs(dx) - w, np.abs(dy) - r)
        return np.minimum(horiz, vert)
    raise DataError(f"unknown shape {shape!r}")


def render(attrs: ToyAttributes, seed: int) -> np.ndarray:
    """Render one sample as float32 (32, 32, 3) with values in [-1, 1].

    The seed drives only the position jitter of the shape center; everything
    else is a pure function of the attributes. Coverage is estimated on a 4x
    supersampled grid and box-filtered down for anti-aliasing.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    jx, jy = rng.uniform(-_JITTER, _JITTER, size=2)
    cx = RESOLUTION / 2.0 + jx
    cy = RESOLUTION / 2.0 + jy
    r = _HALF_EXTENT[attrs.size]

    n = RESOLUTION * _SUPERSAMPLE
    coords = (np.arange(n, dtype=np.float64) + 0.5) / _SUPERSAMPLE
    dy = coords[:, None] - cy
    dx = coords[None, :] - cx
    inside = (_sdf(attrs.shape, dx, dy, r) <= 0.0).astype(np.float64)
    alpha = inside.reshape(RESOLUTION, _SUPERSAMPLE, RESOLUTION, _SUPERSAMPLE).mean(axis=(1, 3))

    color = np.array(_PALETTE[attrs.color], dtype=np.float64)
    rgb = alpha[:, :, None] * color[None, None, :]  # background is black
    return (rgb * 2.0 - 1.0).astype(np.float32)


@dataclass
class ToySample:
    image: np.ndarray  # float32 (32, 32, 3) in [-1, 1]
    attributes: ToyAttributes
    caption: str
    seed: int


class ToyDataset:
    """In-memory list of samples with deterministic directory round-trip."""

    def __init__(self, samples: list[ToySample]):
        if not samples:
            raise DataError("empty dataset")
        self.samples = samples

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> ToySample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    def images_array(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    def write_dir(self, path) -> None:
        """Write PNGs plus a JSON-lines manifest {file, shape, color, size, caption}."""
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
            for i, s in enumerate(self.samples):
                name = f"sample_{i:06d}.png"
                u8 = np.clip((s.image + 1.0) * 127.5 + 0.5, 0, 255).astype(np.uint8)
                Image.fromarray(u8).save(out / name, format="PNG")
                rec = {
                    "file": name,
                    "shape": s.attributes.shape,
                    "color": s.attributes.color,
                    "size": s.attributes.size,
                    "caption": s.caption,
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    @classmethod
    def from_dir(cls, path) -> "ToyDataset":
        root = Path(path)
        manifest = root / "manifest.jsonl"
        if not manifest.is_file():
            raise DataError(f"{root}: no manifest.jsonl")
        samples = []
        with open(manifest, "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                attrs = ToyAttributes(rec["shape"], rec["color"], rec["size"])
                img_path = root / rec["file"]
                if not img_path.is_file():
                    raise DataError(f"{img_path}: listed in manifest but missing")
                u8 = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32)
                samples.append(
                    ToySample(
                        image=u8 / 127.5 - 1.0,
                        attributes=attrs,
                        caption=rec["caption"],
                        seed=0,
                    )
                )
        return cls(samples)


def gen_dataset(n: int, seed: int) -> ToyDataset:
    """Sample n images with uniform i.i.d. attributes, deterministically under seed."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        attrs = ToyAttributes(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=COLORS[rng.integers(len(COLORS))],
            size=SIZES[rng.integers(len(SIZES))],
        )
        sample_seed = int(rng.integers(2**63))
        samples.append(
            ToySample(
                image=render(attrs, sample_seed),
                attributes=attrs,
                caption=attrs.caption,
                seed=sample_seed,
            )
        )
    return ToyDataset(samples)


def all_attribute_tuples() -> list[ToyAttributes]:
    return [
        ToyAttributes(sh, co, si) for sh in SHAPES for co in COLORS for si in SIZES
    ]


def oracle_encoders(d: int, seed: int) -> EncoderPair:
    """Attribute-reading encoder pair with exact image-text alignment.

    Each attribute value gets a fixed seeded random unit direction in R^d; an
    embedding is the normalized sum of the sample's three value directions.
    The image side reads attributes from the sample object (never pixels), the
    text side parses the caption template — so matched pairs embed identically.
    """
    values = list(SHAPES) + list(COLORS) + list(SIZES)
    if d < len(values) + 2:
        raise ConfigError(f"need d >= {len(values) + 2} for well-separated directions, got {d}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 271]))
    directions = {v: normalize(rng.standard_normal(d)) for v in values}

    def embed(attrs: ToyAttributes) -> np.ndarray:
        return normalize(
            directions[attrs.shape] + directions[attrs.color] + directions[attrs.size]
        )

    def image_encoder(x) -> np.ndarray:
        if isinstance(x, ToySample):
            return embed(x.attributes)
        if isinstance(x, ToyAttributes):
            return embed(x)
        raise DataError(
            "oracle image encoder reads attributes and needs a ToySample or "
            f"ToyAttributes, got {type(x).__name__}"
        )

    def text_encoder(caption: str) -> np.ndarray:
        return embed(parse_caption(caption))

    return EncoderPair(image_encoder=image_encoder, text_encoder=text_encoder, d=d)
