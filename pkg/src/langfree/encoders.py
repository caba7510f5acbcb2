"""Trainable pixel and caption encoders for the toy image-caption space.

Three small networks support the pipeline end to end:

* ``ConvImageEncoder`` / ``TextEmbedEncoder`` — a tiny contrastively trained
  pair giving realistic, imperfectly aligned features from raw pixels and
  captions (the counterpart to the attribute-reading oracle pair).
* ``distill_pixel_encoder`` — fits a pixel encoder to reproduce an existing
  (e.g. oracle) embedding, so losses on generated images stay differentiable.
* ``ProbeClassifier`` — an attribute classifier over pixels used to score how
  well generated images honor their conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError
from .features import EncoderPair
from .toyset import COLORS, RESOLUTION, SHAPES, SIZES, ToyAttributes, ToyDataset, ToySample

_VOCAB = ("a",) + SIZES + COLORS + SHAPES


def _tokenize(caption: str) -> list[int]:
    ids = []
    for word in caption.split(" "):
        if word not in _VOCAB:
            raise DataError(f"unknown word {word!r} in caption {caption!r}")
        ids.append(_VOCAB.index(word))
    if len(ids) != 4:
        raise DataError(f"caption does not match template: {caption!r}")
    return ids


def _image_tensor(x) -> torch.Tensor:
    if isinstance(x, ToySample):
        x = x.image
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1)


class ConvImageEncoder(nn.Module):
    """3-block strided conv net; penultimate 64-d representation, then a head to d."""

    def __init__(self, d: int, penult: int = 64):
        super().__init__()
        self.d = d
        self.penult = penult
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.fc_penult = nn.Linear(128, penult)
        self.fc_out = nn.Linear(penult, d)

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = self.backbone(x).mean(dim=(2, 3))
        return F.leaky_relu(self.fc_penult(pooled), 0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_out(self.penultimate(x))

    def encode(self, x) -> np.ndarray:
        """Single-image numpy interface (accepts a ToySample or (H, W, 3) array)."""
        with torch.no_grad():
            return self(_image_tensor(x)[None])[0].double().numpy()


class TextEmbedEncoder(nn.Module):
    """Bag-of-word-embeddings caption encoder over the fixed template vocabulary."""

    def __init__(self, d: int, emb: int = 64):
        super().__init__()
        self.d = d
        self.embedding = nn.Embedding(len(_VOCAB), emb)
        self.fc = nn.Sequential(nn.Linear(emb, emb), nn.LeakyReLU(0.2), nn.Linear(emb, d))

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.fc(self.embedding(token_ids).sum(dim=1))

    def encode(self, caption: str) -> np.ndarray:
        ids = torch.tensor([_tokenize(caption)], dtype=torch.long)
        with torch.no_grad():
            return self(ids)[0].double().numpy()


def encode_images_batched(module: nn.Module, images: np.ndarray, batch: int = 256,
                          penultimate: bool = False) -> np.ndarray:
    """Run an image module over (n, H, W, 3) float arrays in eval mode, batched."""
    outs = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            xb = torch.from_numpy(images[i : i + batch].astype(np.float32)).permute(0, 3, 1, 2)
            outs.append((module.penultimate(xb) if penultimate else module(xb)).numpy())
    return np.concatenate(outs, axis=0)


@dataclass(frozen=True)
class EncoderTrainConfig:
    steps: int = 400
    batch_size: int = 128
    lr: float = 2e-3
    tau: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 2 or not (self.tau > 0):
            raise ConfigError("invalid encoder training config")


def _dataset_tensors(dataset: ToyDataset):
    imgs = torch.from_numpy(dataset.images_array().astype(np.float32)).permute(0, 3, 1, 2)
    toks = torch.tensor([_tokenize(s.caption) for s in dataset], dtype=torch.long)
    return imgs, toks


def train_contrastive_pair(
    dataset: ToyDataset, d: int, cfg: EncoderTrainConfig
) -> tuple[EncoderPair, ConvImageEncoder, TextEmbedEncoder]:
    """Fit the pixel/caption encoder pair with a symmetric InfoNCE objective.

    Matched image-caption rows are positives against the rest of the batch in
    both directions. Returns the EncoderPair wrapper (raw, unnormalized
    outputs) plus the underlying modules.
    """
    torch.manual_seed(cfg.seed)
    img_enc = ConvImageEncoder(d)
    txt_enc = TextEmbedEncoder(d)
    imgs, toks = _dataset_tensors(dataset)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(list(img_enc.parameters()) + list(txt_enc.parameters()), lr=cfg.lr)
    for _ in range(cfg.steps):
        idx = torch.randint(len(dataset), (cfg.batch_size,), generator=gen)
        fi = F.normalize(img_enc(imgs[idx]), dim=1)
        ft = F.normalize(txt_enc(toks[idx]), dim=1)
        logits = fi @ ft.t() / cfg.tau
        labels = torch.arange(len(idx))
        loss = 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels))
        opt.zero_grad()
        loss.backward()
        opt.step()
    img_enc.eval()
    txt_enc.eval()
    pair = EncoderPair(image_encoder=img_enc.encode, text_encoder=txt_enc.encode, d=d)
    return pair, img_enc, txt_enc


def distill_pixel_encoder(
    dataset: ToyDataset, target_pair: EncoderPair, cfg: EncoderTrainConfig
) -> ConvImageEncoder:
    """Train a pixel encoder to reproduce target_pair's image embeddings.

    Minimizes 1 - cos(student(pixels), target) over the dataset. Used when the
    conditioning features come from an encoder that cannot read pixels (the
    attribute oracle): the distilled student supplies a differentiable feature
    path for generated images.
    """
    torch.manual_seed(cfg.seed + 1)
    student = ConvImageEncoder(target_pair.d)
    imgs, _ = _dataset_tensors(dataset)
    targets = torch.from_numpy(
        np.stack([np.asarray(target_pair.image_encoder(s), dtype=np.float32) for s in dataset])
    )
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    for _ in range(cfg.steps):
        idx = torch.randint(len(dataset), (cfg.batch_size,), generator=gen)
        out = student(imgs[idx])
        loss = (1.0 - F.cosine_similarity(out, targets[idx])).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    student.eval()
    return student


class ProbeClassifier(nn.Module):
    """Shape/color/size classifier over pixels, one softmax head per attribute."""

    def __init__(self):
        super().__init__()
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(64, 128, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.head_shape = nn.Linear(128, len(SHAPES))
        self.head_color = nn.Linear(128, len(COLORS))
        self.head_size = nn.Linear(128, len(SIZES))

    def forward(self, x: torch.Tensor):
        rep = self.backbone(x).mean(dim=(2, 3))
        return self.head_shape(rep), self.head_color(rep), self.head_size(rep)

    def predict(self, images: np.ndarray, batch: int = 256) -> list[ToyAttributes]:
        """Predicted attribute tuples for (n, H, W, 3) float images in [-1, 1]."""
        preds = []
        with torch.no_grad():
            for i in range(0, len(images), batch):
                xb = torch.from_numpy(images[i : i + batch].astype(np.float32))
                xb = xb.permute(0, 3, 1, 2)
                sh, co, si = self(xb)
                for j in range(len(xb)):
                    preds.append(
                        ToyAttributes(
                            shape=SHAPES[int(sh[j].argmax())],
                            color=COLORS[int(co[j].argmax())],
                            size=SIZES[int(si[j].argmax())],
                        )
                    )
        return preds

    def class_probs(self, images: np.ndarray, batch: int = 256) -> np.ndarray:
        """Joint attribute distribution p(shape, color, size | x) as (n, 64) rows.

        Heads are treated as independent given the image; the joint is their
        outer product, flattened in (shape, color, size) index order.
        """
        rows = []
        with torch.no_grad():
            for i in range(0, len(images), batch):
                xb = torch.from_numpy(images[i : i + batch].astype(np.float32))
                xb = xb.permute(0, 3, 1, 2)
                sh, co, si = (F.softmax(t, dim=1) for t in self(xb))
                joint = sh[:, :, None, None] * co[:, None, :, None] * si[:, None, None, :]
                rows.append(joint.reshape(len(xb), -1).numpy())
        return np.concatenate(rows, axis=0)


_ATTR_INDEX = {
    (sh, co, si): i
    for i, (sh, co, si) in enumerate(
        (sh, co, si) for sh in SHAPES for co in COLORS for si in SIZES
    )
}


def attribute_index(attrs: ToyAttributes) -> int:
    """Flat index of an attribute tuple in (shape, color, size) order."""
    return _ATTR_INDEX[(attrs.shape, attrs.color, attrs.size)]


def train_probe(dataset: ToyDataset, cfg: EncoderTrainConfig,
                noise_std: float = 0.08) -> ProbeClassifier:
    """Fit the attribute probe with additive-noise augmentation.

    The noise keeps the probe from keying on pixel-perfect renderings, so it
    still reads attributes off slightly blurry or speckled generated images.
    """
    torch.manual_seed(cfg.seed + 2)
    probe = ProbeClassifier()
    imgs, _ = _dataset_tensors(dataset)
    labels = torch.tensor(
        [
            (SHAPES.index(s.attributes.shape), COLORS.index(s.attributes.color),
             SIZES.index(s.attributes.size))
            for s in dataset
        ],
        dtype=torch.long,
    )
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    opt = torch.optim.Adam(probe.parameters(), lr=cfg.lr)
    for _ in range(cfg.steps):
        idx = torch.randint(len(dataset), (cfg.batch_size,), generator=gen)
        xb = imgs[idx]
        if noise_std > 0:
            xb = xb + noise_std * torch.randn(xb.shape, generator=gen)
        sh, co, si = probe(xb)
        loss = (
            F.cross_entropy(sh, labels[idx, 0])
            + F.cross_entropy(co, labels[idx, 1])
            + F.cross_entropy(si, labels[idx, 2])
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
    probe.eval()
    return probe
