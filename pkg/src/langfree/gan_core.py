"""Conditional generator with per-layer style modulation and a dual-head discriminator.

The generator maps a latent z through a stack of fully-connected layers to an
intermediate w, then per synthesis layer combines an affine style code (from
w) with a condition code (from the conditioning feature, via a 2-layer FC net)
into a conditional style code u that drives per-channel scale/shift modulation
of the feature maps. The discriminator shares one convolutional backbone with
two heads: an unconditional scalar and a semantic projection vector; the
conditional logit is their sum with the condition inner product.

Conditioning vectors are used exactly as given — callers pass unit-normalized
features — so the logit stays linear in the condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class GANConfig:
    cond_dim: int = 64
    z_dim: int = 128
    w_dim: int = 128
    channels: tuple = (128, 128, 64, 32)
    base_res: int = 4
    img_channels: int = 3

    def __post_init__(self):
        if self.cond_dim < 1 or self.z_dim < 1 or self.w_dim < 1:
            raise ConfigError("all dimensions must be positive")
        if len(self.channels) < 1:
            raise ConfigError("need at least one synthesis block")

    @property
    def resolution(self) -> int:
        return self.base_res * 2 ** (len(self.channels) - 1)

    @property
    def u_dims(self) -> tuple:
        # one (scale, shift) pair per channel in each block
        return tuple(2 * c for c in self.channels)


class _ConditionNet(nn.Module):
    """2-layer FC net turning the conditioning feature into a per-layer code."""

    def __init__(self, cond_dim: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(cond_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, h):
        return self.fc2(F.leaky_relu(self.fc1(h), 0.2))


class _SynthesisBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.out_ch = out_ch

    def forward(self, x, u):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        y = self.conv(x)
        scale, shift = u[:, : self.out_ch], u[:, self.out_ch :]
        y = y * (1.0 + scale)[:, :, None, None] + shift[:, :, None, None]
        return F.leaky_relu(y, 0.2)


class GeneratorNet(nn.Module):
    """Style-modulated conditional generator.

    Exposes the intermediate stages (mapping, styles, condition_codes, u_codes,
    synthesize) so conditional style codes can be manipulated — e.g. mixed
    between two conditions — before synthesis.
    """

    def __init__(self, cfg: GANConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        in_dim = cfg.z_dim
        for _ in range(4):
            layers += [nn.Linear(in_dim, cfg.w_dim), nn.LeakyReLU(0.2)]
            in_dim = cfg.w_dim
        self.mapping_net = nn.Sequential(*layers)

        self.const = nn.Parameter(torch.randn(1, cfg.channels[0], cfg.base_res, cfg.base_res))
        self.style_affines = nn.ModuleList()
        self.condition_nets = nn.ModuleList()
        self.u_affines = nn.ModuleList()
        self.blocks = nn.ModuleList()
        in_ch = cfg.channels[0]
        for i, out_ch in enumerate(cfg.channels):
            self.style_affines.append(nn.Linear(cfg.w_dim, out_ch))
            self.condition_nets.append(_ConditionNet(cfg.cond_dim, out_ch))
            self.u_affines.append(nn.Linear(2 * out_ch, 2 * out_ch))
            self.blocks.append(_SynthesisBlock(in_ch, out_ch, upsample=i > 0))
            in_ch = out_ch
        self.to_rgb = nn.Conv2d(cfg.channels[-1], cfg.img_channels, 1)

    @property
    def u_dims(self) -> tuple:
        return self.cfg.u_dims

    @property
    def total_u_dim(self) -> int:
        return sum(self.cfg.u_dims)

    def mapping(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.z_dim:
            raise DimensionError(f"latent must be (n, {self.cfg.z_dim}), got {tuple(z.shape)}")
        return self.mapping_net(z)

    def styles(self, w: torch.Tensor) -> list[torch.Tensor]:
        return [aff(w) for aff in self.style_affines]

    def condition_codes(self, h: torch.Tensor) -> list[torch.Tensor]:
        if h.ndim != 2 or h.shape[1] != self.cfg.cond_dim:
            raise DimensionError(
                f"condition must be (n, {self.cfg.cond_dim}), got {tuple(h.shape)}"
            )
        return [net(h) for net in self.condition_nets]

    def u_codes(self, w: torch.Tensor, h: torch.Tensor) -> list[torch.Tensor]:
        """Per-layer conditional style codes from [style, condition] concatenation."""
        out = []
        for s, c, aff in zip(self.styles(w), self.condition_codes(h), self.u_affines):
            out.append(aff(torch.cat([s, c], dim=1)))
        return out

    def synthesize(self, u_list: list[torch.Tensor]) -> torch.Tensor:
        if len(u_list) != len(self.blocks):
            raise DimensionError(f"expected {len(self.blocks)} style codes, got {len(u_list)}")
        n = u_list[0].shape[0]
        x = self.const.expand(n, -1, -1, -1)
        for block, u in zip(self.blocks, u_list):
            x = block(x, u)
        return torch.tanh(self.to_rgb(x))

    def forward(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.synthesize(self.u_codes(self.mapping(z), h))


class DiscriminatorNet(nn.Module):
    """Shared conv backbone with an unconditional head and a projection head."""

    def __init__(self, cfg: GANConfig):
        super().__init__()
        self.cfg = cfg
        widths = tuple(reversed(cfg.channels))
        convs = []
        in_ch = cfg.img_channels
        for out_ch in widths:
            convs += [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.backbone = nn.Sequential(*convs)
        self.head_fd = nn.Linear(in_ch, 1)
        self.head_fs = nn.Linear(in_ch, cfg.cond_dim)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.img_channels or x.shape[2] != self.cfg.resolution:
            raise DimensionError(
                f"image must be (n, {self.cfg.img_channels}, {self.cfg.resolution}, "
                f"{self.cfg.resolution}), got {tuple(x.shape)}"
            )
        return self.backbone(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor, h: torch.Tensor):
        """Returns (logit, fd, fs) with logit = fd + <h, fs> exactly."""
        if h.ndim != 2 or h.shape[1] != self.cfg.cond_dim:
            raise DimensionError(
                f"condition must be (n, {self.cfg.cond_dim}), got {tuple(h.shape)}"
            )
        rep = self.features(x)
        fd = self.head_fd(rep)[:, 0]
        fs = self.head_fs(rep)
        return fd + (fs * h).sum(dim=1), fd, fs


class MixMask:
    """Elementwise selector over the concatenated conditional style codes.

    Each element is drawn i.i.d. Bernoulli(p), True meaning "take this element
    from the first condition". per_layer=True instead draws one Bernoulli per
    layer and broadcasts it across that layer's code.
    """

    def __init__(self, p: float, seed: int, layer_dims, per_layer: bool = False):
        if not (0.0 <= p <= 1.0):
            raise ConfigError(f"selection probability must be in [0, 1], got {p}")
        self.p = p
        self.seed = seed
        self.per_layer = per_layer
        self.layer_dims = tuple(int(d) for d in layer_dims)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 97]))
        if per_layer:
            draws = rng.random(len(self.layer_dims)) < p
            values = np.concatenate(
                [np.full(d, v, dtype=bool) for d, v in zip(self.layer_dims, draws)]
            )
        else:
            values = rng.random(sum(self.layer_dims)) < p
        self.values = values

    def __len__(self) -> int:
        return len(self.values)


def _as_batch(v, dim: int, name: str) -> torch.Tensor:
    arr = torch.as_tensor(np.asarray(v), dtype=torch.float32)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DimensionError(f"{name} must be a {dim}-vector, got shape {tuple(arr.shape)}")
    return arr[None]


def generate(g: GeneratorNet, h_cond, z) -> np.ndarray:
    """Synthesize one image; returns float32 (H, W, 3) with values in [-1, 1]."""
    h = _as_batch(h_cond, g.cfg.cond_dim, "condition")
    zt = _as_batch(z, g.cfg.z_dim, "latent")
    with torch.no_grad():
        img = g(h, zt)[0]
    return img.permute(1, 2, 0).numpy()


def discriminate(dnet: DiscriminatorNet, x, h_cond):
    """Score one image under one condition; returns (logit, fd, fs)."""
    img = np.asarray(x)
    if img.ndim != 3 or img.shape[2] != dnet.cfg.img_channels:
        raise DimensionError(f"image must be (H, W, {dnet.cfg.img_channels}), got {img.shape}")
    xt = torch.as_tensor(img, dtype=torch.float32).permute(2, 0, 1)[None]
    h = _as_batch(h_cond, dnet.cfg.cond_dim, "condition")
    with torch.no_grad():
        logit, fd, fs = dnet(xt, h)
    return float(logit[0]), float(fd[0]), fs[0].numpy()


def mix_generate(g: GeneratorNet, h_a, h_b, z, mask: MixMask) -> np.ndarray:
    """Synthesize from an elementwise mix of the style codes of two conditions.

    Both conditional style codes are computed from the same latent (hence the
    same w); mask elements select per element between them before synthesis.
    """
    if len(mask) != g.total_u_dim:
        raise DimensionError(
            f"mask length {len(mask)} != total style-code dimension {g.total_u_dim}"
        )
    ha = _as_batch(h_a, g.cfg.cond_dim, "condition a")
    hb = _as_batch(h_b, g.cfg.cond_dim, "condition b")
    zt = _as_batch(z, g.cfg.z_dim, "latent")
    with torch.no_grad():
        w = g.mapping(zt)
        u_a = torch.cat(g.u_codes(w, ha), dim=1)
        u_b = torch.cat(g.u_codes(w, hb), dim=1)
        sel = torch.from_numpy(mask.values)[None]
        u_mix = torch.where(sel, u_a, u_b)
        u_list = list(torch.split(u_mix, list(g.u_dims), dim=1))
        img = g.synthesize(u_list)[0]
    return img.permute(1, 2, 0).numpy()
