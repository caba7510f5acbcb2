"""Adversarial training loop across language-free, supervised, and
semi-supervised conditioning modes.

Each step runs the same fixed sequence: draw a batch, draw fresh condition
noise, build unit conditioning vectors (pseudo features from image features,
or normalized text features for supervised rows), draw latents, synthesize,
then update the discriminator and generator in that order with separate Adam
states. All in-loop randomness flows through one serialized torch generator,
so a checkpoint restores mid-run training bit-exactly; cfg.steps is an
absolute target, making "train N" and "train N/2, resume, train N" identical.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .archive import load_archive, save_archive
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
)
from .features import AugmentSpec, EncoderPair, extract_image_feature
from .gan_core import DiscriminatorNet, GANConfig, GeneratorNet
from .losses import LossWeights, adv_losses, contrastive_loss, total_losses
from .pseudo import InferenceModel, pseudo_fixed_t
from .toyset import ToyDataset

MODES = ("language_free_fixed", "language_free_trainable", "supervised", "semi_supervised")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "language_free_fixed"
    d: int = 64
    steps: int = 1000
    batch_size: int = 64
    lr_g: float = 2.5e-3
    lr_d: float = 2.5e-3
    betas: tuple = (0.0, 0.99)
    weights: LossWeights = LossWeights()
    xi: float = 0.1
    augment: AugmentSpec = AugmentSpec(k=1, a=32, w=32)
    pair_fraction: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    r1_gamma: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.steps < 0 or self.batch_size < 1 or self.d < 1:
            raise ConfigError("steps, batch_size and d must be positive")
        if (self.weights.lam > 0 or self.weights.gam > 0) and self.batch_size < 2:
            raise ConfigError(
                "contrastive terms need batch_size >= 2 (a 1-row softmax is trivially 0)"
            )
        if not (0.0 <= self.pair_fraction <= 1.0):
            raise ConfigError(f"pair_fraction must be in [0, 1], got {self.pair_fraction}")
        if self.xi < 0 or self.r1_gamma < 0 or self.checkpoint_every < 0:
            raise ConfigError("xi, r1_gamma and checkpoint_every must be >= 0")


@dataclass
class TrainData:
    """Images plus precomputed conditioning features.

    text_features is required for supervised and semi-supervised modes and may
    be None otherwise; language-free training never touches caption-derived
    data. Features are raw encoder outputs (normalization happens per step).
    """

    images: np.ndarray  # (N, H, W, 3) float32 in [-1, 1]
    image_features: np.ndarray  # (N, d)
    text_features: np.ndarray | None = None  # (N, d)

    def __post_init__(self):
        if len(self.images) != len(self.image_features):
            raise DataError("images and image_features row counts differ")
        if self.text_features is not None and len(self.text_features) != len(self.images):
            raise DataError("text_features row count differs from images")

    def __len__(self) -> int:
        return len(self.images)


def build_train_data(
    dataset: ToyDataset,
    enc: EncoderPair,
    aug: AugmentSpec | None = None,
    include_text: bool = False,
    seed: int = 0,
) -> TrainData:
    """Extract per-sample conditioning features once, as a preprocessing pass.

    With augmentation disabled the encoder sees the sample object itself (so
    attribute-reading encoders work); otherwise it sees pixel crops. Text
    features are only computed — and the text encoder only called — when
    include_text is set.
    """
    if aug is None:
        aug = AugmentSpec(k=1, a=dataset[0].image.shape[0], w=dataset[0].image.shape[0])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    img_feats = []
    for s in dataset:
        x = s if aug.disabled else s.image
        img_feats.append(extract_image_feature(x, enc, aug, rng))
    txt_feats = None
    if include_text:
        txt_feats = np.stack([np.asarray(enc.text_encoder(s.caption)) for s in dataset])
    return TrainData(
        images=dataset.images_array(),
        image_features=np.stack(img_feats),
        text_features=txt_feats,
    )


@dataclass
class TrainState:
    cfg: TrainConfig
    gan_cfg: GANConfig
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    step: int = 0
    inference_model: InferenceModel | None = None


@dataclass
class Batch:
    images: torch.Tensor  # (n, 3, H, W)
    image_features: torch.Tensor  # (n, d)
    text_features: torch.Tensor | None  # (n, d)
    supervised_mask: torch.Tensor | None  # (n,) bool; None = all language-free


def init_state(
    cfg: TrainConfig,
    gan_cfg: GANConfig | None = None,
    inference_model: InferenceModel | None = None,
) -> TrainState:
    if gan_cfg is None:
        gan_cfg = GANConfig(cond_dim=cfg.d)
    if gan_cfg.cond_dim != cfg.d:
        raise ConfigError(f"gan cond_dim {gan_cfg.cond_dim} != config d {cfg.d}")
    torch.manual_seed(cfg.seed)
    generator = GeneratorNet(gan_cfg)
    discriminator = DiscriminatorNet(gan_cfg)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=cfg.betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_d, betas=cfg.betas)
    rng = torch.Generator().manual_seed(cfg.seed + 1)
    return TrainState(cfg, gan_cfg, generator, discriminator, opt_g, opt_d, rng,
                      inference_model=inference_model)


def _build_conditions(state: TrainState, batch: Batch) -> torch.Tensor:
    """Unit conditioning vectors for the batch; always consumes one eps draw."""
    cfg = state.cfg
    eps = torch.randn(batch.image_features.shape, generator=state.rng)
    with torch.no_grad():
        if cfg.mode == "language_free_trainable":
            pseudo = state.inference_model.perturb(batch.image_features, eps)
        else:
            pseudo = pseudo_fixed_t(batch.image_features, cfg.xi, eps)
        if batch.supervised_mask is None:
            return pseudo
        if batch.text_features is None:
            raise DataError(f"mode {cfg.mode!r} needs text features")
        text = F.normalize(batch.text_features, dim=1)
        return torch.where(batch.supervised_mask[:, None], text, pseudo)


def _check_finite(value: torch.Tensor, what: str, step: int) -> None:
    if not torch.isfinite(value):
        raise NumericalError(f"non-finite {what} at step {step}")


def train_step(state: TrainState, batch: Batch, feature_module=None) -> dict:
    """One discriminator-then-generator update; returns the per-step loss report."""
    cfg = state.cfg
    w = cfg.weights
    h = _build_conditions(state, batch)
    z = torch.randn((len(batch.images), state.gan_cfg.z_dim), generator=state.rng)
    fake = state.generator(h, z)

    # discriminator update
    x_real = batch.images
    if cfg.r1_gamma > 0:
        x_real = x_real.clone().requires_grad_(True)
    logits_real, _, fs_real = state.discriminator(x_real, h)
    logits_fake_d, _, _ = state.discriminator(fake.detach(), h)
    _, loss_d = adv_losses(logits_real, logits_fake_d)
    con_d = (
        contrastive_loss(fs_real, h, w) if w.gam > 0 else torch.zeros(())
    )
    _, d_total = total_losses(torch.zeros(()), loss_d, con_d, torch.zeros(()), w)
    if cfg.r1_gamma > 0:
        grad = torch.autograd.grad(logits_real.sum(), x_real, create_graph=True)[0]
        d_total = d_total + 0.5 * cfg.r1_gamma * grad.flatten(1).square().sum(dim=1).sum()
    _check_finite(d_total, "discriminator loss", state.step)
    state.opt_d.zero_grad()
    d_total.backward()
    state.opt_d.step()

    # generator update: discriminator parameters held constant
    for p in state.discriminator.parameters():
        p.requires_grad_(False)
    logits_fake_g, _, fs_fake = state.discriminator(fake, h)
    loss_g = F.softplus(-logits_fake_g).sum()
    con_d_gen = (
        contrastive_loss(fs_fake, h, w) if w.gam > 0 else torch.zeros(())
    )
    if w.lam > 0:
        if feature_module is None:
            raise ConfigError("generator contrastive weight > 0 needs a feature module")
        con_g = contrastive_loss(feature_module(fake), h, w)
    else:
        con_g = torch.zeros(())
    g_total, _ = total_losses(loss_g, torch.zeros(()), con_d_gen, con_g, w)
    _check_finite(g_total, "generator loss", state.step)
    state.opt_g.zero_grad()
    g_total.backward()
    state.opt_g.step()
    for p in state.discriminator.parameters():
        p.requires_grad_(True)

    state.step += 1
    return {
        "step": state.step,
        "L_G": float(loss_g.detach()),
        "L_D": float(loss_d.detach()),
        "L_ConD": float(con_d.detach()),
        "L_ConG": float(con_g.detach()),
    }


def _pair_mask(cfg: TrainConfig, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    return rng.random(n) < cfg.pair_fraction


def _validate_data(cfg: TrainConfig, data: TrainData) -> None:
    if data.image_features.shape[1] != cfg.d:
        raise DataError(
            f"image feature dimension {data.image_features.shape[1]} != config d {cfg.d}"
        )
    if cfg.mode in ("supervised", "semi_supervised") and data.text_features is None:
        raise DataError(f"mode {cfg.mode!r} requires caption features in the data")


def train(
    cfg: TrainConfig,
    data: TrainData,
    init: "TrainState | str | Path | None" = None,
    feature_module=None,
    inference_model: InferenceModel | None = None,
    checkpoint_dir=None,
    metrics_path=None,
) -> TrainState:
    """Run Algorithm-style training to the absolute step target cfg.steps.

    init may be a TrainState or a checkpoint path; its architecture must match
    cfg (CheckpointError otherwise), while mode/hyper-parameters may differ to
    support fine-tuning. The semi-supervised caption assignment is a fixed
    seeded per-image mask drawn once here. Checkpoints are written at
    cfg.checkpoint_every cadence plus a final one when checkpoint_dir is set;
    a non-finite loss aborts with NumericalError, leaving the last cadenced
    checkpoint on disk.
    """
    _validate_data(cfg, data)
    if init is None:
        state = init_state(cfg, inference_model=inference_model)
    else:
        state = init if isinstance(init, TrainState) else load_checkpoint(init)
        if state.gan_cfg.cond_dim != cfg.d:
            raise CheckpointError(
                f"checkpoint cond_dim {state.gan_cfg.cond_dim} != config d {cfg.d}"
            )
        state.cfg = cfg
        if inference_model is not None:
            state.inference_model = inference_model
    if cfg.mode == "language_free_trainable" and state.inference_model is None:
        raise ConfigError("language_free_trainable mode needs an inference model")
    if cfg.weights.lam > 0 and feature_module is None:
        raise ConfigError("generator contrastive weight > 0 needs a feature module")

    if feature_module is not None:
        feature_module.eval()
        for p in feature_module.parameters():
            p.requires_grad_(False)
    if state.inference_model is not None:
        state.inference_model.eval()
        for p in state.inference_model.parameters():
            p.requires_grad_(False)

    images = torch.from_numpy(data.images.astype(np.float32)).permute(0, 3, 1, 2)
    img_feats = torch.from_numpy(data.image_features.astype(np.float32))
    txt_feats = (
        torch.from_numpy(data.text_features.astype(np.float32))
        if data.text_features is not None
        else None
    )
    mask_np = None
    if cfg.mode == "semi_supervised":
        mask_np = torch.from_numpy(_pair_mask(cfg, len(data)))
    all_supervised = cfg.mode == "supervised"

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        while state.step < cfg.steps:
            idx = torch.randint(len(data), (cfg.batch_size,), generator=state.rng)
            if all_supervised:
                sup = torch.ones(cfg.batch_size, dtype=torch.bool)
            elif mask_np is not None:
                sup = mask_np[idx]
            else:
                sup = None
            batch = Batch(
                images=images[idx],
                image_features=img_feats[idx],
                text_features=txt_feats[idx] if txt_feats is not None else None,
                supervised_mask=sup,
            )
            report = train_step(state, batch, feature_module=feature_module)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(report, separators=(",", ":")) + "\n")
            if (
                ckpt_dir is not None
                and cfg.checkpoint_every > 0
                and state.step % cfg.checkpoint_every == 0
            ):
                save_checkpoint(state, ckpt_dir / f"ckpt_{state.step:07d}.lfta")
        if ckpt_dir is not None:
            save_checkpoint(state, ckpt_dir / "ckpt_final.lfta")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return state


# --- checkpoint serialization ------------------------------------------------

def _config_to_meta(cfg: TrainConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["betas"] = list(cfg.betas)
    return out


def _config_from_meta(meta: dict) -> TrainConfig:
    kw = dict(meta)
    kw["betas"] = tuple(kw["betas"])
    kw["weights"] = LossWeights(**kw["weights"])
    kw["augment"] = AugmentSpec(**kw["augment"])
    return TrainConfig(**kw)


def _pack_optimizer(opt: torch.optim.Adam, params, prefix: str, arrays: dict) -> None:
    for i, p in enumerate(params):
        st = opt.state.get(p)
        if not st:
            continue
        arrays[f"{prefix}.{i}.step"] = st["step"].numpy()
        arrays[f"{prefix}.{i}.exp_avg"] = st["exp_avg"].numpy()
        arrays[f"{prefix}.{i}.exp_avg_sq"] = st["exp_avg_sq"].numpy()


def _unpack_optimizer(opt: torch.optim.Adam, params, prefix: str, arrays: dict) -> None:
    for i, p in enumerate(params):
        key = f"{prefix}.{i}.step"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.from_numpy(arrays[key].copy()),
            "exp_avg": torch.from_numpy(arrays[f"{prefix}.{i}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}.{i}.exp_avg_sq"].copy()),
        }


def save_checkpoint(state: TrainState, path) -> None:
    """Serialize the full training state to a deterministic archive.

    Saving, loading and saving again produces byte-identical files: every
    tensor (parameters, Adam moments, the RNG state) round-trips bit-exactly
    and the config snapshot is canonical JSON.
    """
    arrays = {"step": np.array([state.step], dtype=np.int64),
              "rng_state": state.rng.get_state().numpy()}
    for name, t in state.generator.state_dict().items():
        arrays[f"g.{name}"] = t.numpy()
    for name, t in state.discriminator.state_dict().items():
        arrays[f"d.{name}"] = t.numpy()
    _pack_optimizer(state.opt_g, list(state.generator.parameters()), "opt_g", arrays)
    _pack_optimizer(state.opt_d, list(state.discriminator.parameters()), "opt_d", arrays)
    if state.inference_model is not None:
        for name, t in state.inference_model.state_dict().items():
            arrays[f"inf.{name}"] = t.numpy()
    meta = {
        "kind": "train_checkpoint",
        "config": _config_to_meta(state.cfg),
        "gan": dataclasses.asdict(state.gan_cfg) | {"channels": list(state.gan_cfg.channels)},
        "inference": None
        if state.inference_model is None
        else {
            "d": state.inference_model.d,
            "hidden": state.inference_model.hidden,
            "log_std_clamp": list(state.inference_model.log_std_clamp),
        },
    }
    save_archive(path, arrays, meta)


def load_checkpoint(path) -> TrainState:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "train_checkpoint":
        raise CheckpointError(f"{path}: not a training checkpoint archive")
    cfg = _config_from_meta(meta["config"])
    gan_kw = dict(meta["gan"])
    gan_kw["channels"] = tuple(gan_kw["channels"])
    gan_cfg = GANConfig(**gan_kw)
    generator = GeneratorNet(gan_cfg)
    discriminator = DiscriminatorNet(gan_cfg)
    generator.load_state_dict(
        {k[2:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("g.")}
    )
    discriminator.load_state_dict(
        {k[2:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("d.")}
    )
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=cfg.betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_d, betas=cfg.betas)
    _unpack_optimizer(opt_g, list(generator.parameters()), "opt_g", arrays)
    _unpack_optimizer(opt_d, list(discriminator.parameters()), "opt_d", arrays)
    inference_model = None
    if meta.get("inference"):
        spec = meta["inference"]
        inference_model = InferenceModel(spec["d"], spec["hidden"], tuple(spec["log_std_clamp"]))
        inference_model.load_state_dict(
            {k[4:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("inf.")}
        )
    rng = torch.Generator()
    rng.set_state(torch.from_numpy(arrays["rng_state"].copy()))
    return TrainState(
        cfg=cfg,
        gan_cfg=gan_cfg,
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        step=int(arrays["step"][0]),
        inference_model=inference_model,
    )
