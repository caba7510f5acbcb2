"""Command-line entry point covering the full pipeline.

Subcommands: gen-data, extract-features, train-inference, train, generate,
mix, eval, verify-theorem. Exit codes: 0 success, 1 validation/usage error,
2 runtime error. Every command that produces files also writes a run manifest
(resolved config, seed, version, timings, output paths) next to its outputs.
Config precedence for training: CLI flag > config file > built-in default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .archive import load_archive
from .encoders import (
    EncoderTrainConfig,
    distill_pixel_encoder,
    encode_images_batched,
    train_contrastive_pair,
    train_probe,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    LangfreeError,
    NormalizationError,
)
from .evaluation import (
    REFERENCE_BENCHMARKS,
    conditional_accuracy,
    fid_k,
    inception_score,
    synthesize_batched,
)
from .features import (
    AugmentSpec,
    FeatureStore,
    ManifestEntry,
    PairedFeatures,
    extract_image_feature,
    normalize,
    store_read,
    store_write,
)
from .gan_core import MixMask
from .losses import LossWeights
from .pseudo import (
    BoundQuery,
    InferenceModel,
    InferenceTrainConfig,
    load_inference_model,
    save_inference_model,
    theorem1_mc_check,
    train_inference_model,
)
from .toyset import ToyDataset, all_attribute_tuples, gen_dataset, oracle_encoders
from .training import (
    TrainConfig,
    build_train_data,
    load_checkpoint,
    train,
)

_VALIDATION_ERRORS = (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NormalizationError,
    CheckpointError,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_manifest(out_target: Path, command: str, config: dict, seed: int,
                    wall_s: float, outputs: list) -> None:
    target = Path(out_target)
    if target.is_dir():
        path = target / "run_manifest.json"
    else:
        path = target.with_name(target.name + ".run_manifest.json")
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": f"langfree-{__version__}",
        "wall_s": round(wall_s, 3),
        "outputs": [str(p) for p in outputs],
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_image_grid(images: np.ndarray, path, cols: int = 8) -> None:
    """Tile (n, H, W, 3) images in [-1, 1] into a PNG grid with `cols` columns."""
    from PIL import Image

    imgs = np.asarray(images)
    n, h, w, c = imgs.shape
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    u8 = np.clip((imgs + 1.0) * 127.5 + 0.5, 0, 255).astype(np.uint8)
    for i in range(n):
        r, col = divmod(i, cols)
        canvas[r * h : (r + 1) * h, col * w : (col + 1) * w] = u8[i]
    Image.fromarray(canvas).save(path, format="PNG")


def _slug(caption: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in caption)


def _build_encoder(kind: str, d: int, seed: int, dataset: ToyDataset | None,
                   enc_steps: int):
    """Returns (EncoderPair, pixel feature module or None)."""
    if kind == "oracle":
        return oracle_encoders(d, seed), None
    if kind == "trained":
        if dataset is None:
            raise ConfigError("trained encoder needs a dataset to fit on")
        pair, img_enc, _ = train_contrastive_pair(
            dataset, d, EncoderTrainConfig(steps=enc_steps, seed=seed)
        )
        return pair, img_enc
    raise ConfigError(f"unknown encoder kind {kind!r}")


# --- subcommand implementations ---------------------------------------------

def _cmd_gen_data(args) -> int:
    t0 = time.monotonic()
    ds = gen_dataset(args.n, args.seed)
    out = Path(args.out)
    ds.write_dir(out)
    _write_manifest(out, "gen-data", {"n": args.n}, args.seed,
                    time.monotonic() - t0, [out])
    print(f"wrote {len(ds)} samples to {out}")
    return 0


def _cmd_extract_features(args) -> int:
    t0 = time.monotonic()
    ds = ToyDataset.from_dir(args.data)
    pair, _ = _build_encoder(args.encoder, args.d, args.seed, ds, args.enc_steps)
    aug = AugmentSpec(k=args.k, a=args.a, w=ds[0].image.shape[0])
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 11]))
    rows, manifest = [], []
    for i, s in enumerate(ds):
        x = s if aug.disabled else s.image
        rows.append(extract_image_feature(x, pair, aug, rng))
        manifest.append(ManifestEntry(row=i, source=f"sample_{i:06d}.png", caption=None))
    img_store = FeatureStore(d=args.d, rows=np.stack(rows), manifest=manifest)
    out = Path(args.out)
    store_write(img_store, out)
    outputs = [out]
    if args.text_out:
        trows = np.stack([np.asarray(pair.text_encoder(s.caption)) for s in ds])
        tmanifest = [
            ManifestEntry(row=i, source=f"sample_{i:06d}.png", caption=s.caption)
            for i, s in enumerate(ds)
        ]
        tpath = Path(args.text_out)
        store_write(FeatureStore(d=args.d, rows=trows, manifest=tmanifest), tpath)
        outputs.append(tpath)
    cfg = {"encoder": args.encoder, "d": args.d, "k": args.k, "a": args.a,
           "enc_steps": args.enc_steps}
    _write_manifest(out, "extract-features", cfg, args.seed, time.monotonic() - t0, outputs)
    print(f"wrote {len(ds)} image features to {out}")
    return 0


def _cmd_train_inference(args) -> int:
    t0 = time.monotonic()
    pairs = PairedFeatures.from_stores(
        store_read(args.image_features), store_read(args.text_features)
    )
    torch.manual_seed(args.seed)
    model = InferenceModel(pairs.d)
    cfg = InferenceTrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    train_inference_model(pairs, model, cfg, metrics_path=args.metrics)
    out = Path(args.out)
    save_inference_model(model, out)
    _write_manifest(out, "train-inference", dataclasses.asdict(cfg), args.seed,
                    time.monotonic() - t0, [out])
    print(f"wrote inference model to {out}")
    return 0


_TRAIN_FLAG_MAP = {
    # CLI dest -> (config path) where path is "field" or "weights.field"
    "mode": "mode",
    "d": "d",
    "steps": "steps",
    "batch_size": "batch_size",
    "lr_g": "lr_g",
    "lr_d": "lr_d",
    "beta1": "betas.0",
    "beta2": "betas.1",
    "tau": "weights.tau",
    "lam": "weights.lam",
    "gam": "weights.gam",
    "sharpen": "weights.sharpen",
    "xi": "xi",
    "aug_k": "augment.k",
    "aug_a": "augment.a",
    "aug_w": "augment.w",
    "pair_fraction": "pair_fraction",
    "seed": "seed",
    "checkpoint_every": "checkpoint_every",
    "r1_gamma": "r1_gamma",
}


def _resolve_train_config(args) -> TrainConfig:
    """Merge built-in defaults, an optional JSON config file, and CLI flags."""
    base = dataclasses.asdict(TrainConfig())
    base["betas"] = list(base["betas"])
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        for key, value in file_cfg.items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(base[key], dict) and isinstance(value, dict):
                for sub, sub_val in value.items():
                    if sub not in base[key]:
                        raise ConfigError(f"unknown config key {key}.{sub!r}")
                    base[key][sub] = sub_val
            else:
                base[key] = value
    for dest, path in _TRAIN_FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        parts = path.split(".")
        if len(parts) == 1:
            base[parts[0]] = value
        elif parts[0] == "betas":
            base["betas"][int(parts[1])] = value
        else:
            base[parts[0]][parts[1]] = value
    base["betas"] = tuple(base["betas"])
    base["weights"] = LossWeights(**base["weights"])
    base["augment"] = AugmentSpec(**base["augment"])
    return TrainConfig(**base)


def _cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = _resolve_train_config(args)
    ds = ToyDataset.from_dir(args.data)
    pair, pixel_enc = _build_encoder(args.encoder, cfg.d, args.encoder_seed, ds,
                                     args.enc_steps)
    include_text = cfg.mode in ("supervised", "semi_supervised")
    data = build_train_data(ds, pair, aug=cfg.augment, include_text=include_text,
                            seed=cfg.seed)
    feature_module = None
    if cfg.weights.lam > 0:
        feature_module = pixel_enc if pixel_enc is not None else distill_pixel_encoder(
            ds, pair, EncoderTrainConfig(steps=args.enc_steps, seed=args.encoder_seed)
        )
    inference_model = None
    if args.inference_model:
        inference_model = load_inference_model(args.inference_model)
    out = Path(args.out)
    state = train(
        cfg,
        data,
        init=args.init,
        feature_module=feature_module,
        inference_model=inference_model,
        checkpoint_dir=args.checkpoint_dir,
        metrics_path=args.metrics,
    )
    from .training import save_checkpoint

    save_checkpoint(state, out)
    resolved = dataclasses.asdict(cfg)
    resolved["betas"] = list(cfg.betas)
    outputs = [out] + ([Path(args.metrics)] if args.metrics else [])
    _write_manifest(out, "train", resolved, cfg.seed, time.monotonic() - t0, outputs)
    print(f"trained to step {state.step}; checkpoint at {out}")
    return 0


def _load_prompts(args, n_default: int) -> list[str]:
    if args.prompts:
        return list(args.prompts)
    if getattr(args, "prompts_file", None):
        text = Path(args.prompts_file).read_text(encoding="utf-8")
        return [line.strip() for line in text.splitlines() if line.strip()]
    # deterministic sample over the full attribute grid
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 23]))
    combos = all_attribute_tuples()
    return [combos[i].caption for i in rng.integers(len(combos), size=n_default)]


def _cmd_generate(args) -> int:
    t0 = time.monotonic()
    state = load_checkpoint(args.checkpoint)
    state.generator.eval()
    pair, _ = _build_encoder(args.encoder, state.gan_cfg.cond_dim, args.encoder_seed,
                             None if args.encoder == "oracle" else ToyDataset.from_dir(args.data),
                             args.enc_steps)
    prompts = _load_prompts(args, n_default=8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen_rng = torch.Generator().manual_seed(args.seed)
    outputs = []
    for prompt in prompts:
        cond = normalize(np.asarray(pair.text_encoder(prompt)))
        conds = np.tile(cond, (args.n_per_prompt, 1))
        z = torch.randn(args.n_per_prompt, state.gan_cfg.z_dim, generator=gen_rng).numpy()
        images = synthesize_batched(state.generator, conds, z)
        path = out / f"{_slug(prompt)}.png"
        save_image_grid(images, path)
        outputs.append(path)
    cfg = {"checkpoint": str(args.checkpoint), "encoder": args.encoder,
           "n_per_prompt": args.n_per_prompt, "prompts": prompts}
    _write_manifest(out, "generate", cfg, args.seed, time.monotonic() - t0, outputs)
    print(f"wrote {len(outputs)} prompt grids to {out}")
    return 0


def _cmd_mix(args) -> int:
    t0 = time.monotonic()
    state = load_checkpoint(args.checkpoint)
    state.generator.eval()
    pair, _ = _build_encoder(args.encoder, state.gan_cfg.cond_dim, args.encoder_seed,
                             None, args.enc_steps)
    h_a = normalize(np.asarray(pair.text_encoder(args.prompt_a)))
    h_b = normalize(np.asarray(pair.text_encoder(args.prompt_b)))
    gen_rng = torch.Generator().manual_seed(args.seed)
    from .gan_core import mix_generate

    images = []
    for i in range(args.n):
        z = torch.randn(state.gan_cfg.z_dim, generator=gen_rng).numpy()
        mask = MixMask(args.p, args.seed + i, state.generator.u_dims,
                       per_layer=args.per_layer)
        images.append(mix_generate(state.generator, h_a, h_b, z, mask))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"mix_{_slug(args.prompt_a)}__{_slug(args.prompt_b)}.png"
    save_image_grid(np.stack(images), path)
    cfg = {"checkpoint": str(args.checkpoint), "p": args.p, "per_layer": args.per_layer,
           "prompt_a": args.prompt_a, "prompt_b": args.prompt_b, "n": args.n}
    _write_manifest(out, "mix", cfg, args.seed, time.monotonic() - t0, [path])
    print(f"wrote mixing grid to {path}")
    return 0


def _fake_images(args, real: ToyDataset, n: int) -> np.ndarray:
    if args.fake_dir:
        return ToyDataset.from_dir(args.fake_dir).images_array()
    if not args.checkpoint:
        raise ConfigError("eval needs --fake-dir or --checkpoint")
    state = load_checkpoint(args.checkpoint)
    state.generator.eval()
    pair, _ = _build_encoder(args.encoder, state.gan_cfg.cond_dim, args.encoder_seed,
                             None, args.enc_steps)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 29]))
    conds = np.stack([
        normalize(np.asarray(pair.text_encoder(real[int(i)].caption)))
        for i in rng.integers(len(real), size=n)
    ])
    gen_rng = torch.Generator().manual_seed(args.seed)
    z = torch.randn(n, state.gan_cfg.z_dim, generator=gen_rng).numpy()
    return synthesize_batched(state.generator, conds, z)


def _cmd_eval(args) -> int:
    t0 = time.monotonic()
    real = ToyDataset.from_dir(args.real_dir)
    enc_cfg = EncoderTrainConfig(steps=args.probe_steps, seed=args.seed)
    result = {"metric": args.metric, "k": args.k,
              "reference": REFERENCE_BENCHMARKS}
    if args.metric in ("fid", "fid-k"):
        k = 0 if args.metric == "fid" else args.k
        _, img_enc, _ = train_contrastive_pair(real, 64, enc_cfg)
        extractor = lambda imgs: encode_images_batched(img_enc, imgs, penultimate=True)
        fake = _fake_images(args, real, n=len(real))
        result["value"] = fid_k(real.images_array(), fake, k, extractor)
    elif args.metric == "is":
        probe = train_probe(real, enc_cfg)
        fake = _fake_images(args, real, n=len(real))
        mean, std = inception_score(fake, probe.class_probs, splits=args.splits)
        result["value"] = mean
        result["std"] = std
    elif args.metric == "cond-acc":
        if not args.checkpoint:
            raise ConfigError("cond-acc needs --checkpoint")
        state = load_checkpoint(args.checkpoint)
        state.generator.eval()
        pair, _ = _build_encoder(args.encoder, state.gan_cfg.cond_dim,
                                 args.encoder_seed, None, args.enc_steps)
        probe = train_probe(real, enc_cfg)
        prompts = _load_prompts(args, n_default=args.n_prompts)
        result["value"] = conditional_accuracy(state.generator, pair, probe, prompts,
                                               seed=args.seed)
    else:
        raise ConfigError(f"unknown metric {args.metric!r}")
    out = Path(args.out)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg = {"metric": args.metric, "k": args.k, "real_dir": str(args.real_dir),
           "fake_dir": str(args.fake_dir) if args.fake_dir else None,
           "checkpoint": str(args.checkpoint) if args.checkpoint else None}
    _write_manifest(out, "eval", cfg, args.seed, time.monotonic() - t0, [out])
    print(json.dumps({k: v for k, v in result.items() if k != "reference"}))
    return 0


def _cmd_verify_theorem(args) -> int:
    t0 = time.monotonic()
    query = BoundQuery(c=args.c, xi=args.xi, d=args.d)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 41]))
    res = theorem1_mc_check(query, args.trials, rng, paper_exact=args.paper_exact)
    verdict = "PASS" if res.passed else "FAIL"
    print(
        f"d={args.d} xi={args.xi} c={args.c} trials={args.trials}: "
        f"bound={res.bound:.6f} empirical={res.empirical_prob:.6f} "
        f"stderr={res.stderr:.6f} {verdict}"
    )
    if args.out:
        out = Path(args.out)
        out.write_text(
            json.dumps(
                {
                    "d": args.d, "xi": args.xi, "c": args.c, "trials": args.trials,
                    "bound": res.bound, "empirical": res.empirical_prob,
                    "stderr": res.stderr, "passed": res.passed,
                    "paper_exact": args.paper_exact,
                },
                indent=2, sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        _write_manifest(out, "verify-theorem",
                        {"d": args.d, "xi": args.xi, "c": args.c, "trials": args.trials,
                         "paper_exact": args.paper_exact},
                        args.seed, time.monotonic() - t0, [out])
    return 0


# --- parser wiring -----------------------------------------------------------

def _add_encoder_flags(p: _Parser) -> None:
    p.add_argument("--encoder", choices=("oracle", "trained"), default="oracle",
                   help="conditioning encoder pair: attribute oracle or trained pixel/text pair")
    p.add_argument("--encoder-seed", type=int, default=0,
                   help="seed fixing the encoder (oracle directions / training init)")
    p.add_argument("--enc-steps", type=int, default=400,
                   help="optimization steps when fitting trained encoders")


def build_parser() -> _Parser:
    parser = _Parser(prog="langfree", description=__doc__)
    parser.add_argument("--version", action="version", version=f"langfree-{__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a seeded toy dataset to a directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("extract-features", help="encode a dataset into feature stores")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--d", type=int, default=64, help="feature dimension")
    p.add_argument("--k", type=int, default=1, help="crop count for feature averaging")
    p.add_argument("--a", type=int, default=32, help="minimum crop side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="image feature store path")
    p.add_argument("--text-out", default=None, help="optional caption feature store path")
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("train-inference",
                       help="fit the trainable perturbation model on paired features")
    p.add_argument("--image-features", required=True)
    p.add_argument("--text-features", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", default=None, help="JSON-lines training log path")
    p.add_argument("--out", required=True, help="model archive path")
    p.set_defaults(func=_cmd_train_inference)

    p = sub.add_parser("train", help="adversarial training on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", default=None, help="JSON config file mirroring TrainConfig")
    p.add_argument("--mode", choices=("language_free_fixed", "language_free_trainable",
                                      "supervised", "semi_supervised"), default=None)
    p.add_argument("--d", type=int, default=None, help="conditioning feature dimension")
    p.add_argument("--steps", type=int, default=None, help="absolute step target")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr-g", type=float, default=None, help="generator learning rate")
    p.add_argument("--lr-d", type=float, default=None, help="discriminator learning rate")
    p.add_argument("--beta1", type=float, default=None, help="Adam beta1")
    p.add_argument("--beta2", type=float, default=None, help="Adam beta2")
    p.add_argument("--tau", type=float, default=None, help="contrastive temperature")
    p.add_argument("--lam", type=float, default=None, help="generator contrastive weight")
    p.add_argument("--gam", type=float, default=None, help="discriminator contrastive weight")
    p.add_argument("--sharpen", action="store_true", default=None,
                   help="exponential sharpening before the contrastive softmax")
    p.add_argument("--no-sharpen", dest="sharpen", action="store_false",
                   help="disable exponential sharpening")
    p.add_argument("--xi", type=float, default=None, help="fixed perturbation level")
    p.add_argument("--aug-k", type=int, default=None, help="crop count for extraction")
    p.add_argument("--aug-a", type=int, default=None, help="minimum crop side")
    p.add_argument("--aug-w", type=int, default=None, help="image side for extraction")
    p.add_argument("--pair-fraction", type=float, default=None,
                   help="captioned fraction in semi_supervised mode")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="cadenced checkpoint interval in steps (0 = final only)")
    p.add_argument("--r1-gamma", type=float, default=None,
                   help="gradient penalty weight on real images")
    p.add_argument("--init", default=None, help="checkpoint to fine-tune from")
    p.add_argument("--inference-model", default=None,
                   help="trained perturbation model archive (language_free_trainable)")
    p.add_argument("--checkpoint-dir", default=None, help="directory for cadenced checkpoints")
    p.add_argument("--metrics", default=None, help="JSON-lines loss log path")
    p.add_argument("--out", required=True, help="final checkpoint path")
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="synthesize prompt-conditioned image grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompts", action="append", default=None,
                   help="caption prompt (repeatable)")
    p.add_argument("--prompts-file", default=None, help="file with one prompt per line")
    p.add_argument("--n-per-prompt", type=int, default=8)
    p.add_argument("--data", default=None, help="dataset directory (trained encoder only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("mix", help="generate from two mixed conditioning prompts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-a", required=True)
    p.add_argument("--prompt-b", required=True)
    p.add_argument("--p", type=float, default=0.5,
                   help="probability of taking a style element from prompt A")
    p.add_argument("--per-layer", action="store_true",
                   help="select whole layers instead of single elements")
    p.add_argument("--n", type=int, default=8, help="number of mixed samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("eval", help="compute metrics between real data and a model/fake set")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--fake-dir", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--metric", choices=("fid", "fid-k", "is", "cond-acc"), required=True)
    p.add_argument("--k", type=int, default=0, help="blur radius for fid-k")
    p.add_argument("--splits", type=int, default=10, help="score splits for is")
    p.add_argument("--prompts", action="append", default=None)
    p.add_argument("--prompts-file", default=None)
    p.add_argument("--n-prompts", type=int, default=512,
                   help="sampled prompt count for cond-acc")
    p.add_argument("--probe-steps", type=int, default=400,
                   help="training steps for the metric networks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="metrics JSON path")
    _add_encoder_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify-theorem",
                       help="check the similarity bound against Monte Carlo sampling")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-exact", action="store_true",
                   help="use the alternative density exponent convention")
    p.add_argument("--out", default=None, help="optional JSON result path")
    p.set_defaults(func=_cmd_verify_theorem)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LangfreeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
