import hashlib
import json

import numpy as np
import pytest
import torch

from langfree.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
)
from langfree.features import AugmentSpec
from langfree.gan_core import GANConfig
from langfree.losses import LossWeights
from langfree.pseudo import InferenceModel
from langfree.toyset import gen_dataset, oracle_encoders
from langfree.training import (
    Batch,
    TrainConfig,
    TrainData,
    build_train_data,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)

W_OFF = LossWeights(tau=0.5, lam=0.0, gam=0.0, sharpen=True)
W_ON = LossWeights(tau=0.5, lam=10.0, gam=10.0, sharpen=True)


@pytest.fixture(scope="module")
def ds():
    return gen_dataset(64, seed=30)


@pytest.fixture(scope="module")
def enc():
    return oracle_encoders(64, seed=0)


@pytest.fixture(scope="module")
def data(ds, enc):
    return build_train_data(ds, enc, include_text=True)


@pytest.fixture()
def feature_module():
    torch.manual_seed(7)
    from langfree.encoders import ConvImageEncoder

    return ConvImageEncoder(64)


def _digest(state):
    h = hashlib.sha256()
    h.update(str(state.step).encode())
    for module in (state.generator, state.discriminator):
        for name, t in sorted(module.state_dict().items()):
            h.update(name.encode())
            h.update(t.numpy().tobytes())
    return h.hexdigest()


def _cfg(**kw):
    base = dict(
        mode="language_free_fixed",
        d=64,
        steps=4,
        batch_size=4,
        weights=W_OFF,
        seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_mode_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(mode="unsupervised")

    def test_batch_floor_for_contrastive(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1, weights=W_ON)
        TrainConfig(batch_size=1, weights=W_OFF)  # fine without contrastive terms

    def test_range_checks(self):
        with pytest.raises(ConfigError):
            TrainConfig(pair_fraction=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(xi=-0.1)
        with pytest.raises(ConfigError):
            TrainConfig(steps=-1)


class TestBuildTrainData:
    def test_shapes_and_unit_features(self, ds, enc):
        data = build_train_data(ds, enc, include_text=True)
        assert data.images.shape == (64, 32, 32, 3)
        assert data.image_features.shape == (64, 64)
        assert data.text_features.shape == (64, 64)
        norms = np.linalg.norm(data.image_features, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)

    def test_text_encoder_not_called_without_flag(self, ds):
        enc = oracle_encoders(64, seed=0)

        def boom(caption):
            raise AssertionError("text encoder must not run")

        from langfree.features import EncoderPair

        probe_enc = EncoderPair(image_encoder=enc.image_encoder, text_encoder=boom, d=64)
        data = build_train_data(ds, probe_enc, include_text=False)
        assert data.text_features is None

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(DataError):
            TrainData(
                images=np.zeros((4, 32, 32, 3), dtype=np.float32),
                image_features=np.zeros((3, 64)),
            )


class TestTrainStep:
    def _batch(self, data, n=4):
        # clone: from_numpy shares memory, and the NaN test mutates its batch
        return Batch(
            images=torch.from_numpy(data.images[:n]).permute(0, 3, 1, 2).clone(),
            image_features=torch.from_numpy(data.image_features[:n].astype(np.float32)),
            text_features=None,
            supervised_mask=None,
        )

    def test_report_schema(self, data):
        state = init_state(_cfg())
        report = train_step(state, self._batch(data))
        assert set(report) == {"step", "L_G", "L_D", "L_ConD", "L_ConG"}
        assert report["step"] == 1
        assert all(np.isfinite(v) for v in report.values())

    def test_parameters_change(self, data):
        state = init_state(_cfg())
        before = _digest(state)
        train_step(state, self._batch(data))
        assert _digest(state) != before

    def test_zero_lr_keeps_parameters(self, data):
        state = init_state(_cfg(lr_g=0.0, lr_d=0.0))
        before = {k: t.clone() for k, t in state.generator.state_dict().items()}
        report = train_step(state, self._batch(data))
        after = state.generator.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)
        assert np.isfinite(report["L_G"])

    def test_contrastive_terms_zero_when_disabled(self, data):
        state = init_state(_cfg())
        report = train_step(state, self._batch(data))
        assert report["L_ConD"] == 0.0 and report["L_ConG"] == 0.0

    def test_lam_without_feature_module_rejected(self, data):
        state = init_state(_cfg(weights=W_ON))
        with pytest.raises(ConfigError):
            train_step(state, self._batch(data))

    def test_nan_images_abort(self, data):
        state = init_state(_cfg())
        batch = self._batch(data)
        batch.images[0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericalError):
            train_step(state, batch)

    def test_discriminator_grads_restored_after_g_update(self, data, feature_module):
        state = init_state(_cfg(weights=W_ON))
        train_step(state, self._batch(data), feature_module=feature_module)
        assert all(p.requires_grad for p in state.discriminator.parameters())


class TestTrainLoop:
    def test_steps_zero_is_noop(self, data):
        cfg = _cfg(steps=0)
        fresh = init_state(cfg)
        out = train(cfg, data, init=fresh)
        assert out.step == 0
        assert _digest(out) == _digest(init_state(cfg))

    def test_absolute_step_semantics(self, data):
        cfg = _cfg(steps=6)
        state = train(cfg, data)
        resumed = train(_cfg(steps=6), data, init=state)
        assert resumed.step == 6  # already at target: nothing runs
        extended = train(_cfg(steps=9), data, init=state)
        assert extended.step == 9

    def test_run_determinism(self, data):
        a = train(_cfg(steps=5), data)
        b = train(_cfg(steps=5), data)
        assert _digest(a) == _digest(b)

    def test_seed_changes_run(self, data):
        a = train(_cfg(steps=5, seed=1), data)
        b = train(_cfg(steps=5, seed=2), data)
        assert _digest(a) != _digest(b)

    def test_resume_equals_straight_run(self, data, tmp_path):
        straight = train(_cfg(steps=8), data)
        half = train(_cfg(steps=4), data)
        path = tmp_path / "mid.lfta"
        save_checkpoint(half, path)
        resumed = train(_cfg(steps=8), data, init=str(path))
        assert _digest(resumed) == _digest(straight)

    def test_metrics_log(self, data, tmp_path):
        mpath = tmp_path / "metrics.jsonl"
        train(_cfg(steps=5), data, metrics_path=mpath)
        rows = [json.loads(l) for l in mpath.read_text().splitlines()]
        assert [r["step"] for r in rows] == [1, 2, 3, 4, 5]
        assert set(rows[0]) == {"step", "L_G", "L_D", "L_ConD", "L_ConG"}

    def test_checkpoint_cadence(self, data, tmp_path):
        train(_cfg(steps=5, checkpoint_every=2), data, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.lfta"))
        assert names == ["ckpt_0000002.lfta", "ckpt_0000004.lfta", "ckpt_final.lfta"]

    def test_supervised_requires_text(self, ds, enc):
        lf_data = build_train_data(ds, enc, include_text=False)
        with pytest.raises(DataError):
            train(_cfg(mode="supervised", steps=1), lf_data)

    def test_trainable_mode_requires_inference_model(self, data):
        with pytest.raises(ConfigError):
            train(_cfg(mode="language_free_trainable", steps=1), data)

    def test_feature_dim_mismatch(self, ds, enc):
        data = build_train_data(ds, enc)
        bad = TrainData(images=data.images, image_features=data.image_features[:, :32])
        with pytest.raises(DataError):
            train(_cfg(steps=1), bad)


class TestModeEquivalences:
    def test_pair_fraction_one_matches_supervised(self, data):
        sup = train(_cfg(mode="supervised", steps=4), data)
        semi = train(_cfg(mode="semi_supervised", pair_fraction=1.0, steps=4), data)
        assert _digest(sup) == _digest(semi)

    def test_pair_fraction_zero_matches_language_free(self, data):
        lf = train(_cfg(mode="language_free_fixed", steps=4), data)
        semi = train(_cfg(mode="semi_supervised", pair_fraction=0.0, steps=4), data)
        assert _digest(lf) == _digest(semi)

    def test_half_fraction_differs_from_both(self, data):
        lf = train(_cfg(mode="language_free_fixed", steps=4), data)
        sup = train(_cfg(mode="supervised", steps=4), data)
        semi = train(_cfg(mode="semi_supervised", pair_fraction=0.5, steps=4), data)
        assert _digest(semi) not in (_digest(lf), _digest(sup))

    def test_trainable_mode_uses_inference_model(self, data):
        torch.manual_seed(11)
        inf = InferenceModel(64)
        a = train(
            _cfg(mode="language_free_trainable", steps=3), data, inference_model=inf
        )
        b = train(_cfg(mode="language_free_fixed", steps=3), data)
        assert _digest(a) != _digest(b)

    def test_inference_model_frozen_during_training(self, data):
        torch.manual_seed(11)
        inf = InferenceModel(64)
        before = {k: t.clone() for k, t in inf.state_dict().items()}
        train(_cfg(mode="language_free_trainable", steps=3), data, inference_model=inf)
        after = inf.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)


class _TripwireStr(str):
    touched = []

    def split(self, *a, **kw):
        _TripwireStr.touched.append(str(self))
        return super().split(*a, **kw)


class TestCaptionIsolation:
    def test_language_free_never_reads_captions(self, enc):
        ds = gen_dataset(16, seed=31)
        for s in ds:
            s.caption = _TripwireStr(s.caption)
        _TripwireStr.touched.clear()
        data = build_train_data(ds, enc, include_text=False)
        train(_cfg(steps=2, batch_size=4), data)
        assert _TripwireStr.touched == []
        # control: the probe does fire when a caption is actually parsed
        enc.text_encoder(ds[0].caption)
        assert _TripwireStr.touched


class TestCheckpointIO:
    def test_save_load_save_byte_identical(self, data, tmp_path):
        state = train(_cfg(steps=3, weights=W_OFF), data)
        p1, p2 = tmp_path / "a.lfta", tmp_path / "b.lfta"
        save_checkpoint(state, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_restores_everything(self, data, tmp_path):
        state = train(_cfg(steps=3), data)
        path = tmp_path / "s.lfta"
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        assert back.step == 3
        assert back.cfg == state.cfg
        assert _digest(back) == _digest(state)
        assert torch.equal(back.rng.get_state(), state.rng.get_state())

    def test_optimizer_state_round_trips(self, data, tmp_path):
        state = train(_cfg(steps=3), data)
        path = tmp_path / "s.lfta"
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        for orig_p, back_p in zip(
            state.generator.parameters(), back.generator.parameters()
        ):
            orig_st = state.opt_g.state[orig_p]
            back_st = back.opt_g.state[back_p]
            assert torch.equal(orig_st["exp_avg"], back_st["exp_avg"])
            assert torch.equal(orig_st["exp_avg_sq"], back_st["exp_avg_sq"])
            assert torch.equal(orig_st["step"], back_st["step"])

    def test_inference_model_round_trips(self, data, tmp_path):
        torch.manual_seed(12)
        inf = InferenceModel(64)
        state = train(
            _cfg(mode="language_free_trainable", steps=2), data, inference_model=inf
        )
        path = tmp_path / "s.lfta"
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        for k, t in inf.state_dict().items():
            assert torch.equal(back.inference_model.state_dict()[k], t)

    def test_wrong_kind_rejected(self, tmp_path):
        from langfree.archive import save_archive

        path = tmp_path / "other.lfta"
        save_archive(path, {"x": np.zeros(3, dtype=np.float32)}, {"kind": "other"})
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_cond_dim_mismatch_rejected(self, tmp_path):
        small = init_state(_cfg(d=32, steps=1), gan_cfg=GANConfig(cond_dim=32))
        path = tmp_path / "small.lfta"
        save_checkpoint(small, path)
        data64 = TrainData(
            images=np.zeros((4, 32, 32, 3), dtype=np.float32),
            image_features=np.ones((4, 64), dtype=np.float32),
        )
        with pytest.raises(CheckpointError):
            train(_cfg(d=64, steps=2), data64, init=str(path))


class TestLearningSignal:
    def test_generator_contrastive_loss_decreases(self, ds, enc, feature_module):
        # with the generator contrastive term active, its value should drop as
        # the generator learns to align fake-image features with conditions
        data = build_train_data(ds, enc, include_text=False)
        cfg = _cfg(
            steps=120,
            batch_size=8,
            weights=LossWeights(tau=0.5, lam=10.0, gam=0.0, sharpen=True),
            lr_g=5e-4,
            lr_d=5e-4,
            betas=(0.5, 0.999),
            seed=4,
        )
        reports = []
        state = init_state(cfg)
        rng = torch.Generator().manual_seed(99)
        imgs = torch.from_numpy(data.images).permute(0, 3, 1, 2)
        feats = torch.from_numpy(data.image_features.astype(np.float32))
        for _ in range(cfg.steps):
            idx = torch.randint(len(imgs), (cfg.batch_size,), generator=rng)
            batch = Batch(
                images=imgs[idx],
                image_features=feats[idx],
                text_features=None,
                supervised_mask=None,
            )
            reports.append(train_step(state, batch, feature_module=feature_module))
        early = np.mean([r["L_ConG"] for r in reports[:15]])
        late = np.mean([r["L_ConG"] for r in reports[-15:]])
        assert late < early
