import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nightlayers import suppression
from nightlayers.autodiff import ShapeError, Tape
from nightlayers.suppression import (
    LOG_HEADER,
    DomainSample,
    Networks,
    SuppressionConfig,
    attention_map,
    enhance,
    loss_adv,
    loss_atten,
    loss_iden,
    lr_scale,
    refine,
    sample_batch,
    train_step,
    train_suppression,
)
from nightlayers.synthbench import GlowSpec, synth_composite, synth_scene


def toy_domains(n=3, size=32):
    effects, free = [], []
    for i in range(n):
        clean = synth_scene(size, size, 500 + i)
        img, glow = synth_composite(clean, GlowSpec.random(size, size, 600 + i, radius=(4, 8)))
        effects.append((np.clip(img - glow, 0, 1).astype(np.float32), glow, img))
        free.append(synth_scene(size, size, 700 + i))
    return effects, free


def small_cfg(**kw):
    base = dict(crop=32, batch=1, steps=4)
    base.update(kw)
    return SuppressionConfig(**base)


def gen_out(nets, img, guide, modulate=True):
    tape = Tape()
    out, feats = nets.gen.forward(tape, img[None].transpose(0, 3, 1, 2), guide[None].transpose(0, 3, 1, 2), modulate=modulate)
    return out.data, feats.data


class TestGenerator:
    def setup_method(self):
        self.nets = Networks.create(0)
        self.img = synth_scene(64, 64, 1)

    def test_zero_guidance_is_unmodulated(self):
        zero = np.zeros_like(self.img)
        a, _ = gen_out(self.nets, self.img, zero, modulate=True)
        b, _ = gen_out(self.nets, self.img, zero, modulate=False)
        assert np.array_equal(a, b)

    def test_guidance_changes_output(self):
        glow = np.full_like(self.img, 0.5)
        a, _ = gen_out(self.nets, self.img, glow, modulate=True)
        b, _ = gen_out(self.nets, self.img, glow, modulate=False)
        assert not np.array_equal(a, b)

    def test_shape_and_range(self):
        out, feats = gen_out(self.nets, self.img, np.zeros_like(self.img))
        assert out.shape == (1, 3, 64, 64)
        assert out.min() > 0.0 and out.max() < 1.0
        assert feats.shape == (1, 64, 8, 8)

    def test_padding_for_odd_extent(self):
        img = synth_scene(30, 42, 2)
        out = refine(self.nets, img, np.zeros_like(img))
        assert out.shape == (30, 42, 3)

    def test_deterministic(self):
        a = refine(self.nets, self.img, self.img * 0.3)
        b = refine(Networks.create(0), self.img, self.img * 0.3)
        assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            self.nets.gen.forward(Tape(), np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 16)))

    def test_hand_built_copy_network_has_zero_identity_loss(self):
        nets = Networks.create(0)
        nets.gen.params["head.w"].value[:] = 0.0
        nets.gen.params["head.b"].value[:] = 0.0
        img = np.clip(synth_scene(32, 32, 3), 0.01, 0.99)
        out = refine(nets, img, np.zeros_like(img), averaged=False)
        assert loss_iden(out, img) <= 1e-6


class TestAttention:
    def test_zero_features(self):
        assert not attention_map(np.zeros((4, 5, 6)), np.ones(4)).any()

    def test_single_active_channel(self):
        feats = np.zeros((3, 4, 4))
        feats[1] = np.arange(16.0).reshape(4, 4)
        out = attention_map(feats, np.array([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(out, np.arange(16.0).reshape(4, 4) / 15.0, atol=1e-7)

    def test_extent_and_range(self):
        feats = np.random.default_rng(0).normal(size=(2, 8, 5, 7))
        out = attention_map(feats, np.random.default_rng(1).normal(size=8))
        assert out.shape == (2, 5, 7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            attention_map(np.zeros((3, 2, 2)), np.ones(4))


class TestLosses:
    def test_atten_half(self):
        assert loss_atten([0.5], [0.5]) == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_atten_perfect(self):
        assert loss_atten([1 - 1e-6], [1e-6]) == pytest.approx(0.0, abs=1e-5)
        assert loss_atten([1.0], [0.0]) == pytest.approx(0.0, abs=1e-5)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.001, 0.01), st.floats(0.01, 0.99))
    def test_atten_monotone(self, pe, step, pf):
        assert loss_atten([pe + step], [pf]) < loss_atten([pe], [pf])

    def test_adv_half(self):
        d_obj, g_loss = loss_adv([0.5], [0.5])
        assert d_obj == pytest.approx(2 * math.log(0.5), abs=1e-9)
        assert d_obj == pytest.approx(-1.3863, abs=1e-4)
        assert g_loss == pytest.approx(math.log(2), abs=1e-9)

    def test_adv_limit(self):
        d_obj, _ = loss_adv([1.0], [0.0])
        assert d_obj == pytest.approx(0.0, abs=1e-5)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
    def test_adv_generator_monotone(self, df, step):
        assert loss_adv([0.5], [df + step])[1] < loss_adv([0.5], [df])[1]

    def test_iden(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(1, 3, 5, 4))
        assert loss_iden(a, a) == 0.0
        assert loss_iden(a + 0.1, a) == pytest.approx(0.1, abs=1e-9)
        b = rng.uniform(size=a.shape)
        total = sum(abs(a[0, c, i, j] - b[0, c, i, j]) for c in range(3) for i in range(5) for j in range(4))
        assert loss_iden(a, b) == pytest.approx(total / 60, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=4), st.lists(st.floats(0, 1), min_size=1, max_size=4))
    def test_losses_finite_and_nonnegative(self, pe, pf):
        assert 0.0 <= loss_atten(pe, pf) < math.inf
        d_obj, g_loss = loss_adv(pe, pf)
        assert -d_obj >= 0.0 and math.isfinite(d_obj)
        assert 0.0 <= g_loss < math.inf


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SuppressionConfig(adv_mode="wgan")
        with pytest.raises(ValueError):
            SuppressionConfig(decay_from=1.5)
        with pytest.raises(ValueError):
            SuppressionConfig(ema_decay=1.0)

    def test_lr_schedule(self):
        cfg = SuppressionConfig(steps=100, decay_from=0.5)
        assert lr_scale(cfg, 0) == 1.0 and lr_scale(cfg, 49) == 1.0
        assert lr_scale(cfg, 75) == pytest.approx(0.5)
        assert 0.0 < lr_scale(cfg, 99) < 0.05

    def test_effects_free_sample_guidance(self):
        with pytest.raises(ValueError):
            DomainSample(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), effects=False)
        assert not DomainSample.effects_free(np.ones((4, 4, 3))).guidance.any()

    def test_empty_batch(self):
        with pytest.raises(ValueError, match="non-empty"):
            train_step([], [], Networks.create(0), small_cfg())

    def test_inputs_unchanged(self):
        effects, free = toy_domains()
        snapshot = [tuple(a.copy() for a in e) for e in effects], [f.copy() for f in free]
        batch_e, batch_f = sample_batch(effects, free, small_cfg(), 0)
        before = [(s.image.copy(), s.guidance.copy()) for s in batch_e + batch_f]
        rec = train_step(batch_e, batch_f, Networks.create(0), small_cfg())
        for s, (img, gui) in zip(batch_e + batch_f, before):
            assert np.array_equal(s.image, img) and np.array_equal(s.guidance, gui)
        for e, e0 in zip(effects, snapshot[0]):
            assert all(np.array_equal(a, b) for a, b in zip(e, e0))
        for vals in (rec.adv_d, rec.adv_g, rec.atten, rec.iden, rec.gray_feat):
            assert math.isfinite(vals) and vals >= 0.0

    def test_zero_weights_leave_parameters(self):
        cfg = small_cfg(lambda_gray_feat=0, lambda_atten=0, lambda_adv=0, lambda_iden=0)
        nets = Networks.create(0)
        before = {p.name: p.value.copy() for p in nets.all_parameters()}
        train_suppression(None, None, cfg, nets=nets, domains=toy_domains())
        for p in nets.all_parameters():
            assert np.array_equal(p.value, before[p.name]), p.name
            assert p.step == 4
        assert nets.step == 4

    def test_identical_runs_identical_deltas(self):
        doms = toy_domains()
        a, _ = train_suppression(None, None, small_cfg(steps=2), nets=Networks.create(0), domains=doms)
        b, _ = train_suppression(None, None, small_cfg(steps=2), nets=Networks.create(0), domains=doms)
        for pa, pb in zip(a.all_parameters(), b.all_parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_zero_steps_returns_initialisation(self):
        nets, recs = train_suppression(None, None, small_cfg(steps=0), domains=toy_domains())
        fresh = Networks.create(0)
        assert recs == []
        for pa, pb in zip(nets.all_parameters(), fresh.all_parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_resume_matches_uninterrupted(self, tmp_path):
        doms = toy_domains()
        cfg = small_cfg(steps=6, decay_from=0.3)
        full, recs_full = train_suppression(None, None, cfg, nets=Networks.create(0), domains=doms)

        half, recs_a = train_suppression(None, None, cfg, nets=Networks.create(0), domains=doms, stop_at=3)
        half.save(tmp_path / "ckpt")
        resumed = Networks.load(tmp_path / "ckpt")
        assert resumed.step == 3
        resumed, recs_b = train_suppression(None, None, cfg, nets=resumed, domains=doms)

        assert [r.csv() for r in recs_a + recs_b] == [r.csv() for r in recs_full]
        for pa, pb in zip(full.all_parameters(), resumed.all_parameters()):
            assert np.array_equal(pa.value, pb.value), pa.name
            assert np.array_equal(pa.m, pb.m) and pa.step == pb.step
        for name in full.ema:
            assert np.array_equal(full.ema[name], resumed.ema[name]), name

    def test_weight_average_oracle(self):
        doms = toy_domains()
        nets = Networks.create(0)
        expected = {k: v.astype(np.float64) for k, v in nets.ema.items()}
        decay = 0.9

        def follow(rec):
            for k, p in nets.gen.params.items():
                expected[k] = decay * expected[k] + (1 - decay) * p.value

        train_suppression(None, None, small_cfg(steps=3, ema_decay=decay), nets=nets, domains=doms, on_step=follow)
        for k, v in nets.ema.items():
            np.testing.assert_allclose(v, expected[k], atol=1e-6)
            assert not np.array_equal(v, nets.gen.params[k].value)

    def test_zero_decay_tracks_latest_weights(self):
        nets, _ = train_suppression(None, None, small_cfg(steps=2, ema_decay=0.0), domains=toy_domains())
        img = np.random.default_rng(0).uniform(0.1, 0.9, size=(16, 16, 3))
        guide = np.zeros_like(img)
        assert np.array_equal(refine(nets, img, guide), refine(nets, img, guide, averaged=False))

    def test_archive_without_average_falls_back(self, tmp_path):
        nets = Networks.create(0)
        nets.gen.params["head.b"].value[:] = 0.25
        nets.save(tmp_path / "w")
        manifest = tmp_path / "w" / "manifest.txt"
        kept = [ln for ln in manifest.read_text().splitlines() if not ln.startswith("gen_ema.")]
        manifest.write_text("\n".join(kept) + "\n")
        loaded = Networks.load(tmp_path / "w")
        assert np.all(loaded.ema["head.b"] == 0.25)

    def test_lsgan_mode_runs(self):
        nets, recs = train_suppression(None, None, small_cfg(steps=1, adv_mode="lsgan"), domains=toy_domains())
        assert math.isfinite(recs[0].adv_d)

    def test_log_line(self):
        _, recs = train_suppression(None, None, small_cfg(steps=1), domains=toy_domains())
        assert len(recs[0].csv().split(",")) == len(LOG_HEADER.split(","))

    def test_unreadable_folder(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing"):
            train_suppression(tmp_path / "missing", tmp_path, small_cfg())


class TestEnhance:
    def test_lowlight_skips_decomposition(self, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("decompose called")

        monkeypatch.setattr(suppression, "decompose", boom)
        img = synth_scene(24, 24, 4)
        original = img.copy()
        trace = {}
        out = enhance(img, Networks.create(0), "lowlight", trace=trace)
        assert trace["decomposed"] is False
        assert out.shape == img.shape and out.min() > 0.0 and out.max() < 1.0
        assert np.array_equal(img, original)

    def test_suppress_decomposes(self):
        from nightlayers.decomposition import DecompConfig

        img = synth_scene(24, 24, 5)
        trace = {}
        out = enhance(img, Networks.create(0), "suppress", DecompConfig(iterations=2), trace=trace)
        assert trace["decomposed"] is True
        assert out.shape == img.shape

    def test_missing_weights(self):
        with pytest.raises(ValueError, match="weights"):
            enhance(np.zeros((8, 8, 3)), None)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            enhance(np.zeros((8, 8, 3)), Networks.create(0), "night")
