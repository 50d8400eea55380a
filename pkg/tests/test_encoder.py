import numpy as np
import pytest

from lightspace import autodiff as ad
from lightspace import encoder, envmap, sh, tonemap


def tiny_config(**overrides):
    base = dict(tokens=2, embed_dim=8, model_dim=8, heads=2, head_hidden=8)
    base.update(overrides)
    return encoder.EncoderConfig(**base)


class TestInitParams:
    def test_deterministic(self):
        cfg = tiny_config()
        a = encoder.init_params(cfg, seed=11)
        b = encoder.init_params(cfg, seed=11)
        for name, arr in a.named_arrays().items():
            assert np.array_equal(arr, b.named_arrays()[name]), name

    def test_modalities_get_independent_values(self):
        p = encoder.init_params(tiny_config(), seed=3)
        assert not np.array_equal(p.fusion["envmap"].queries, p.fusion["image"].queries)
        assert not np.array_equal(p.fusion["text"].wk, p.fusion["irradiance"].wk)

    def test_default_shapes_match_contract(self):
        cfg = encoder.EncoderConfig()
        p = encoder.init_params(cfg, seed=0)
        assert p.fusion["envmap"].queries.shape == (8, cfg.model_dim)
        assert p.fusion["envmap"].wout.shape == (cfg.model_dim, 512)
        assert p.head_for("image").w2.shape[1] == 48

    def test_rejects_inconsistent_shapes(self):
        with pytest.raises(ValueError):
            encoder.EncoderConfig(model_dim=10, heads=4)

    def test_named_array_round_trip(self):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=5)
        q = encoder.EncoderParams.from_named_arrays(cfg, p.named_arrays())
        for name, arr in p.named_arrays().items():
            assert np.array_equal(arr, q.named_arrays()[name])


class TestStubBackbone:
    def test_deterministic(self, rng):
        img = rng.uniform(0, 1, size=(32, 32, 3))
        a = encoder.stub_backbone(img, seed=7)
        b = encoder.stub_backbone(img, seed=7)
        assert np.array_equal(a.tokens, b.tokens)

    def test_image_shape(self, rng):
        img = rng.uniform(0, 1, size=(64, 32, 3))
        feats = encoder.stub_backbone(img, seed=7)
        assert feats.tokens.shape == (256, 64)

    def test_nine_channel_payload_supported(self, rng):
        payload = rng.uniform(0, 1, size=(32, 64, 9))
        feats = encoder.stub_backbone(payload, seed=7, modality="envmap")
        assert feats.tokens.shape == (256, 64)
        assert feats.modality == "envmap"

    def test_single_patch_change_is_local(self, rng):
        img = rng.uniform(0, 1, size=(32, 32, 3)).astype(np.float32)
        other = img.copy()
        other[0:2, 0:2] += 0.5  # patch (0, 0) only
        a = encoder.stub_backbone(img, seed=7).tokens
        b = encoder.stub_backbone(other, seed=7).tokens
        changed = np.flatnonzero(np.any(a != b, axis=1))
        assert changed.tolist() == [0]

    def test_text_tokens(self):
        feats = encoder.stub_backbone("warm light from the left", seed=7, modality="text")
        assert feats.tokens.shape == (32, 64)
        assert not feats.empty
        assert np.linalg.norm(feats.tokens) > 0

    def test_empty_text_flagged(self):
        feats = encoder.stub_backbone("", seed=7, modality="text")
        assert feats.empty
        assert np.array_equal(feats.tokens, np.zeros((32, 64), dtype=np.float32))

    def test_different_text_different_tokens(self):
        a = encoder.stub_backbone("sun high in the east", seed=7, modality="text")
        b = encoder.stub_backbone("moon low in the west", seed=7, modality="text")
        assert not np.array_equal(a.tokens, b.tokens)

    def test_rejects_bad_image_dims(self):
        with pytest.raises(ValueError):
            encoder.stub_backbone(np.zeros((30, 32, 3)), seed=1)


class TestFusionForward:
    def test_output_shape_default_config(self, rng):
        cfg = encoder.EncoderConfig()
        p = encoder.init_params(cfg, seed=1)
        feats = encoder.stub_backbone(rng.uniform(0, 1, (32, 32, 3)), seed=2)
        emb = encoder.fusion_forward(p.fusion["image"], feats, cfg)
        assert emb.tokens.shape == (8, 512)

    def test_zero_kv_projections_ignore_input(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        fp = p.fusion["image"]
        fp.wk[:] = 0
        fp.wv[:] = 0
        feats_a = encoder.FeatureSequence(rng.normal(size=(20, 64)).astype(np.float32), "image")
        feats_b = encoder.FeatureSequence(rng.normal(size=(20, 64)).astype(np.float32), "image")
        a = encoder.fusion_forward(fp, feats_a, cfg).tokens
        b = encoder.fusion_forward(fp, feats_b, cfg).tokens
        assert np.allclose(a, b, atol=1e-7)

    def test_key_value_permutation_invariance(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        tokens = rng.normal(size=(20, 64)).astype(np.float64)
        perm = rng.permutation(20)
        a = encoder.fusion_forward(p.fusion["image"], encoder.FeatureSequence(tokens, "image"), cfg).tokens
        b = encoder.fusion_forward(
            p.fusion["image"], encoder.FeatureSequence(tokens[perm], "image"), cfg
        ).tokens
        assert np.allclose(a, b, atol=1e-10)

    def test_batched_matches_single(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1, dtype=np.float64)
        batch = rng.normal(size=(3, 20, 64))
        stacked = encoder.fusion_tokens(p.fusion["image"], batch, cfg)
        for i in range(3):
            single = encoder.fusion_tokens(p.fusion["image"], batch[i], cfg)
            assert np.allclose(stacked[i], single, atol=1e-12)

    def test_attention_weights_sum_to_one(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        feats = rng.normal(size=(1, 20, 64))
        k = np.swapaxes((feats @ p.fusion["image"].wk).reshape(1, 20, 2, 4), 1, 2)
        q = np.swapaxes(p.fusion["image"].queries.reshape(2, 2, 4), 0, 1)
        scores = (q @ np.swapaxes(k, 2, 3)) / 2.0
        attn = ad.softmax(scores, axis=-1)
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)


class TestPredictSh:
    def test_output_is_48_scalars(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        emb = encoder.Embedding(rng.normal(size=(2, 8)).astype(np.float32), "image")
        out = encoder.predict_sh(p.head_for("image"), emb, cfg)
        assert out.shape == (3, 16)

    def test_zero_params_give_zero_coeffs(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        head = p.head_for("image")
        for f in ("w1", "b1", "w2", "b2"):
            getattr(head, f)[:] = 0
        emb = encoder.Embedding(rng.normal(size=(2, 8)).astype(np.float32), "image")
        assert np.array_equal(encoder.predict_sh(head, emb, cfg), np.zeros((3, 16)))

    def test_deterministic(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        emb = encoder.Embedding(rng.normal(size=(2, 8)).astype(np.float32), "image")
        a = encoder.predict_sh(p.head_for("image"), emb, cfg)
        b = encoder.predict_sh(p.head_for("image"), emb, cfg)
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=1)
        emb = encoder.Embedding(rng.normal(size=(3, 8)).astype(np.float32), "image")
        with pytest.raises(ValueError):
            encoder.predict_sh(p.head_for("image"), emb, cfg)


class TestEnvmapPayload:
    def test_nine_channels(self, rng):
        radiance = rng.uniform(0, 5, size=(16, 32, 3))
        payload = encoder.envmap_payload(radiance)
        assert payload.shape == (16, 32, 9)
        dirs = envmap.direction_map(32, 16)
        assert np.array_equal(payload[..., 6:], dirs)
        assert payload[..., :6].min() >= 0.0 and payload[..., :6].max() <= 1.0

    def test_dropped_log_block_is_zero(self, rng):
        radiance = rng.uniform(0, 5, size=(16, 32, 3))
        dropped = tonemap.LogImage(data=np.zeros((16, 32, 3)), dropped=True)
        payload = encoder.envmap_payload(radiance, log_image=dropped)
        assert np.array_equal(payload[..., 3:6], np.zeros((16, 32, 3)))

    def test_end_to_end_encode_deterministic(self, rng):
        cfg = tiny_config()
        p = encoder.init_params(cfg, seed=4)
        radiance = rng.uniform(0, 5, size=(32, 64, 3))
        payloads = {
            "envmap": encoder.envmap_payload(radiance),
            "image": rng.uniform(0, 1, (32, 32, 3)),
            "irradiance": rng.uniform(0, 1, (32, 32, 3)),
            "text": "soft overcast light",
        }
        a = encoder.encode(p, payloads, base_seed=9)
        b = encoder.encode(p, payloads, base_seed=9)
        for m in encoder.MODALITIES:
            assert np.array_equal(a[m].tokens, b[m].tokens)
            assert np.linalg.norm(a[m].tokens) > 0
