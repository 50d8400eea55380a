import numpy as np
import pytest

from lightspace import encoder, io


class TestPfm:
    def test_round_trip_bit_identical(self, tmp_path, rng):
        data = rng.uniform(0, 100, size=(8, 16, 3)).astype(np.float32)
        path = tmp_path / "map.pfm"
        io.save_pfm(path, data)
        assert np.array_equal(io.load_pfm(path), data)

    def test_rejects_grayscale(self, tmp_path):
        path = tmp_path / "gray.pfm"
        path.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 16)
        with pytest.raises(io.FormatError):
            io.load_pfm(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "short.pfm"
        path.write_bytes(b"PF\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(io.CorruptFileError):
            io.load_pfm(path)


class TestRgbe:
    def test_reference_pixel_encoding(self):
        rgbe = io.float_to_rgbe(np.array([[[1.0, 0.0, 0.0]]]))
        assert rgbe[0, 0].tolist() == [128, 0, 0, 129]

    def test_zero_exponent_decodes_black(self):
        assert np.array_equal(
            io.rgbe_to_float(np.array([[[10, 20, 30, 0]]], dtype=np.uint8)),
            np.zeros((1, 1, 3)),
        )

    def test_round_trip_error_bound(self, rng):
        data = rng.uniform(0, 1000, size=(16, 32, 3))
        decoded = io.rgbe_to_float(io.float_to_rgbe(data))
        vmax = data.max(axis=-1, keepdims=True)
        rel = np.abs(decoded - data) / np.maximum(vmax, 1e-32)
        assert rel.max() <= 1.0 / 256.0 + 1e-12

    def test_file_round_trip(self, tmp_path, rng):
        data = rng.uniform(0, 50, size=(16, 32, 3))
        path = tmp_path / "map.hdr"
        io.save_hdr(path, data)
        loaded = io.load_hdr(path)
        vmax = data.max(axis=-1, keepdims=True)
        assert (np.abs(loaded - data) / np.maximum(vmax, 1e-32)).max() <= 1.0 / 256.0 + 1e-12

    def test_rle_compresses_constant_rows(self, tmp_path):
        flat = np.full((8, 64, 3), 2.5)
        path = tmp_path / "flat.hdr"
        io.save_hdr(path, flat)
        # 64 pixels x 4 bytes = 256 raw; RLE should be far smaller
        assert path.stat().st_size < 8 * 100
        assert np.allclose(io.load_hdr(path), flat, rtol=1 / 256)

    def test_narrow_image_uses_flat_scanlines(self, tmp_path, rng):
        data = rng.uniform(0, 10, size=(4, 4, 3))
        path = tmp_path / "tiny.hdr"
        io.save_hdr(path, data)
        loaded = io.load_hdr(path)
        vmax = data.max(axis=-1, keepdims=True)
        assert (np.abs(loaded - data) / vmax).max() <= 1.0 / 256.0 + 1e-12

    def test_truncated_scanline_reports_offset(self, tmp_path, rng):
        data = rng.uniform(0, 10, size=(8, 16, 3))
        path = tmp_path / "map.hdr"
        io.save_hdr(path, data)
        blob = path.read_bytes()
        clipped = tmp_path / "clipped.hdr"
        clipped.write_bytes(blob[: len(blob) - 20])
        with pytest.raises(io.CorruptFileError, match="byte"):
            io.load_hdr(clipped)

    def test_unknown_magic(self, tmp_path):
        path = tmp_path / "bad.hdr"
        path.write_bytes(b"GIF89a whatever")
        with pytest.raises(io.FormatError):
            io.load_radiance_map(path)

    def test_sniffing_dispatch(self, tmp_path, rng):
        data = rng.uniform(0, 5, size=(4, 8, 3))
        hdr = tmp_path / "a.hdr"
        pfm = tmp_path / "b.pfm"
        io.save_radiance_map(hdr, data)
        io.save_radiance_map(pfm, data)
        assert io.load_radiance_map(pfm).shape == (4, 8, 3)
        assert io.load_radiance_map(hdr).shape == (4, 8, 3)


class TestPng:
    def test_quantization_endpoints(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[0] = 1.0
        path = tmp_path / "img.png"
        io.save_ldr_image(path, img)
        loaded = io.load_ldr_image(path)
        assert loaded[0, 0, 0] == 1.0
        assert loaded[2, 2, 1] == 0.0

    def test_round_trip_error_bound(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(8, 8, 3))
        path = tmp_path / "img.png"
        io.save_ldr_image(path, img)
        assert np.abs(io.load_ldr_image(path) - img).max() <= 0.5 / 255.0 + 1e-12

    def test_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            io.save_ldr_image(tmp_path / "x.png", np.full((2, 2, 3), 1.5))


class TestEmbeddingStore:
    def test_round_trip_bit_identical(self, tmp_path, rng):
        embs = rng.normal(size=(100, 8, 512)).astype(np.float32)
        ids = [f"sample-{i}" for i in range(100)]
        path = tmp_path / "store.ulemb"
        io.save_embedding_store(path, embs, ids, "envmap")
        loaded, loaded_ids, modality = io.load_embedding_store(path)
        assert np.array_equal(loaded, embs)
        assert loaded_ids == ids
        assert modality == "envmap"

    def test_corrupted_magic(self, tmp_path, rng):
        path = tmp_path / "store.ulemb"
        io.save_embedding_store(path, rng.normal(size=(2, 2, 4)).astype(np.float32), ["a", "b"], "image")
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(io.FormatError):
            io.load_embedding_store(path)

    def test_empty_store(self, tmp_path):
        path = tmp_path / "empty.ulemb"
        io.save_embedding_store(path, np.zeros((0, 8, 16), dtype=np.float32), [], "text")
        loaded, ids, modality = io.load_embedding_store(path)
        assert loaded.shape == (0, 8, 16)
        assert ids == []

    def test_truncated_body(self, tmp_path, rng):
        path = tmp_path / "store.ulemb"
        io.save_embedding_store(path, rng.normal(size=(4, 2, 4)).astype(np.float32), list("abcd"), "image")
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(io.CorruptFileError):
            io.load_embedding_store(path)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = encoder.EncoderConfig(tokens=2, embed_dim=8, model_dim=8, heads=2, head_hidden=8)
        params = encoder.init_params(cfg, seed=3)
        path = tmp_path / "ckpt.bin"
        io.save_checkpoint(path, params, stub_seed=42)
        loaded, stub_seed = io.load_checkpoint(path)
        assert stub_seed == 42
        assert loaded.config == cfg
        for name, arr in params.named_arrays().items():
            assert np.array_equal(arr, loaded.named_arrays()[name]), name

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"\x10\x00\x00\x00" + b'{"format": "x"}~')
        with pytest.raises(io.FormatError):
            io.load_checkpoint(path)


class TestDocuments:
    def test_sh_document_round_trip(self, tmp_path, rng):
        coeffs = rng.normal(size=(3, 16))
        path = tmp_path / "sh.json"
        io.save_sh_document(path, coeffs)
        assert np.allclose(io.load_sh_document(path), coeffs, atol=1e-15)

    def test_lights_round_trip(self, tmp_path):
        from lightspace.lights import LightSource

        lights_list = [
            LightSource(
                direction=np.array([0.0, 0.0, 1.0]), pixel=(3, 5), peak_radiance=9.5, region_area=0.02
            )
        ]
        path = tmp_path / "lights.json"
        io.save_lights(path, lights_list, threshold=2.0)
        loaded, tau = io.load_lights(path)
        assert tau == 2.0
        assert loaded[0].pixel == (3, 5)
        assert np.allclose(loaded[0].direction, [0, 0, 1])


class TestPipelineConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = io.PipelineConfig()
        path = tmp_path / "config.json"
        cfg.save(path)
        loaded = io.PipelineConfig.load(path)
        assert loaded.to_dict() == cfg.to_dict()

    def test_unknown_section_rejected(self):
        with pytest.raises(io.ConfigError):
            io.PipelineConfig.from_dict({"cropz": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(io.ConfigError):
            io.PipelineConfig.from_dict({"crop": {"fov": 90.0, "zoom": 2}})

    def test_out_of_range_value_rejected(self):
        with pytest.raises(io.ConfigError):
            io.PipelineConfig.from_dict({"tonemap": {"i_max": 0.5}})

    def test_partial_overrides(self):
        cfg = io.PipelineConfig.from_dict({"crop": {"size": 64}})
        assert cfg.crop.size == 64
        assert cfg.crop.fov == 90.0
