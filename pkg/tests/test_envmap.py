import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightspace import envmap
from tests.conftest import smooth_map


class TestDirectionMap:
    def test_center_faces_plus_z(self):
        # W=4, H=2: u-fraction 0.5 and v-fraction 0.5 land between pixels, so
        # evaluate the convention directly at fractional pixel coords.
        d = envmap.pixel_directions(4 / 2 - 0.5, 2 / 2 - 0.5, 4, 2)
        assert np.allclose(d, [0.0, 0.0, 1.0], atol=1e-12)

    def test_top_center_approaches_pole(self):
        h = 4096
        d = envmap.direction_map(2 * h, h)[0, h]
        assert d[1] > 0.999999
        assert np.allclose(d, [0.0, 1.0, 0.0], atol=2e-3)

    def test_unit_norm_everywhere(self):
        d = envmap.direction_map(32, 16)
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-6)

    def test_round_trip_recovers_pixel_centers(self):
        w, h = 64, 32
        d = envmap.direction_map(w, h)
        lon = np.arctan2(d[..., 0], d[..., 2])
        theta = np.arccos(np.clip(d[..., 1], -1, 1))
        us = (lon / (2 * np.pi) + 0.5) * w - 0.5
        vs = theta / np.pi * h - 0.5
        vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        assert np.allclose(us, uu, atol=1e-6)
        assert np.allclose(vs, vv, atol=1e-6)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            envmap.direction_map(0, 4)
        with pytest.raises(ValueError):
            envmap.direction_map(4, -1)


class TestSolidAngleWeights:
    def test_total_is_sphere_area(self):
        w = envmap.solid_angle_weights(128, 64)
        total = w.sum()
        assert 4 * np.pi * 0.999 <= total <= 4 * np.pi * 1.001

    def test_equator_heavier_than_poles(self):
        w = envmap.solid_angle_weights(128, 64)
        assert w[32, 0] > w[0, 0]
        assert w[32, 0] > w[-1, 0]

    def test_all_positive(self):
        assert (envmap.solid_angle_weights(16, 8) > 0).all()


class TestExtractCrop:
    def test_constant_map_gives_constant_crop(self):
        data = np.full((8, 16, 3), 0.3)
        crop = envmap.extract_crop(data, envmap.CropSpec(yaw=77.0, fov=60.0, size=12))
        assert crop.shape == (12, 12, 3)
        assert np.allclose(crop, 0.3, atol=1e-12)

    def test_output_resolution_default(self):
        data = np.full((4, 8, 3), 1.0)
        crop = envmap.extract_crop(data, envmap.CropSpec())
        assert crop.shape == (512, 512, 3)

    def test_rotation_equivariance_on_smooth_maps(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            data = smooth_map(rng)
            spec0 = envmap.CropSpec(yaw=0.0, fov=90.0, size=48)
            spec40 = envmap.CropSpec(yaw=40.0, fov=90.0, size=48)
            a = envmap.extract_crop(envmap.rotate_yaw(data, 40.0), spec0)
            b = envmap.extract_crop(data, spec40)
            assert np.mean(np.abs(a - b)) < 1e-3


class TestCropsFromPanorama:
    def test_nine_crops_at_expected_yaws(self):
        data = np.full((8, 16, 3), 0.5)
        crops = envmap.crops_from_panorama(data, size=8)
        assert len(crops) == 9
        yaws = sorted((spec.yaw % 360.0) for spec, _ in crops)
        assert yaws == [0.0, 40.0, 80.0, 120.0, 160.0, 200.0, 240.0, 280.0, 320.0]

    def test_constant_map_gives_identical_crops(self):
        data = np.full((8, 16, 3), 0.5)
        crops = envmap.crops_from_panorama(data, size=8)
        for _, crop in crops:
            assert np.allclose(crop, crops[0][1])

    def test_sorted_ascending_in_40_degree_steps(self):
        data = np.full((8, 16, 3), 0.5)
        yaws = sorted(spec.yaw % 360.0 for spec, _ in envmap.crops_from_panorama(data, size=8))
        assert np.allclose(np.diff(yaws), 40.0)


class TestRotateYaw:
    def test_full_revolution_is_identity(self, rng):
        data = rng.uniform(0, 2, size=(8, 16, 3))
        assert np.array_equal(envmap.rotate_yaw(data, 360.0), data)

    def test_half_turn_twice_is_identity(self, rng):
        data = rng.uniform(0, 2, size=(8, 16, 3))
        back = envmap.rotate_yaw(envmap.rotate_yaw(data, 180.0), 180.0)
        assert np.allclose(back, data, atol=1e-6)

    def test_minus_180_equals_plus_180(self, rng):
        data = rng.uniform(0, 2, size=(8, 16, 3))
        assert np.allclose(envmap.rotate_yaw(data, -180.0), envmap.rotate_yaw(data, 180.0))

    @given(st.integers(min_value=-40, max_value=40))
    @settings(max_examples=25, deadline=None)
    def test_integer_shift_preserves_columns_exactly(self, cols):
        rng = np.random.default_rng(99)
        data = rng.uniform(0, 5, size=(8, 16, 3))
        angle = cols * (360.0 / 16)
        rotated = envmap.rotate_yaw(data, angle)
        assert np.array_equal(rotated, np.roll(data, -cols, axis=1))

    def test_rejects_non_finite_angle(self):
        data = np.full((4, 8, 3), 1.0)
        with pytest.raises(ValueError):
            envmap.rotate_yaw(data, float("nan"))


class TestValidation:
    def test_rejects_wrong_aspect(self):
        with pytest.raises(ValueError):
            envmap.validate_map(np.zeros((8, 12, 3)))

    def test_rejects_negative_radiance(self):
        data = np.zeros((4, 8, 3))
        data[0, 0, 0] = -1.0
        with pytest.raises(ValueError):
            envmap.validate_map(data)

    def test_crop_spec_normalizes_yaw(self):
        assert envmap.CropSpec(yaw=320.0).yaw == -40.0
        assert envmap.CropSpec(yaw=-180.0).yaw == -180.0
        with pytest.raises(ValueError):
            envmap.CropSpec(fov=180.0)
        with pytest.raises(ValueError):
            envmap.CropSpec(size=0)
