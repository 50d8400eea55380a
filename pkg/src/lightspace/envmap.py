"""Equirectangular panorama geometry.

An environment map is an H x W x 3 array of linear radiance in
latitude-longitude projection (W = 2H). Axis convention: y is up, the
image center (u-fraction 0.5) faces +z, and pixel centers sample the
sphere at ((u+0.5)/W, (v+0.5)/H).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CROP_YAWS = tuple(range(0, 360, 40))


def validate_map(data: np.ndarray) -> np.ndarray:
    """Check the lat-long invariants (2:1 aspect, finite non-negative radiance)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"environment map must be HxWx3, got shape {data.shape}")
    h, w = data.shape[:2]
    if h < 1 or w != 2 * h:
        raise ValueError(f"environment map must have width = 2 x height, got {w}x{h}")
    if not np.all(np.isfinite(data)):
        raise ValueError("environment map contains non-finite radiance")
    if np.any(data < 0):
        raise ValueError("environment map contains negative radiance")
    return data


def _normalize_yaw(yaw: float) -> float:
    return (float(yaw) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class CropSpec:
    """Perspective crop parameters: yaw about the vertical, horizontal fov, output size."""

    yaw: float = 0.0
    fov: float = 90.0
    size: int = 512

    def __post_init__(self):
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"fov must lie in (0, 180), got {self.fov}")
        if self.size < 1:
            raise ValueError(f"size must be positive, got {self.size}")


def pixel_directions(us: np.ndarray, vs: np.ndarray, width: int, height: int) -> np.ndarray:
    """Unit directions at pixel centers (us, vs); broadcasts, returns (..., 3)."""
    lon = ((np.asarray(us, dtype=np.float64) + 0.5) / width - 0.5) * (2.0 * np.pi)
    theta = (np.asarray(vs, dtype=np.float64) + 0.5) / height * np.pi
    sin_t = np.sin(theta)
    out = np.stack(
        np.broadcast_arrays(sin_t * np.sin(lon), np.cos(theta), sin_t * np.cos(lon)),
        axis=-1,
    )
    return out


def direction_map(width: int, height: int) -> np.ndarray:
    """Per-pixel unit direction map, shape (height, width, 3)."""
    if width < 2 or height < 1:
        raise ValueError(f"invalid dimensions {width}x{height}")
    vs, us = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return pixel_directions(us, vs, width, height)


def solid_angle_weights(width: int, height: int) -> np.ndarray:
    """Per-pixel solid angle in steradians, shape (height, width); sums to ~4pi."""
    if width < 1 or height < 1:
        raise ValueError(f"invalid dimensions {width}x{height}")
    theta = (np.arange(height, dtype=np.float64) + 0.5) / height * np.pi
    row = np.sin(theta) * (2.0 * np.pi / width) * (np.pi / height)
    return np.repeat(row[:, None], width, axis=1)


def _bilinear_sample(data: np.ndarray, uf: np.ndarray, vf: np.ndarray) -> np.ndarray:
    """Sample HxWxC at float pixel coords, wrapping longitude and clamping at poles."""
    h, w = data.shape[:2]
    u0 = np.floor(uf).astype(np.int64)
    v0 = np.floor(vf).astype(np.int64)
    fu = (uf - u0)[..., None]
    fv = (vf - v0)[..., None]
    u1 = (u0 + 1) % w
    u0 = u0 % w
    v0c = np.clip(v0, 0, h - 1)
    v1c = np.clip(v0 + 1, 0, h - 1)
    top = data[v0c, u0] * (1.0 - fu) + data[v0c, u1] * fu
    bot = data[v1c, u0] * (1.0 - fu) + data[v1c, u1] * fu
    return top * (1.0 - fv) + bot * fv


def extract_crop(data: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Pinhole perspective crop, level horizon, camera yawed about the vertical.

    Output stays linear radiance; tone mapping is a separate step.
    """
    data = validate_map(data)
    h, w = data.shape[:2]
    s = spec.size
    half = math.tan(math.radians(spec.fov) / 2.0)
    xs = ((np.arange(s, dtype=np.float64) + 0.5) / s * 2.0 - 1.0) * half
    ys = -((np.arange(s, dtype=np.float64) + 0.5) / s * 2.0 - 1.0) * half
    xc, yc = np.meshgrid(xs, ys, indexing="xy")
    zc = np.ones_like(xc)
    norm = np.sqrt(xc * xc + yc * yc + zc * zc)
    x, y, z = xc / norm, yc / norm, zc / norm
    psi = math.radians(spec.yaw)
    xr = x * math.cos(psi) + z * math.sin(psi)
    zr = -x * math.sin(psi) + z * math.cos(psi)
    lon = np.arctan2(xr, zr)
    theta = np.arccos(np.clip(y, -1.0, 1.0))
    uf = (lon / (2.0 * np.pi) + 0.5) * w - 0.5
    vf = theta / np.pi * h - 0.5
    return _bilinear_sample(data, uf, vf)


def crops_from_panorama(data: np.ndarray, fov: float = 90.0, size: int = 512) -> list[tuple[CropSpec, np.ndarray]]:
    """Nine crops at yaw 0, 40, ..., 320 degrees."""
    data = validate_map(data)
    out = []
    for yaw in DEFAULT_CROP_YAWS:
        spec = CropSpec(yaw=yaw, fov=fov, size=size)
        out.append((spec, extract_crop(data, spec)))
    return out


def rotate_yaw(data: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the panorama about the vertical: the content at longitude `angle`
    moves to the image center. Integer-column shifts are exact."""
    data = validate_map(data)
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    w = data.shape[1]
    shift = angle / 360.0 * w
    base = math.floor(shift)
    frac = shift - base
    if abs(frac) < 1e-12 or abs(frac - 1.0) < 1e-12:
        return np.roll(data, -int(round(shift)) % w, axis=1)
    left = np.roll(data, -base % w, axis=1)
    right = np.roll(data, -(base + 1) % w, axis=1)
    return left * (1.0 - frac) + right * frac
