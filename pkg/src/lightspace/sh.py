"""Real spherical harmonics to degree 3 over lat-long environment maps.

Basis, solid-angle-weighted projection, rendering, yaw rotation of
coefficient vectors, and dominant-direction extraction. The basis is the
graphics-standard real table (no Condon-Shortley phase), orthonormal
under the solid-angle measure, indexed i = l(l+1)+m. The geometry is the
envmap convention: y up, +z at the panorama center.
"""

from __future__ import annotations

import math

import numpy as np

from . import envmap
from .tonemap import LUMA_WEIGHTS

N_COEFFS = 16
DEGREE = 3

_DEGREE_SLICES = [slice(0, 1), slice(1, 4), slice(4, 9), slice(9, 16)]

_C0 = 0.5 * math.sqrt(1.0 / math.pi)
_C1 = math.sqrt(3.0 / (4.0 * math.pi))
_C2A = math.sqrt(15.0 / (4.0 * math.pi))
_C2B = math.sqrt(5.0 / (16.0 * math.pi))
_C2C = math.sqrt(15.0 / (16.0 * math.pi))
_C3A = math.sqrt(35.0 / (32.0 * math.pi))
_C3B = math.sqrt(105.0 / (4.0 * math.pi))
_C3C = math.sqrt(21.0 / (32.0 * math.pi))
_C3D = math.sqrt(7.0 / (16.0 * math.pi))
_C3E = math.sqrt(105.0 / (16.0 * math.pi))


class IsotropicLightError(ValueError):
    """Degree-1 coefficients carry no direction."""


def sh_basis_array(directions: np.ndarray) -> np.ndarray:
    """Evaluate all 16 basis functions at unit directions (..., 3) -> (..., 16)."""
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (N_COEFFS,), dtype=np.float64)
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2A * x * y
    out[..., 5] = _C2A * y * z
    out[..., 6] = _C2B * (3.0 * z * z - 1.0)
    out[..., 7] = _C2A * x * z
    out[..., 8] = _C2C * (x * x - y * y)
    out[..., 9] = _C3A * y * (3.0 * x * x - y * y)
    out[..., 10] = _C3B * x * y * z
    out[..., 11] = _C3C * y * (5.0 * z * z - 1.0)
    out[..., 12] = _C3D * z * (5.0 * z * z - 3.0)
    out[..., 13] = _C3C * x * (5.0 * z * z - 1.0)
    out[..., 14] = _C3E * z * (x * x - y * y)
    out[..., 15] = _C3A * x * (x * x - 3.0 * y * y)
    return out


def sh_basis(direction) -> np.ndarray:
    """Basis values at one unit direction; rejects non-unit input."""
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError(f"direction must have shape (3,), got {d.shape}")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be unit length")
    return sh_basis_array(d)


def validate_coeffs(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (3, N_COEFFS):
        raise ValueError(f"coefficients must have shape (3, {N_COEFFS}), got {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("coefficients must be finite")
    return coeffs


def fit_sh(data: np.ndarray, block_rows: int = 64) -> np.ndarray:
    """Project an environment map onto the basis (Riemann sum with solid-angle
    weights), returning coefficients of shape (3, 16). Row-blocked so large
    maps never materialize the full basis."""
    data = envmap.validate_map(data)
    h, w = data.shape[:2]
    weights = envmap.solid_angle_weights(w, h)
    coeffs = np.zeros((3, N_COEFFS))
    us = np.arange(w)
    for v0 in range(0, h, block_rows):
        v1 = min(v0 + block_rows, h)
        vs, uu = np.meshgrid(np.arange(v0, v1), us, indexing="ij")
        basis = sh_basis_array(envmap.pixel_directions(uu, vs, w, h))
        wb = weights[v0:v1]
        coeffs += np.einsum("hwc,hwi,hw->ci", data[v0:v1], basis, wb)
    return coeffs


def render_sh(coeffs: np.ndarray, width: int, height: int, block_rows: int = 64) -> np.ndarray:
    """Evaluate the SH expansion on a lat-long grid. Negative values are kept
    (clamping happens only on export)."""
    coeffs = validate_coeffs(coeffs)
    if width < 2 or height < 1:
        raise ValueError(f"invalid dimensions {width}x{height}")
    out = np.empty((height, width, 3))
    us = np.arange(width)
    for v0 in range(0, height, block_rows):
        v1 = min(v0 + block_rows, height)
        vs, uu = np.meshgrid(np.arange(v0, v1), us, indexing="ij")
        basis = sh_basis_array(envmap.pixel_directions(uu, vs, width, height))
        out[v0:v1] = basis @ coeffs.T
    return out


def dominant_direction(coeffs: np.ndarray) -> np.ndarray:
    """Direction encoded by the degree-1 coefficients, luminance-combined."""
    coeffs = validate_coeffs(coeffs)
    g = LUMA_WEIGHTS @ coeffs
    vec = np.array([g[3], g[1], g[2]])  # (Y1,1, Y1,-1, Y1,0) -> (x, y, z)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise IsotropicLightError("degree-1 coefficients are zero")
    return vec / norm


def _fibonacci_sphere(n: int = 64) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    lon = 2.0 * np.pi * k / phi
    zc = 1.0 - (2.0 * k + 1.0) / n
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - zc * zc))
    return np.stack([sin_t * np.cos(lon), sin_t * np.sin(lon), zc], axis=-1)


_SAMPLE_DIRS = _fibonacci_sphere()
_SAMPLE_BASIS = sh_basis_array(_SAMPLE_DIRS)
_BLOCK_PINV = [np.linalg.pinv(_SAMPLE_BASIS[:, sl]) for sl in _DEGREE_SLICES]


def yaw_rotation_matrix(angle: float) -> np.ndarray:
    """16x16 block-diagonal coefficient rotation matching envmap.rotate_yaw.

    Each degree block is recovered exactly from sampled basis values: yaw
    rotation never mixes degrees, so solving the (overdetermined, consistent)
    linear system per block gives the block to machine precision.
    """
    a = math.radians(angle)
    rot = np.array(
        [
            [math.cos(a), 0.0, math.sin(a)],
            [0.0, 1.0, 0.0],
            [-math.sin(a), 0.0, math.cos(a)],
        ]
    )
    rotated_basis = sh_basis_array(_SAMPLE_DIRS @ rot.T)
    out = np.zeros((N_COEFFS, N_COEFFS))
    for sl, pinv in zip(_DEGREE_SLICES, _BLOCK_PINV):
        out[sl, sl] = pinv @ rotated_basis[:, sl]
    return out


def rotate_sh_yaw(coeffs: np.ndarray, angle: float) -> np.ndarray:
    """Rotate coefficients about the vertical so that rendering the result
    equals rotating the rendered map by the same angle."""
    coeffs = validate_coeffs(coeffs)
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    return coeffs @ yaw_rotation_matrix(angle).T
