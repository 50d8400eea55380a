"""Dominant light detection in HDR panoramas.

Stop-wise threshold search over luminance followed by connected-component
labeling that treats the left/right image borders as adjacent, so a source
straddling the longitude seam is a single region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import envmap
from .tonemap import luminance


class NoLightError(ValueError):
    """Raised when the panorama carries no positive luminance."""


@dataclass(frozen=True)
class LightDetectConfig:
    tau0: float = 4.0
    min_region_pixels: int = 1
    connectivity: int = 8

    def __post_init__(self):
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if self.min_region_pixels < 1:
            raise ValueError("min_region_pixels must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass(frozen=True)
class LightSource:
    direction: np.ndarray      # unit vector at the peak pixel
    pixel: tuple[int, int]     # (u, v)
    peak_radiance: float       # luminance at the peak
    region_area: float         # steradians


def find_threshold(data: np.ndarray, config: LightDetectConfig = LightDetectConfig()) -> float:
    """First tau in tau0, tau0/sqrt(2), tau0/2, ... with enough pixels above it.

    The closed form tau0 * 2^(-i/2) keeps even stops exact (4 -> 2.8284... -> 2.0).
    """
    data = envmap.validate_map(data)
    lum = luminance(data)
    peak = float(lum.max())
    if peak <= 0.0:
        raise NoLightError("panorama has no positive luminance")
    if np.count_nonzero(lum > 0) < config.min_region_pixels:
        raise NoLightError(
            f"fewer than {config.min_region_pixels} pixels have positive luminance"
        )
    i = 0
    while True:
        tau = config.tau0 * 2.0 ** (-0.5 * i)
        if np.count_nonzero(lum > tau) >= config.min_region_pixels:
            return tau
        i += 1


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _label_with_wrap(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Label connected components, merging labels across the u=0 / u=W-1 seam."""
    structure = np.ones((3, 3), dtype=bool) if connectivity == 8 else None
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return labels, 0
    uf = _UnionFind(n + 1)
    h = mask.shape[0]
    left, right = labels[:, 0], labels[:, -1]
    for v in range(h):
        if right[v] == 0:
            continue
        neighbors = [v] if connectivity == 4 else [v - 1, v, v + 1]
        for vn in neighbors:
            if 0 <= vn < h and left[vn] != 0:
                uf.union(int(right[v]), int(left[vn]))
    remap = np.zeros(n + 1, dtype=np.int64)
    next_id = 0
    for lbl in range(1, n + 1):
        root = uf.find(lbl)
        if remap[root] == 0:
            next_id += 1
            remap[root] = next_id
        remap[lbl] = remap[root]
    return remap[labels], next_id


def detect_lights(data: np.ndarray, config: LightDetectConfig = LightDetectConfig()) -> list[LightSource]:
    """Brightest pixel of every wrap-aware region above the searched threshold,
    sorted by peak luminance, descending."""
    data = envmap.validate_map(data)
    h, w = data.shape[:2]
    lum = luminance(data)
    tau = find_threshold(data, config)
    labels, n = _label_with_wrap(lum > tau, config.connectivity)
    weights = envmap.solid_angle_weights(w, h)
    out = []
    for lbl in range(1, n + 1):
        region = labels == lbl
        if np.count_nonzero(region) < config.min_region_pixels:
            continue
        flat = np.where(region.ravel(), lum.ravel(), -np.inf)
        idx = int(np.argmax(flat))
        v, u = divmod(idx, w)
        out.append(
            LightSource(
                direction=envmap.pixel_directions(u, v, w, h),
                pixel=(u, v),
                peak_radiance=float(lum[v, u]),
                region_area=float(weights[region].sum()),
            )
        )
    out.sort(key=lambda s: -s.peak_radiance)
    return out
