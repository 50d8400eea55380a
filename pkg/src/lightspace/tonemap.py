"""HDR to encoder-input conversions.

Reinhard global auto-exposure with gamma, the logarithmic HDR encoding,
and whole-image dropout of the log channels used during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])  # Rec.709
LOG_DELTA = 1e-6

DEFAULT_KEY = 0.35
DEFAULT_GAMMA = 2.2
DEFAULT_I_MAX = 1000.0


@dataclass(frozen=True)
class LogImage:
    """Log-encoded HDR image in [0, 1]; `dropped` marks channels zeroed by dropout."""

    data: np.ndarray
    dropped: bool = False


def luminance(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def reinhard_tonemap(image: np.ndarray, key: float = DEFAULT_KEY, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Global Reinhard operator: log-average auto-exposure, x/(1+x) compression, gamma.

    Returns an LDR image with every channel in [0, 1].
    """
    image = np.asarray(image, dtype=np.float64)
    if np.any(image < 0) or not np.all(np.isfinite(image)):
        raise ValueError("radiance must be finite and non-negative")
    if key <= 0 or gamma <= 0:
        raise ValueError("key and gamma must be positive")
    lum = luminance(image)
    log_avg = math.exp(float(np.mean(np.log(LOG_DELTA + lum))))
    scaled = (key / log_avg) * lum
    display = scaled / (1.0 + scaled)
    ratio = display / np.maximum(lum, LOG_DELTA)
    return np.clip(image * ratio[..., None], 0.0, 1.0) ** (1.0 / gamma)


def log_encode(image: np.ndarray, i_max: float = DEFAULT_I_MAX) -> LogImage:
    """Encode linear radiance as ln(v+1)/ln(i_max); values above i_max-1 clip to 1."""
    image = np.asarray(image, dtype=np.float64)
    if np.any(image < 0) or not np.all(np.isfinite(image)):
        raise ValueError("radiance must be finite and non-negative")
    if i_max <= 1.0:
        raise ValueError(f"i_max must exceed 1, got {i_max}")
    data = np.log(np.minimum(image, i_max - 1.0) + 1.0) / math.log(i_max)
    return LogImage(data=data, dropped=False)


def drop_log_channels(log: LogImage, probability: float, rng: np.random.Generator) -> LogImage:
    """With the given probability, zero all log channels. Consumes exactly one draw."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    if rng.random() < probability:
        return LogImage(data=np.zeros_like(log.data), dropped=True)
    return log
