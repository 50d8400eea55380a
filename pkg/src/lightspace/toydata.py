"""Synthetic planted-light samples for desk-scale training and evaluation.

Each sample's lighting is fully determined by a planted unit direction and
an RGB color; all four modality payloads are rendered from that pair, so a
working encoder can align them and a broken one cannot.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import envmap, learn, sh, tonemap

COMPASS = (
    "north", "north-northeast", "northeast", "east-northeast",
    "east", "east-southeast", "southeast", "south-southeast",
    "south", "south-southwest", "southwest", "west-southwest",
    "west", "west-northwest", "northwest", "north-northwest",
)
ELEVATION_WORDS = (
    "far below the horizon", "below the horizon", "near the horizon",
    "high above the horizon", "almost overhead",
)
COLOR_WORDS = ("red", "orange", "amber", "green", "teal", "blue", "violet", "magenta")


@dataclass
class ToySample:
    sample_id: str
    direction: np.ndarray      # planted unit vector
    color: np.ndarray          # planted linear RGB
    panorama: np.ndarray       # (H, 2H, 3) linear radiance
    payloads: dict             # modality -> payload
    sh_gt: np.ndarray          # (3, 16)


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _random_color(rng: np.random.Generator) -> np.ndarray:
    hue = rng.uniform()
    sat = rng.uniform(0.3, 0.9)
    val = rng.uniform(0.5, 1.0)
    return np.array(colorsys.hsv_to_rgb(hue, sat, val))


def render_panorama(direction: np.ndarray, color: np.ndarray, height: int = 32,
                    ambient: float = 0.25, peak: float = 20.0, kappa: float = 40.0) -> np.ndarray:
    """Ambient plus one tight HDR lobe around the planted direction."""
    dirs = envmap.direction_map(2 * height, height)
    lobe = np.exp(kappa * (dirs @ direction - 1.0))
    return color * (ambient + peak * lobe)[..., None]


def _sphere_normals(size: int) -> np.ndarray:
    t = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    xx, yy = np.meshgrid(t, t, indexing="xy")
    yy = -yy  # image rows grow downward, normals point up
    r2 = np.clip(xx * xx + yy * yy, 0.0, 1.0)
    zz = np.sqrt(1.0 - r2)
    n = np.stack([xx, yy, zz], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _wave_normals(size: int) -> np.ndarray:
    t = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(t, t, indexing="xy")
    n = np.stack(
        [np.sin(2.6 * np.pi * uu), np.cos(1.7 * np.pi * vv), np.ones_like(uu) * 0.8],
        axis=-1,
    )
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    t = np.linspace(0, 2 * np.pi, size)
    uu, vv = np.meshgrid(t, t, indexing="xy")
    tex = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.integers(1, 4, size=2)
        tex += rng.uniform(0.5, 1.0) * np.sin(fx * uu + rng.uniform(0, 2 * np.pi)) * np.sin(
            fy * vv + rng.uniform(0, 2 * np.pi)
        )
    tex = (tex - tex.min()) / max(np.ptp(tex), 1e-9)
    return 0.6 + 0.4 * tex


def render_image(direction, color, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Half-Lambert shaded sphere with a per-sample nuisance texture, in [0, 1]."""
    shading = (_sphere_normals(size) @ direction + 1.0) / 2.0
    img = _texture(rng, size)[..., None] * color * shading[..., None]
    return np.clip(img, 0.0, 1.0) ** (1.0 / 2.2)


def render_irradiance(direction, color, size: int = 32) -> np.ndarray:
    """Smooth cosine-style irradiance over a fixed wavy normal field, in [0, 1]."""
    shading = 0.2 + 0.8 * (_wave_normals(size) @ direction + 1.0) / 2.0
    return np.clip(color * shading[..., None], 0.0, 1.0)


def describe_lighting(direction, color) -> str:
    az = math.atan2(direction[0], direction[2])
    compass = COMPASS[int((az + math.pi) / (2 * math.pi) * 16) % 16]
    elev = ELEVATION_WORDS[
        min(4, int((math.asin(np.clip(direction[1], -1, 1)) + math.pi / 2) / math.pi * 5))
    ]
    hue = colorsys.rgb_to_hsv(*np.clip(color, 0, 1))[0]
    word = COLOR_WORDS[int(hue * 8) % 8]
    strength = "bright" if color.max() > 0.75 else "dim"
    return f"{strength} {word} light from the {compass}, {elev}"


def make_toy_samples(count: int, seed: int, pano_height: int = 32, image_size: int = 32) -> list[ToySample]:
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        direction = _random_direction(rng)
        color = _random_color(rng)
        panorama = render_panorama(direction, color, height=pano_height)
        payloads = {
            "envmap": enc.envmap_payload(panorama),
            "image": render_image(direction, color, rng, size=image_size),
            "irradiance": render_irradiance(direction, color, size=image_size),
            "text": describe_lighting(direction, color),
        }
        samples.append(
            ToySample(
                sample_id=f"toy-{i:04d}",
                direction=direction,
                color=color,
                panorama=panorama,
                payloads=payloads,
                sh_gt=sh.fit_sh(panorama),
            )
        )
    return samples


def to_training_samples(toy_samples, stub_seed: int, dropout_variant: bool = True) -> list[learn.Sample]:
    """Freeze stub features once per sample (the backbones never train)."""
    out = []
    for s in toy_samples:
        features = {
            m: enc.stub_backbone(s.payloads[m], enc.modality_seed(stub_seed, m), modality=m).tokens
            for m in enc.MODALITIES
        }
        dropped = None
        if dropout_variant:
            pano_payload = s.payloads["envmap"].copy()
            pano_payload[..., 3:6] = 0.0  # zeroed log block
            dropped = enc.stub_backbone(
                pano_payload, enc.modality_seed(stub_seed, "envmap"), modality="envmap"
            ).tokens
        out.append(
            learn.Sample(
                features=features,
                sh_gt=s.sh_gt,
                sample_id=s.sample_id,
                group=s.sample_id,
                envmap_features_dropped=dropped,
            )
        )
    return out


def embed_samples(params: enc.EncoderParams, toy_samples, stub_seed: int) -> dict:
    """Deterministic (no dropout) embeddings for every modality, stacked (N, T, D)."""
    training = to_training_samples(toy_samples, stub_seed, dropout_variant=False)
    out = {}
    for m in enc.MODALITIES:
        feats = np.stack([s.features[m] for s in training])
        out[m] = enc.fusion_tokens(params.fusion[m], feats, params.config)
    return out
