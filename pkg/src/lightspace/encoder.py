"""Desk-scale multi-modal lighting encoder.

Frozen seed-derived stub backbones stand in for pretrained feature
extractors; a trainable query-token fusion module summarizes their token
sequences into a joint T x D embedding; a small perceptron head predicts
degree-3 SH coefficients from the embedding.

Model code is written against the autodiff ops, so the same forward
functions serve inference (arrays in, arrays out) and training (Tensors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np

from . import autodiff as ad
from . import envmap as envmap_mod
from . import tonemap

MODALITIES = ("envmap", "image", "irradiance", "text")

D_BACKBONE = 64
IMAGE_GRID = 16          # 16 x 16 patches -> 256 tokens for image-type payloads
TEXT_TOKENS = 32


@dataclass(frozen=True)
class EncoderConfig:
    tokens: int = 8          # T
    embed_dim: int = 512     # D
    model_dim: int = 64      # attention width
    heads: int = 4
    head_hidden: int = 256
    residual_queries: bool = True
    shared_head: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if min(self.tokens, self.embed_dim, self.model_dim, self.heads, self.head_hidden) < 1:
            raise ValueError("all encoder dimensions must be positive")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")


@dataclass
class FeatureSequence:
    tokens: np.ndarray       # (T_backbone, D_backbone)
    modality: str
    empty: bool = False


@dataclass
class Embedding:
    tokens: np.ndarray       # (T, D)
    modality: str
    sample_id: object = None


@dataclass
class FusionParams:
    queries: np.ndarray      # (T, model_dim)
    wk: np.ndarray           # (D_backbone, model_dim)
    wv: np.ndarray
    wo: np.ndarray           # (model_dim, model_dim)
    ln_gain: np.ndarray      # (model_dim,)
    ln_bias: np.ndarray
    wout: np.ndarray         # (model_dim, D)


@dataclass
class ShHeadParams:
    w1: np.ndarray           # (T*D, hidden)
    b1: np.ndarray
    w2: np.ndarray           # (hidden, 48)
    b2: np.ndarray


@dataclass
class EncoderParams:
    config: EncoderConfig
    fusion: dict             # modality -> FusionParams
    head: dict               # modality -> ShHeadParams ("shared" key when shared)

    def head_for(self, modality: str) -> ShHeadParams:
        return self.head["shared"] if "shared" in self.head else self.head[modality]

    def named_arrays(self) -> dict:
        out = {}
        for m, p in self.fusion.items():
            for f in ("queries", "wk", "wv", "wo", "ln_gain", "ln_bias", "wout"):
                out[f"fusion.{m}.{f}"] = getattr(p, f)
        for m, p in self.head.items():
            for f in ("w1", "b1", "w2", "b2"):
                out[f"head.{m}.{f}"] = getattr(p, f)
        return out

    @staticmethod
    def from_named_arrays(config: EncoderConfig, arrays: dict) -> "EncoderParams":
        fusion, head = {}, {}
        mods_f = sorted({k.split(".")[1] for k in arrays if k.startswith("fusion.")})
        mods_h = sorted({k.split(".")[1] for k in arrays if k.startswith("head.")})
        for m in mods_f:
            fusion[m] = FusionParams(
                **{f: arrays[f"fusion.{m}.{f}"] for f in ("queries", "wk", "wv", "wo", "ln_gain", "ln_bias", "wout")}
            )
        for m in mods_h:
            head[m] = ShHeadParams(**{f: arrays[f"head.{m}.{f}"] for f in ("w1", "b1", "w2", "b2")})
        return EncoderParams(config=config, fusion=fusion, head=head)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(
    config: EncoderConfig,
    seed: int,
    modalities=MODALITIES,
    dtype=np.float32,
) -> EncoderParams:
    """Seed-deterministic init: independent streams per modality plus the head."""
    children = np.random.SeedSequence(seed).spawn(len(modalities) + 1)
    fusion = {}
    for m, child in zip(modalities, children[:-1]):
        rng = np.random.default_rng(child)
        fusion[m] = FusionParams(
            queries=_uniform(rng, (config.tokens, config.model_dim), config.model_dim, dtype),
            wk=_uniform(rng, (D_BACKBONE, config.model_dim), D_BACKBONE, dtype),
            wv=_uniform(rng, (D_BACKBONE, config.model_dim), D_BACKBONE, dtype),
            wo=_uniform(rng, (config.model_dim, config.model_dim), config.model_dim, dtype),
            ln_gain=np.ones(config.model_dim, dtype=dtype),
            ln_bias=np.zeros(config.model_dim, dtype=dtype),
            wout=_uniform(rng, (config.model_dim, config.embed_dim), config.model_dim, dtype),
        )
    head_rng = np.random.default_rng(children[-1])
    flat_dim = config.tokens * config.embed_dim

    def make_head():
        return ShHeadParams(
            w1=_uniform(head_rng, (flat_dim, config.head_hidden), flat_dim, dtype),
            b1=np.zeros(config.head_hidden, dtype=dtype),
            w2=_uniform(head_rng, (config.head_hidden, 48), config.head_hidden, dtype),
            b2=np.zeros(48, dtype=dtype),
        )

    head = {"shared": make_head()} if config.shared_head else {m: make_head() for m in modalities}
    return EncoderParams(config=config, fusion=fusion, head=head)


def _image_projection(seed: int, patch_len: int, dtype) -> np.ndarray:
    rng = np.random.default_rng([seed % 2**63, patch_len, D_BACKBONE])
    return (rng.standard_normal((patch_len, D_BACKBONE)) / math.sqrt(patch_len)).astype(dtype)


def _image_tokens(payload: np.ndarray, seed: int, dtype) -> np.ndarray:
    h, w, c = payload.shape
    if h <= 0 or w <= 0:
        raise ValueError("image payload must have positive dimensions")
    if h % IMAGE_GRID or w % IMAGE_GRID:
        raise ValueError(f"image payload dims must be multiples of {IMAGE_GRID}, got {h}x{w}")
    hp, wp = h // IMAGE_GRID, w // IMAGE_GRID
    patches = (
        payload.reshape(IMAGE_GRID, hp, IMAGE_GRID, wp, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(IMAGE_GRID * IMAGE_GRID, hp * wp * c)
    )
    return patches.astype(dtype) @ _image_projection(seed, hp * wp * c, dtype)


def _text_tokens(text: str, seed: int, dtype) -> np.ndarray:
    key = (seed % 2**64).to_bytes(8, "little")
    tokens = np.zeros((TEXT_TOKENS, D_BACKBONE))
    counts = np.zeros(TEXT_TOKENS)
    grams = [text[i : i + 3] for i in range(max(0, len(text) - 2))]
    if not grams and text:
        grams = [text]
    for gram in grams:
        digest = blake2b(gram.encode("utf-8"), key=key, digest_size=D_BACKBONE).digest()
        slot = int.from_bytes(digest[:8], "little") % TEXT_TOKENS
        vec = (np.frombuffer(digest, dtype=np.uint8).astype(np.float64) - 127.5) / 73.9
        tokens[slot] += vec
        counts[slot] += 1
    tokens /= np.sqrt(np.maximum(counts, 1.0))[:, None]
    return tokens.astype(dtype)


def stub_backbone(payload, seed: int, modality: str = "image", dtype=np.float32) -> FeatureSequence:
    """Frozen deterministic feature extractor.

    Images are cut into a 16x16 patch grid and projected to 64 dims per
    patch (256 tokens); text hashes overlapping character trigrams into
    32 slots of 64 dims. Never trained.
    """
    if isinstance(payload, str):
        if not payload:
            return FeatureSequence(
                tokens=np.zeros((TEXT_TOKENS, D_BACKBONE), dtype=dtype), modality=modality, empty=True
            )
        return FeatureSequence(tokens=_text_tokens(payload, seed, dtype), modality=modality)
    payload = np.asarray(payload)
    if payload.ndim != 3:
        raise ValueError(f"image payload must be HxWxC, got shape {payload.shape}")
    return FeatureSequence(tokens=_image_tokens(payload, seed, dtype), modality=modality)


def fusion_tokens(params: FusionParams, feats, config: EncoderConfig):
    """Query-token attention over backbone features: (B, Tb, Db) or (Tb, Db)
    in, (B, T, D) or (T, D) out. Works on arrays or autodiff Tensors."""
    fv = ad.value_of(feats)
    single = fv.ndim == 2
    if single:
        feats = ad.reshape(feats, (1,) + fv.shape)
    b, tb, _ = ad.value_of(feats).shape
    t, dm, h = config.tokens, config.model_dim, config.heads
    dh = dm // h
    k = ad.swapaxes(ad.reshape(ad.matmul(feats, params.wk), (b, tb, h, dh)), 1, 2)
    v = ad.swapaxes(ad.reshape(ad.matmul(feats, params.wv), (b, tb, h, dh)), 1, 2)
    q = ad.swapaxes(ad.reshape(params.queries, (t, h, dh)), 0, 1)
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, 2, 3)), 1.0 / math.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)              # (b, h, t, tb)
    ctx = ad.reshape(ad.swapaxes(ad.matmul(attn, v), 1, 2), (b, t, dm))
    out = ad.matmul(ctx, params.wo)
    if config.residual_queries:
        out = ad.add(out, params.queries)
    mu = ad.mean(out, axis=-1, keepdims=True)
    centered = ad.sub(out, mu)
    var = ad.mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    normed = ad.mul(centered, ad.power(ad.add(var, config.ln_eps), -0.5))
    y = ad.add(ad.mul(normed, params.ln_gain), params.ln_bias)
    emb = ad.matmul(y, params.wout)
    if single:
        emb = ad.reshape(emb, (t, config.embed_dim))
    return emb


def fusion_forward(params: FusionParams, features: FeatureSequence, config: EncoderConfig) -> Embedding:
    tokens = fusion_tokens(params, features.tokens, config)
    return Embedding(tokens=tokens, modality=features.modality)


def sh_head_tokens(params: ShHeadParams, emb, config: EncoderConfig):
    """Two-layer tanh perceptron from flattened tokens to (.., 3, 16) coefficients."""
    ev = ad.value_of(emb)
    single = ev.ndim == 2
    if single:
        emb = ad.reshape(emb, (1,) + ev.shape)
    b = ad.value_of(emb).shape[0]
    flat = ad.reshape(emb, (b, config.tokens * config.embed_dim))
    hidden = ad.tanh(ad.add(ad.matmul(flat, params.w1), params.b1))
    out = ad.reshape(ad.add(ad.matmul(hidden, params.w2), params.b2), (b, 3, 16))
    if single:
        out = ad.reshape(out, (3, 16))
    return out


def predict_sh(params: ShHeadParams, embedding: Embedding, config: EncoderConfig) -> np.ndarray:
    tokens = embedding.tokens if isinstance(embedding, Embedding) else embedding
    expected = (config.tokens, config.embed_dim)
    if ad.value_of(tokens).shape != expected:
        raise ValueError(f"embedding shape {ad.value_of(tokens).shape} != {expected}")
    return sh_head_tokens(params, tokens, config)


def modality_seed(base_seed: int, modality: str) -> int:
    """Independent stub stream per modality, mirroring per-modality backbones."""
    return (base_seed * 1000003 + MODALITIES.index(modality)) % 2**63


def envmap_payload(
    radiance: np.ndarray,
    key: float = tonemap.DEFAULT_KEY,
    gamma: float = tonemap.DEFAULT_GAMMA,
    i_max: float = tonemap.DEFAULT_I_MAX,
    log_image: tonemap.LogImage | None = None,
) -> np.ndarray:
    """9-channel encoder input for environment maps: LDR, log-HDR, direction."""
    radiance = envmap_mod.validate_map(radiance)
    h, w = radiance.shape[:2]
    ldr = tonemap.reinhard_tonemap(radiance, key=key, gamma=gamma)
    log = log_image if log_image is not None else tonemap.log_encode(radiance, i_max=i_max)
    dirs = envmap_mod.direction_map(w, h)
    return np.concatenate([ldr, log.data, dirs], axis=-1)


def encode(params: EncoderParams, payloads: dict, base_seed: int) -> dict:
    """Stub + fusion for a dict of modality -> payload; returns Embeddings."""
    out = {}
    for modality, payload in payloads.items():
        feats = stub_backbone(payload, modality_seed(base_seed, modality), modality=modality)
        emb = fusion_forward(params.fusion[modality], feats, params.config)
        out[modality] = emb
    return out
