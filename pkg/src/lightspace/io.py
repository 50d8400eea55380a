"""File codecs and persistence.

PFM and Radiance RGBE for HDR maps, PNG for LDR images, a binary embedding
store, checkpoints, and the JSON documents used for SH coefficients, light
lists, and pipeline configuration. All writes go through a
write-temp-then-rename path so interrupted runs never leave truncated files.

Binary layouts (all integers little-endian):

  embedding store:  magic "ULEMB\\0" | version u32 | count u32 | T u32 |
                    D u32 | modality 16 bytes (NUL padded) | manifest
                    offset u64 | count*T*D float32 | JSON id manifest
  checkpoint:       header length u32 | JSON header (encoder config, stub
                    seed, tensor names + shapes) | tensors as float32, in
                    header order
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from PIL import Image

from . import encoder as enc
from . import learn as learn_mod
from .lights import LightDetectConfig, LightSource

EMBEDDING_MAGIC = b"ULEMB\x00"
EMBEDDING_VERSION = 1
_EMBED_HEADER = struct.Struct("<6sIIII16sQ")

CHECKPOINT_FORMAT = "lightspace-checkpoint"
SH_BASIS_NAME = "real-orthonormal-yup"


class FormatError(ValueError):
    """File is not in the expected format."""


class CorruptFileError(FormatError):
    """File structure understood but data is truncated or inconsistent."""


class ConfigError(ValueError):
    """Configuration file violates the schema."""


@contextmanager
def atomic_write(path, mode: str = "wb"):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# ---------------------------------------------------------------------------
# PFM

def save_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"PFM writer expects HxWx3, got {data.shape}")
    h, w = data.shape[:2]
    with atomic_write(path) as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(data[::-1].astype("<f4").tobytes())  # rows bottom to top


def _read_token(fh) -> bytes:
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise CorruptFileError(f"unexpected end of PFM header at byte {fh.tell()}")
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic == b"Pf":
            raise FormatError("grayscale PFM is not supported")
        if magic != b"PF":
            raise FormatError(f"not a PFM file (magic {magic!r})")
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        scale = float(_read_token(fh))
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read(w * h * 3 * 4)
        if len(raw) != w * h * 3 * 4:
            raise CorruptFileError(f"PFM data truncated at byte {fh.tell()}")
        data = np.frombuffer(raw, dtype=dtype).reshape(h, w, 3)
        return data[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# Radiance RGBE (.hdr)

def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """Reference encoding: shared exponent from the max component."""
    rgb = np.asarray(rgb, dtype=np.float64)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    vmax = rgb.max(axis=-1)
    live = vmax >= 1e-32
    if np.any(live):
        mantissa, exponent = np.frexp(vmax[live])
        scale = mantissa * 256.0 / vmax[live]
        out[live, :3] = np.clip(rgb[live] * scale[..., None], 0, 255).astype(np.uint8)
        out[live, 3] = (exponent + 128).astype(np.uint8)
    return out


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """v = (mantissa + 0.5) / 256 * 2^(exponent - 128); exponent 0 is black."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    exponent = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0 / 256.0, exponent - 128)
    out = (rgbe[..., :3].astype(np.float64) + 0.5) * scale[..., None]
    out[exponent == 0] = 0.0
    return out


def _rle_encode_component(data: bytes) -> bytes:
    out = bytearray()
    n = len(data)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and data[i + run] == data[i]:
            run += 1
        if run >= 4:
            out += bytes((128 + run, data[i]))
            i += run
            continue
        lit_end = i + 1
        while lit_end < n and lit_end - i < 128:
            r = 1
            while lit_end + r < n and r < 4 and data[lit_end + r] == data[lit_end]:
                r += 1
            if r >= 4:
                break
            lit_end += 1
        out += bytes((lit_end - i,)) + data[i:lit_end]
        i = lit_end
    return bytes(out)


def save_hdr(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"RGBE writer expects HxWx3, got {data.shape}")
    h, w = data.shape[:2]
    rgbe = float_to_rgbe(data)
    with atomic_write(path) as fh:
        fh.write(b"#?RADIANCE\n")
        fh.write(b"FORMAT=32-bit_rle_rgbe\n\n")
        fh.write(f"-Y {h} +X {w}\n".encode("ascii"))
        if 8 <= w < 32768:
            for row in rgbe:
                fh.write(bytes((2, 2, w >> 8, w & 0xFF)))
                for c in range(4):
                    fh.write(_rle_encode_component(row[:, c].tobytes()))
        else:
            fh.write(rgbe.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptFileError(f"scanline truncated at byte {fh.tell()}")
    return data


def _decode_rle_scanline(fh, width: int) -> np.ndarray:
    row = np.empty((width, 4), dtype=np.uint8)
    for c in range(4):
        filled = 0
        while filled < width:
            count = _read_exact(fh, 1)[0]
            if count > 128:
                value = _read_exact(fh, 1)[0]
                run = count - 128
                if filled + run > width:
                    raise CorruptFileError(f"RLE run overflows scanline at byte {fh.tell()}")
                row[filled : filled + run, c] = value
                filled += run
            else:
                if count == 0 or filled + count > width:
                    raise CorruptFileError(f"bad RLE literal count at byte {fh.tell()}")
                row[filled : filled + count, c] = np.frombuffer(
                    _read_exact(fh, count), dtype=np.uint8
                )
                filled += count
    return row


def load_hdr(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\r\n") not in (b"#?RADIANCE", b"#?RGBE"):
            raise FormatError("not a Radiance RGBE file")
        fmt_seen = False
        while True:
            line = fh.readline()
            if not line:
                raise CorruptFileError(f"header ended early at byte {fh.tell()}")
            line = line.rstrip(b"\r\n")
            if not line:
                break
            if line.startswith(b"FORMAT="):
                if line != b"FORMAT=32-bit_rle_rgbe":
                    raise FormatError(f"unsupported format {line!r}")
                fmt_seen = True
        if not fmt_seen:
            raise FormatError("missing FORMAT line")
        resolution = fh.readline().rstrip(b"\r\n").split()
        if len(resolution) != 4 or resolution[0] != b"-Y" or resolution[2] != b"+X":
            raise FormatError(f"unsupported resolution line {b' '.join(resolution)!r}")
        h, w = int(resolution[1]), int(resolution[3])
        rgbe = np.empty((h, w, 4), dtype=np.uint8)
        for v in range(h):
            marker = _read_exact(fh, 4)
            if marker[0] == 2 and marker[1] == 2 and ((marker[2] << 8) | marker[3]) == w:
                rgbe[v] = _decode_rle_scanline(fh, w)
            elif marker[0] == 1 and marker[1] == 1 and marker[2] == 1:
                raise FormatError("old-style RLE scanlines are not supported")
            else:
                flat = marker + _read_exact(fh, w * 4 - 4)
                rgbe[v] = np.frombuffer(flat, dtype=np.uint8).reshape(w, 4)
    return rgbe_to_float(rgbe)


def load_radiance_map(path) -> np.ndarray:
    """Load an HDR panorama, detecting PFM or RGBE from the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"#?":
        return load_hdr(path)
    if magic in (b"PF", b"Pf"):
        return np.asarray(load_pfm(path), dtype=np.float64)
    raise FormatError(f"unknown magic {magic!r} in {path}")


def save_radiance_map(path, data: np.ndarray) -> None:
    name = str(path).lower()
    if name.endswith(".pfm"):
        save_pfm(path, data)
    elif name.endswith(".hdr"):
        save_hdr(path, data)
    else:
        raise ValueError(f"unsupported radiance extension for {path}")


# ---------------------------------------------------------------------------
# PNG (LDR)

def save_ldr_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("LDR image values must lie in [0, 1]")
    quantized = np.rint(image * 255.0).astype(np.uint8)
    with atomic_write(path) as fh:
        Image.fromarray(quantized, mode="RGB").save(fh, format="PNG")


def load_ldr_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# Embedding store

def save_embedding_store(path, embeddings: np.ndarray, ids, modality: str) -> None:
    embeddings = np.asarray(embeddings, dtype=np.float32)
    if embeddings.ndim != 3:
        raise ValueError(f"embeddings must be (count, T, D), got {embeddings.shape}")
    count, t, d = embeddings.shape
    ids = [str(i) for i in ids]
    if len(ids) != count:
        raise ValueError(f"{count} embeddings but {len(ids)} ids")
    body = embeddings.astype("<f4").tobytes()
    manifest_offset = _EMBED_HEADER.size + len(body)
    header = _EMBED_HEADER.pack(
        EMBEDDING_MAGIC,
        EMBEDDING_VERSION,
        count,
        t,
        d,
        modality.encode("utf-8")[:16].ljust(16, b"\x00"),
        manifest_offset,
    )
    with atomic_write(path) as fh:
        fh.write(header)
        fh.write(body)
        fh.write(json.dumps(ids).encode("utf-8"))


def load_embedding_store(path):
    """Returns (embeddings (count, T, D) float32, ids, modality)."""
    with open(path, "rb") as fh:
        raw = fh.read(_EMBED_HEADER.size)
        if len(raw) != _EMBED_HEADER.size:
            raise CorruptFileError("embedding store header truncated")
        magic, version, count, t, d, modality, manifest_offset = _EMBED_HEADER.unpack(raw)
        if magic != EMBEDDING_MAGIC:
            raise FormatError(f"bad embedding store magic {magic!r}")
        if version != EMBEDDING_VERSION:
            raise FormatError(f"unsupported embedding store version {version}")
        expected = count * t * d * 4
        if manifest_offset != _EMBED_HEADER.size + expected:
            raise CorruptFileError("embedding store body length disagrees with header")
        body = fh.read(expected)
        if len(body) != expected:
            raise CorruptFileError(f"embedding store truncated at byte {fh.tell()}")
        try:
            ids = json.loads(fh.read().decode("utf-8"))
        except json.JSONDecodeError as err:
            raise CorruptFileError(f"bad id manifest: {err}") from err
        if len(ids) != count:
            raise CorruptFileError(f"{count} embeddings but {len(ids)} manifest ids")
    data = np.frombuffer(body, dtype="<f4").reshape(count, t, d).astype(np.float32)
    return data, [str(i) for i in ids], modality.rstrip(b"\x00").decode("utf-8")


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, params: enc.EncoderParams, stub_seed: int) -> None:
    arrays = params.named_arrays()
    names = sorted(arrays)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "stub_seed": int(stub_seed),
        "encoder": asdict(params.config),
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with atomic_write(path) as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (EncoderParams, stub_seed)."""
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) != 4:
            raise CorruptFileError("checkpoint header length truncated")
        (length,) = struct.unpack("<I", raw)
        try:
            header = json.loads(fh.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as err:
            raise FormatError(f"bad checkpoint header: {err}") from err
        if header.get("format") != CHECKPOINT_FORMAT:
            raise FormatError("not a checkpoint file")
        config = enc.EncoderConfig(**header["encoder"])
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n_bytes = int(np.prod(shape)) * 4 if shape else 4
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise CorruptFileError(f"tensor {entry['name']} truncated at byte {fh.tell()}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    params = enc.EncoderParams.from_named_arrays(config, arrays)
    return params, int(header["stub_seed"])


# ---------------------------------------------------------------------------
# JSON documents

def save_sh_document(path, coeffs: np.ndarray) -> None:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (3, 16):
        raise ValueError(f"SH document expects (3, 16) coefficients, got {coeffs.shape}")
    doc = {"degree": 3, "channels": coeffs.tolist(), "basis": SH_BASIS_NAME}
    with atomic_write(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_sh_document(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("basis") != SH_BASIS_NAME or doc.get("degree") != 3:
        raise FormatError(f"unsupported SH document {path}")
    coeffs = np.asarray(doc["channels"], dtype=np.float64)
    if coeffs.shape != (3, 16):
        raise FormatError(f"SH document has shape {coeffs.shape}, expected (3, 16)")
    return coeffs


def save_lights(path, light_list, threshold: float) -> None:
    doc = {
        "threshold": float(threshold),
        "lights": [
            {
                "direction": [float(x) for x in s.direction],
                "pixel": [int(s.pixel[0]), int(s.pixel[1])],
                "peak": float(s.peak_radiance),
                "area": float(s.region_area),
            }
            for s in light_list
        ],
    }
    with atomic_write(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_lights(path):
    with open(path) as fh:
        doc = json.load(fh)
    out = [
        LightSource(
            direction=np.asarray(entry["direction"], dtype=np.float64),
            pixel=(int(entry["pixel"][0]), int(entry["pixel"][1])),
            peak_radiance=float(entry["peak"]),
            region_area=float(entry["area"]),
        )
        for entry in doc["lights"]
    ]
    return out, float(doc["threshold"])


# ---------------------------------------------------------------------------
# Pipeline configuration

@dataclass
class CropConfig:
    fov: float = 90.0
    size: int = 512

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise ConfigError(f"crop.fov out of range: {self.fov}")
        if self.size < 1:
            raise ConfigError(f"crop.size out of range: {self.size}")


@dataclass
class TonemapConfig:
    key: float = 0.35
    gamma: float = 2.2
    i_max: float = 1000.0

    def __post_init__(self):
        if self.key <= 0 or self.gamma <= 0:
            raise ConfigError("tonemap.key and tonemap.gamma must be positive")
        if self.i_max <= 1:
            raise ConfigError("tonemap.i_max must exceed 1")


@dataclass
class EvalConfig:
    recall_ks: list = field(default_factory=lambda: [1, 5, 10])

    def __post_init__(self):
        if not self.recall_ks or any(k < 1 for k in self.recall_ks):
            raise ConfigError("eval.recall_ks must be positive")


@dataclass
class PipelineConfig:
    crop: CropConfig = field(default_factory=CropConfig)
    tonemap: TonemapConfig = field(default_factory=TonemapConfig)
    lights: LightDetectConfig = field(default_factory=LightDetectConfig)
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    learn: learn_mod.LearnConfig = field(default_factory=learn_mod.LearnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        sections = {
            "crop": CropConfig,
            "tonemap": TonemapConfig,
            "lights": LightDetectConfig,
            "encoder": enc.EncoderConfig,
            "learn": learn_mod.LearnConfig,
            "eval": EvalConfig,
        }
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, cls in sections.items():
            payload = data.get(name, {})
            if not isinstance(payload, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(cls)}
            bad = set(payload) - allowed
            if bad:
                raise ConfigError(f"unknown keys {sorted(bad)} in section {name!r}")
            try:
                kwargs[name] = cls(**payload)
            except ValueError as err:
                raise ConfigError(f"invalid section {name!r}: {err}") from err
        return PipelineConfig(**kwargs)

    def to_dict(self) -> dict:
        return {
            "crop": asdict(self.crop),
            "tonemap": asdict(self.tonemap),
            "lights": asdict(self.lights),
            "encoder": asdict(self.encoder),
            "learn": asdict(self.learn),
            "eval": asdict(self.eval),
        }

    @staticmethod
    def load(path) -> "PipelineConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"config is not valid JSON: {err}") from err
        return PipelineConfig.from_dict(data)

    def save(self, path) -> None:
        with atomic_write(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
