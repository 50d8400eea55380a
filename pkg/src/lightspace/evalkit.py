"""Evaluation harness: cross-modal retrieval statistics, the rotation
similarity experiment, and full-reference render metrics."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from . import envmap
from .autodiff import value_of

__all__ = [
    "PairMetrics",
    "RetrievalReport",
    "retrieval_metrics",
    "cross_modal_report",
    "rotation_curve",
    "image_metrics",
]

ROTATION_ANGLES = tuple(range(-180, 181, 30))
DEFAULT_KS = (1, 5, 10)


@dataclass
class PairMetrics:
    recall: dict            # K -> percent
    mrr: float
    median_rank: float
    mean_rank: float

    def format_row(self) -> str:
        parts = [f"R@{k} {self.recall[k]:.1f}" for k in sorted(self.recall)]
        parts.append(f"MRR {self.mrr:.3f}")
        parts.append(f"median {self.median_rank:.1f}")
        parts.append(f"mean {self.mean_rank:.1f}")
        return ", ".join(parts)


@dataclass
class RetrievalReport:
    pairs: dict             # (query_modality, gallery_modality) -> PairMetrics
    average: PairMetrics
    ks: tuple = DEFAULT_KS

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf)
        header = ["query", "gallery"] + [f"R@{k}" for k in self.ks] + ["MRR", "median_rank", "mean_rank"]
        writer.writerow(header)
        for (qa, qb), m in self.pairs.items():
            writer.writerow(
                [qa, qb] + [f"{m.recall[k]:.4f}" for k in self.ks]
                + [f"{m.mrr:.6f}", f"{m.median_rank:.4f}", f"{m.mean_rank:.4f}"]
            )
        m = self.average
        writer.writerow(
            ["AVERAGE", ""] + [f"{m.recall[k]:.4f}" for k in self.ks]
            + [f"{m.mrr:.6f}", f"{m.median_rank:.4f}", f"{m.mean_rank:.4f}"]
        )
        return buf.getvalue()

    def to_json(self) -> str:
        def entry(m: PairMetrics):
            return {
                "recall": {str(k): m.recall[k] for k in self.ks},
                "mrr": m.mrr,
                "median_rank": m.median_rank,
                "mean_rank": m.mean_rank,
            }

        doc = {
            "pairs": {f"{qa}->{qb}": entry(m) for (qa, qb), m in self.pairs.items()},
            "average": entry(self.average),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def ranks_from_similarity(sim: np.ndarray, ground_truth) -> np.ndarray:
    """Rank of each query's ground-truth item, ties resolved by gallery order."""
    sim = np.asarray(sim, dtype=np.float64)
    n_q, n_g = sim.shape
    gt = np.asarray(ground_truth)
    if gt.shape != (n_q,):
        raise ValueError(f"ground truth must map each of {n_q} queries, got shape {gt.shape}")
    if np.any(gt < 0) or np.any(gt >= n_g):
        raise ValueError("ground-truth index outside the gallery")
    order = np.argsort(-sim, axis=1, kind="stable")
    ranks = np.empty(n_q, dtype=np.int64)
    for i in range(n_q):
        ranks[i] = int(np.nonzero(order[i] == gt[i])[0][0]) + 1
    return ranks


def retrieval_metrics(sim: np.ndarray, ground_truth, ks=DEFAULT_KS) -> PairMetrics:
    ranks = ranks_from_similarity(sim, ground_truth)
    recall = {k: float(np.mean(ranks <= k) * 100.0) for k in ks}
    return PairMetrics(
        recall=recall,
        mrr=float(np.mean(1.0 / ranks)),
        median_rank=float(np.median(ranks)),
        mean_rank=float(np.mean(ranks)),
    )


def _flatten_normalized(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64).reshape(len(embeddings), -1)
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm embedding")
    return e / norms


def cosine_similarity_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    return _flatten_normalized(queries) @ _flatten_normalized(gallery).T


def _average_metrics(metrics: list[PairMetrics], ks) -> PairMetrics:
    return PairMetrics(
        recall={k: float(np.mean([m.recall[k] for m in metrics])) for k in ks},
        mrr=float(np.mean([m.mrr for m in metrics])),
        median_rank=float(np.mean([m.median_rank for m in metrics])),
        mean_rank=float(np.mean([m.mean_rank for m in metrics])),
    )


def cross_modal_report(embeddings: dict, ids: dict | None = None, ks=DEFAULT_KS) -> RetrievalReport:
    """Bidirectional retrieval over every ordered modality pair, then averaged."""
    names = sorted(embeddings)
    if len(names) < 2:
        raise ValueError("need at least two modalities")
    arrays = {m: np.asarray(value_of(embeddings[m])) for m in names}
    n = len(arrays[names[0]])
    if n < 2:
        raise ValueError("need at least two aligned samples")
    if ids is not None:
        reference = list(ids[names[0]])
        for m in names:
            if list(ids[m]) != reference:
                raise ValueError(f"ids of modality {m!r} are not aligned")
    if any(len(arrays[m]) != n for m in names):
        raise ValueError("modalities must carry the same number of samples")
    gt = np.arange(n)
    pairs = {}
    for qa in names:
        for qb in names:
            if qa == qb:
                continue
            sim = cosine_similarity_matrix(arrays[qa], arrays[qb])
            pairs[(qa, qb)] = retrieval_metrics(sim, gt, ks)
    return RetrievalReport(pairs=pairs, average=_average_metrics(list(pairs.values()), ks), ks=tuple(ks))


def rotation_curve(encode, data: np.ndarray, angles=ROTATION_ANGLES) -> list[tuple[float, float]]:
    """Cosine similarity of each rotated panorama's embedding against 0 degrees."""
    data = envmap.validate_map(data)
    curve = []
    embeddings = {}
    for angle in angles:
        emb = encode(envmap.rotate_yaw(data, float(angle)))
        tokens = np.asarray(value_of(emb.tokens if hasattr(emb, "tokens") else emb))
        embeddings[angle] = tokens.reshape(-1)
    reference = embeddings[min(embeddings, key=abs)]  # the 0-degree entry
    ref = reference / np.linalg.norm(reference)
    for angle in angles:
        e = embeddings[angle]
        curve.append((float(angle), float(ref @ (e / np.linalg.norm(e)))))
    return curve


def rotation_curve_csv(curve) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["angle_deg", "cosine_similarity"])
    for angle, value in curve:
        writer.writerow([f"{angle:g}", f"{value:.8f}"])
    return buf.getvalue()


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window sigma 1.5, valid-mode filtering."""
    win = _gaussian_window()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = fftconvolve(a, win, mode="valid")
    mu_b = fftconvolve(b, win, mode="valid")
    sigma_a = fftconvolve(a * a, win, mode="valid") - mu_a * mu_a
    sigma_b = fftconvolve(b * b, win, mode="valid") - mu_b * mu_b
    sigma_ab = fftconvolve(a * b, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sigma_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (sigma_a + sigma_b + c2)
    return float(np.mean(num / den))


def image_metrics(pred: np.ndarray, gt: np.ndarray, si_mode: str = "linear") -> dict:
    """PSNR (dB, inf when identical), RMSE, scale-invariant RMSE, SSIM, MAE.

    Inputs are LDR images in [0, 1]. SI-RMSE rescales the prediction by the
    least-squares optimal scalar; `si_mode="log"` solves the shift in log
    space instead.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3:
        raise ValueError(f"images must share an HxWxC shape, got {pred.shape} vs {gt.shape}")
    for name, img in (("pred", pred), ("gt", gt)):
        if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
            raise ValueError(f"{name} values outside [0, 1]")
    mse = float(np.mean((pred - gt) ** 2))
    rmse = math.sqrt(mse)
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    if si_mode == "linear":
        denom = float(np.sum(pred * pred))
        alpha = float(np.sum(pred * gt)) / denom if denom > 0 else 0.0
        si_rmse = math.sqrt(float(np.mean((alpha * pred - gt) ** 2)))
    elif si_mode == "log":
        eps = 1e-6
        diff = np.log(gt + eps) - np.log(pred + eps)
        si_rmse = math.sqrt(float(np.mean((diff - diff.mean()) ** 2)))
    else:
        raise ValueError(f"unknown si_mode {si_mode!r}")
    ssim = float(np.mean([_ssim_channel(pred[..., c], gt[..., c]) for c in range(pred.shape[2])]))
    mae = float(np.mean(np.abs(pred - gt)))
    return {"psnr": psnr, "rmse": rmse, "si_rmse": si_rmse, "ssim": ssim, "mae": mae}
