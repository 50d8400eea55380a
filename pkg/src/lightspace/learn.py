"""Training objective and loop for the joint lighting embedding.

Contrastive alignment over all ordered modality pairs plus mean-squared
error on predicted SH coefficients, optimized with Adam. All gradients are
reverse-mode analytic and checked against central finite differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import encoder as enc


@dataclass
class LearnConfig:
    temperature: float = 0.07
    learnable_temperature: bool = False
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 500
    seed: int = 0
    sh_loss_weight: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_dropout_prob: float = 0.5
    similarity_pooling: str = "flatten"   # or "mean"
    sh_supervision: str = "all"           # or "envmap"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.similarity_pooling not in ("flatten", "mean"):
            raise ValueError(f"unknown pooling {self.similarity_pooling!r}")
        if self.sh_supervision not in ("all", "envmap"):
            raise ValueError(f"unknown sh supervision {self.sh_supervision!r}")


@dataclass
class Sample:
    """One aligned multi-modal training sample (features are frozen stub outputs)."""

    features: dict                       # modality -> (Tb, Db)
    sh_gt: np.ndarray                    # (3, 16)
    sample_id: object = None
    group: object = None                 # panorama id; batches never repeat a group
    envmap_features_dropped: np.ndarray | None = None


@dataclass
class Batch:
    features: dict                       # modality -> (N, Tb, Db)
    sh_gt: np.ndarray                    # (N, 3, 16)
    ids: list = field(default_factory=list)


@dataclass
class LossBreakdown:
    total: float
    contrastive: float
    sh: float


def _pool(emb, pooling: str):
    v = ad.value_of(emb)
    n, t, d = v.shape
    if pooling == "mean":
        return ad.mean(emb, axis=1)
    return ad.reshape(emb, (n, t * d))


def _normalize_rows(x):
    sq = ad.sum_(ad.mul(x, x), axis=1, keepdims=True)
    return ad.mul(x, ad.power(sq, -0.5))


def _contrastive_graph(embeddings: dict, temperature, pooling: str = "flatten"):
    """Mean row-wise cross entropy of cosine similarities over all ordered pairs."""
    names = sorted(embeddings)
    n = ad.value_of(embeddings[names[0]]).shape[0]
    normed = {}
    for m in names:
        flat = _pool(embeddings[m], pooling)
        norms = np.linalg.norm(ad.value_of(flat), axis=1)
        if np.any(norms < 1e-12):
            raise ValueError(f"zero-norm embedding in modality {m!r}")
        normed[m] = _normalize_rows(flat)
    eye = np.eye(n)
    inv_temp = (
        ad.power(temperature, -1.0) if isinstance(temperature, ad.Tensor) else 1.0 / float(temperature)
    )
    terms = []
    for a in names:
        for b_ in names:
            if a == b_:
                continue
            scores = ad.mul(ad.matmul(normed[a], ad.swapaxes(normed[b_], 0, 1)), inv_temp)
            match = ad.sum_(ad.mul(scores, eye), axis=1)
            terms.append(ad.mean(ad.sub(ad.logsumexp(scores, axis=1), match)))
    if not terms:
        raise ValueError("need at least two modalities")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


def contrastive_loss(embeddings: dict, temperature: float, pooling: str = "flatten"):
    """Loss value and gradients with respect to each modality's (N, T, D) block."""
    arrays = {m: np.asarray(e, dtype=np.float64) for m, e in embeddings.items()}
    first = next(iter(arrays.values()))
    if first.ndim != 3 or first.shape[0] < 1:
        raise ValueError("embeddings must be (N, T, D) with N >= 1")
    if any(a.shape[0] != first.shape[0] for a in arrays.values()):
        raise ValueError("modalities must carry the same number of samples")
    leaves = {m: ad.Tensor(a) for m, a in arrays.items()}
    loss = _contrastive_graph(leaves, temperature, pooling)
    if not isinstance(loss, ad.Tensor):  # N == 1 can fold to a constant
        return float(loss), {m: np.zeros_like(a) for m, a in arrays.items()}
    ad.backward(loss)
    grads = {
        m: leaves[m].grad if leaves[m].grad is not None else np.zeros_like(arrays[m])
        for m in arrays
    }
    return float(loss.value), grads


def sh_loss(pred: np.ndarray, gt: np.ndarray):
    """Mean squared error over the 48 coefficients, with its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _params_as_tensors(params: enc.EncoderParams) -> tuple[enc.EncoderParams, dict]:
    leaves = {name: ad.Tensor(arr) for name, arr in params.named_arrays().items()}
    fusion = {
        m: replace(
            p,
            **{f: leaves[f"fusion.{m}.{f}"] for f in ("queries", "wk", "wv", "wo", "ln_gain", "ln_bias", "wout")},
        )
        for m, p in params.fusion.items()
    }
    head = {
        m: replace(p, **{f: leaves[f"head.{m}.{f}"] for f in ("w1", "b1", "w2", "b2")})
        for m, p in params.head.items()
    }
    return enc.EncoderParams(config=params.config, fusion=fusion, head=head), leaves


def total_loss(
    batch: Batch,
    params: enc.EncoderParams,
    config: LearnConfig,
    log_temp: np.ndarray | None = None,
):
    """Forward every modality, combine contrastive and SH objectives, and
    backpropagate to all trainable parameters.

    Returns (breakdown, grads by parameter name); includes "log_temp" when given.
    """
    tensor_params, leaves = _params_as_tensors(params)
    temp_leaf = None
    if log_temp is not None:
        temp_leaf = ad.Tensor(np.asarray(log_temp, dtype=np.float64))
        temperature = ad.exp(temp_leaf)
    else:
        temperature = config.temperature
    embeddings = {
        m: enc.fusion_tokens(tensor_params.fusion[m], feats, params.config)
        for m, feats in batch.features.items()
    }
    n = batch.sh_gt.shape[0]
    if n > 1:
        l_c = _contrastive_graph(embeddings, temperature, config.similarity_pooling)
    else:
        l_c = 0.0
    supervised = list(embeddings) if config.sh_supervision == "all" else ["envmap"]
    if config.sh_loss_weight == 0.0:
        # value for the log only; no gradients flow through the head
        vals = [
            np.mean((enc.sh_head_tokens(params.head_for(m), ad.value_of(embeddings[m]), params.config) - batch.sh_gt) ** 2)
            for m in supervised
        ]
        l_sh = float(np.mean(vals))
        total = l_c
    else:
        sh_terms = []
        for m in supervised:
            pred = enc.sh_head_tokens(tensor_params.head_for(m), embeddings[m], params.config)
            diff = ad.sub(pred, batch.sh_gt)
            sh_terms.append(ad.mean(ad.mul(diff, diff)))
        l_sh = sh_terms[0]
        for t in sh_terms[1:]:
            l_sh = ad.add(l_sh, t)
        l_sh = ad.mul(l_sh, 1.0 / len(sh_terms))
        total = ad.add(ad.mul(l_sh, config.sh_loss_weight), l_c)
    if not isinstance(total, ad.Tensor):  # N = 1 with no SH supervision
        zeros = {name: np.zeros_like(leaf.value) for name, leaf in leaves.items()}
        if temp_leaf is not None:
            zeros["log_temp"] = np.zeros_like(temp_leaf.value)
        return LossBreakdown(total=float(total), contrastive=float(l_c), sh=float(l_sh)), zeros
    ad.backward(total)
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    if temp_leaf is not None:
        grads["log_temp"] = (
            temp_leaf.grad if temp_leaf.grad is not None else np.zeros_like(temp_leaf.value)
        )
    breakdown = LossBreakdown(
        total=float(total.value),
        contrastive=float(l_c.value) if isinstance(l_c, ad.Tensor) else float(l_c),
        sh=float(l_sh.value) if isinstance(l_sh, ad.Tensor) else float(l_sh),
    )
    return breakdown, grads


def grad_check(function, params: dict, tolerance: float = 1e-4, step: float = 1e-4):
    """Central-difference verification of analytic gradients.

    `function(params) -> (loss, grads)`; arrays should be float64. The
    relative error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    _, grads = function(params)
    per_param = {}
    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        analytic = np.asarray(grads[name], dtype=np.float64)
        numeric = np.zeros_like(analytic)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = function(params)
            flat[i] = orig - step
            lo, _ = function(params)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        err = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
        per_param[name] = err
        worst = max(worst, err)
    return GradCheckReport(max_rel_error=worst, per_param=per_param, passed=worst <= tolerance)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    passed: bool


class Adam:
    """Standard Adam with bias correction; state keyed by parameter name."""

    def __init__(self, config: LearnConfig):
        self.lr = config.learning_rate
        self.b1, self.b2, self.eps = config.adam_beta1, config.adam_beta2, config.adam_eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        for name in sorted(params):
            g = np.asarray(grads[name], dtype=params[name].dtype)
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1**self.t)
            v_hat = self.v[name] / (1 - self.b2**self.t)
            params[name] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                params[name].dtype
            )


def make_batches(n: int, groups, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Seed-shuffled batches that never place two samples of one group together
    (crops of the same panorama share lighting and would poison the negatives)."""
    pool = list(rng.permutation(n))
    batches = []
    while pool:
        batch, used, rest = [], set(), []
        for idx in pool:
            g = groups[idx] if groups is not None else idx
            if len(batch) < batch_size and g not in used:
                batch.append(int(idx))
                used.add(g)
            else:
                rest.append(idx)
        batches.append(batch)
        pool = rest
    return batches


def _assemble_batch(samples, indices, rng: np.random.Generator, dropout_prob: float) -> Batch:
    modalities = list(samples[0].features)
    features = {}
    for m in modalities:
        rows = []
        for i in indices:
            s = samples[i]
            tokens = s.features[m]
            if (
                m == "envmap"
                and s.envmap_features_dropped is not None
                and rng.random() < dropout_prob
            ):
                tokens = s.envmap_features_dropped
            rows.append(tokens)
        features[m] = np.stack(rows)
    sh_gt = np.stack([samples[i].sh_gt for i in indices]).astype(features[modalities[0]].dtype)
    return Batch(features=features, sh_gt=sh_gt, ids=[samples[i].sample_id for i in indices])


@dataclass
class TrainResult:
    params: enc.EncoderParams
    log: list                           # (step, L_C, L_SH, total) rows
    log_temp: float | None = None


def train(samples, config: LearnConfig, params: enc.EncoderParams) -> TrainResult:
    """Deterministic Adam loop over seed-shuffled, group-aware batches.

    Mutates and returns `params`; the loss log has one row per step.
    """
    if not samples:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    arrays = params.named_arrays()
    log_temp = None
    if config.learnable_temperature:
        log_temp = np.array(math.log(config.temperature))
        arrays["log_temp"] = log_temp
    optimizer = Adam(config)
    groups = [s.group for s in samples]
    queue: list[list[int]] = []
    log = []
    for step in range(config.steps):
        if not queue:
            queue = make_batches(len(samples), groups, config.batch_size, rng)
        batch = _assemble_batch(samples, queue.pop(0), rng, config.log_dropout_prob)
        breakdown, grads = total_loss(batch, params, config, log_temp=log_temp)
        optimizer.step(arrays, grads)
        log.append((step, breakdown.contrastive, breakdown.sh, breakdown.total))
    return TrainResult(
        params=params, log=log, log_temp=float(log_temp) if log_temp is not None else None
    )


def write_loss_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "L_C", "L_SH", "total"])
        writer.writerows(log)
