"""Joint training of linear encoders, a softmax head and the PCI-masks.

Each minibatch: encode every modality, re-center the features on the batch,
update every pair mask with ``optimize_mask`` (on its cadence), then take one
plain gradient-descent step on encoders and head against

    total = theta * correlation_loss + cross_entropy

with the masks held fixed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .correlation import correlation_loss, total_masked_corr
from .features import FeatureBatch, as_batch, covariance
from .mask import MaskSet, PairMoments, PgdConfig, run_pgd, save_maskset
from .seeding import component_rng
from .synthgen import Dataset, save_matrix


@dataclass
class LinearEncoder:
    weight: np.ndarray
    modality_id: int = 0

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=float)
        if self.weight.ndim != 2 or not np.all(np.isfinite(self.weight)):
            raise ValueError("encoder weight must be a finite 2-D matrix")

    @property
    def m(self) -> int:
        return self.weight.shape[0]

    def encode(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weight.T


@dataclass
class TaskHead:
    weight: np.ndarray
    bias: np.ndarray = None

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=float)
        if self.bias is None:
            self.bias = np.zeros(self.weight.shape[0])
        self.bias = np.array(self.bias, dtype=float)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("head bias must have one entry per class")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, z: np.ndarray) -> np.ndarray:
        return z @ self.weight.T + self.bias


@dataclass(frozen=True)
class TrainConfig:
    theta: float = 0.003
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    mask_update_cadence: int = 1
    # PGD steps per mask update; one step per learning step by default
    mask_iterations: int = 1
    seed: int = 0
    encoder_init: str = "oracle"
    init_noise: float = 0.1

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (covariance divides by n - 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mask_update_cadence < 1:
            raise ValueError("mask_update_cadence must be positive")
        if self.mask_iterations < 0:
            raise ValueError("mask_iterations must be >= 0")
        if self.encoder_init not in ("oracle", "random"):
            raise ValueError("encoder_init must be 'oracle' or 'random'")
        if self.init_noise < 0:
            raise ValueError("init_noise must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    correlation_loss: float
    task_loss: float
    total_loss: float


@dataclass
class TrainedModel:
    encoders: list
    head: TaskHead
    masks: MaskSet
    config: TrainConfig
    pgd: PgdConfig
    history: list = field(default_factory=list)

    def features(self, raw) -> list:
        """Encoded features of a whole split, centered on that split."""
        return [centered(enc.encode(x), i) for i, (enc, x) in enumerate(zip(self.encoders, raw))]

    def predict(self, raw) -> np.ndarray:
        z = np.hstack([b.data for b in self.features(raw)])
        return np.argmax(self.head.logits(z), axis=1)

    def accuracy(self, ds: Dataset) -> float:
        return float(np.mean(self.predict(ds.raw) == ds.labels))

    def total_masked_corr(self, ds: Dataset) -> float:
        return total_masked_corr(self.features(ds.raw), self.masks)

    def save(self, directory) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [
            save_matrix(enc.weight, directory / f"encoder_{i}.csv", "w")
            for i, enc in enumerate(self.encoders)
        ]
        written.append(save_matrix(self.head.weight, directory / "head_weight.csv", "w"))
        written.append(save_matrix(self.head.bias[None, :], directory / "head_bias.csv", "b"))
        written.extend(save_maskset(self.masks, directory / "masks", self.config.seed))
        written.append(save_history(self.history, directory / "history.csv"))
        return written


def centered(x: np.ndarray, modality_id: int = 0) -> FeatureBatch:
    return FeatureBatch(x - x.mean(axis=0), modality_id)


def cross_entropy(head: TaskHead, batches, labels) -> float:
    z = np.hstack([as_batch(b).data for b in batches])
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (z.shape[0],):
        raise ValueError(f"need {z.shape[0]} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= head.classes:
        raise ValueError("label outside the head's class range")
    if head.weight.shape[1] != z.shape[1]:
        raise ValueError(f"head expects {head.weight.shape[1]} inputs, features give {z.shape[1]}")
    logits = head.logits(z)
    return float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(labels.size), labels]))


def total_loss(batches, masks, head: TaskHead, labels, theta: float) -> float:
    """``theta * correlation_loss + mean cross-entropy`` on centered batches."""
    ce = cross_entropy(head, batches, labels)
    if theta == 0:
        return ce
    return theta * correlation_loss(batches, masks) + ce


def loss_and_gradients(encoders, head: TaskHead, raw, labels, masks, theta: float):
    """Losses and analytic gradients w.r.t. every encoder and the head.

    ``raw`` holds one ``n x d_raw`` block per modality. Returns
    ``(corr, ce, total, encoder_grads, head_weight_grad, head_bias_grad)``.
    """
    k = len(encoders)
    xc = [x - x.mean(axis=0) for x in raw]
    feats = [x @ enc.weight.T for x, enc in zip(xc, encoders)]
    n = feats[0].shape[0]
    m = feats[0].shape[1]
    labels = np.asarray(labels, dtype=int)

    z = np.hstack(feats)
    logits = head.logits(z)
    ce = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(n), labels]))
    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grad_hw = dlogits.T @ z
    grad_hb = dlogits.sum(axis=0)
    dz = dlogits @ head.weight
    dfeats = [dz[:, i * m : (i + 1) * m].copy() for i in range(k)]

    corr = 0.0
    if theta != 0:
        covs = [f.T @ f / (n - 1) for f in feats]
        cross_total = 0.0
        for i, j in combinations(range(k), 2):
            lam = masks[(i, j)].weights
            cross = float(lam @ np.einsum("sa,sa->a", feats[i], feats[j])) / (n - 1)
            quad = float(lam @ (covs[i] * covs[j]) @ lam)
            cross_total += cross - 0.5 * quad
            # d/dF_i of the ordered-pair sum: 2 * (F_j L - F_i L S_j L) / (n - 1)
            scale = -2.0 * theta / (n - 1)
            dfeats[i] += scale * (feats[j] * lam - feats[i] @ (lam[:, None] * covs[j] * lam))
            dfeats[j] += scale * (feats[i] * lam - feats[j] @ (lam[:, None] * covs[i] * lam))
        corr = -2.0 * cross_total

    enc_grads = [df.T @ x for df, x in zip(dfeats, xc)]
    return corr, ce, theta * corr + ce, enc_grads, grad_hw, grad_hb


def default_pgd(m: int, **overrides) -> PgdConfig:
    kw = {"sum_threshold": m / 4}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return PgdConfig(**kw)


def init_model(ds: Dataset, config: TrainConfig, pgd: PgdConfig | None = None) -> TrainedModel:
    spec = ds.spec
    pgd = pgd or default_pgd(spec.m)
    rng = component_rng(config.seed, "encoder-init")
    if config.encoder_init == "oracle":
        base = ds.oracle_encoders()
    else:
        base = [np.zeros((spec.m, spec.d_raw)) for _ in range(spec.k)]
    scale = config.init_noise / np.sqrt(spec.d_raw)
    if config.encoder_init == "random":
        scale = 1.0 / np.sqrt(spec.d_raw)
    encoders = [
        LinearEncoder(w + scale * rng.standard_normal(w.shape), i) for i, w in enumerate(base)
    ]
    head_rng = component_rng(config.seed, "head-init")
    head = TaskHead(0.01 * head_rng.standard_normal((spec.n_classes, spec.k * spec.m)))
    masks = MaskSet.random(spec.k, spec.m, pgd, config.seed)
    return TrainedModel(encoders, head, masks, config, pgd, [])


def update_masks(masks: MaskSet, batches, pgd: PgdConfig) -> MaskSet:
    """One PGD run per pair on the current batch, merged in pair order."""
    covs = [covariance(b) for b in batches]
    n = batches[0].n
    out = {}
    for (i, j), mk in masks.items():
        cross = batches[j].data.T @ batches[i].data / (n - 1)
        out[(i, j)] = run_pgd(PairMoments(covs[i], covs[j], cross), mk, pgd).mask
    return MaskSet(out, masks.k)


def train(ds: Dataset, config: TrainConfig, pgd: PgdConfig | None = None) -> TrainedModel:
    """Alternate mask PGD and encoder/head gradient steps over minibatches."""
    spec = ds.spec
    if len(ds.raw) != spec.k or ds.labels.shape != (ds.raw[0].shape[0],):
        raise ValueError("dataset does not match its spec")
    if ds.n < config.batch_size:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {ds.n}")
    model = init_model(ds, config, pgd)
    mask_pgd = replace(model.pgd, max_iterations=config.mask_iterations)
    rng = component_rng(config.seed, "batch-order")
    lr = config.learning_rate
    masks = model.masks
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(ds.n)
        sums = np.zeros(3)
        count = 0
        for start in range(0, ds.n - config.batch_size + 1, config.batch_size):
            idx = order[start : start + config.batch_size]
            raw = [x[idx] for x in ds.raw]
            if step % config.mask_update_cadence == 0 and config.mask_iterations > 0:
                batches = [centered(enc.encode(x), i) for i, (enc, x) in
                           enumerate(zip(model.encoders, raw))]
                masks = update_masks(masks, batches, mask_pgd)
            corr, ce, tot, enc_grads, ghw, ghb = loss_and_gradients(
                model.encoders, model.head, raw, ds.labels[idx], masks, config.theta
            )
            if config.theta == 0:
                batches = [centered(enc.encode(x), i) for i, (enc, x) in
                           enumerate(zip(model.encoders, raw))]
                corr = correlation_loss(batches, masks)
            for enc, g in zip(model.encoders, enc_grads):
                enc.weight -= lr * g
            model.head.weight -= lr * ghw
            model.head.bias -= lr * ghb
            sums += (corr, ce, tot)
            count += 1
            step += 1
        mean = sums / max(count, 1)
        model.history.append(EpochRecord(epoch, *map(float, mean)))
    model.masks = masks
    return model


def save_history(history, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "correlation_loss", "task_loss", "total_loss"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.correlation_loss), repr(rec.task_loss),
                             repr(rec.total_loss)])
    return path
