"""
Classification cross-entropy over the whole paired batch, batch-hard triplet
loss over the originals, and their weighted sum.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .configclass import configclass, field
from .enums import CeNormalization
from .errors import InvalidInputError, NonFiniteError
from .layers import softmax


@configclass
class LossConfig:
    margin: float = field(default=0.3, validator=lambda m: m >= 0.0, doc="triplet margin in distance units")
    lambda_: float = field(default=1.0, validator=lambda w: w >= 0.0, doc="weight of the triplet loss")
    ce_normalization: CeNormalization = CeNormalization.MeanOverSamples
    use_cls: bool = True
    use_tri: bool = True

    def __post_init__(self):
        if not (self.use_cls or self.use_tri):
            raise ValueError("LossConfig needs at least one of use_cls and use_tri")


@dataclass(frozen=True, eq=False)
class LossOutput:
    total: float
    cls: float
    tri: float
    grad_embeddings: np.ndarray
    grad_logits: np.ndarray
    per_sample_target_prob: np.ndarray


def _check_labels(labels: np.ndarray, n: int, num_classes: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError(f"expected {n} integer labels, got {labels.dtype} array of shape {labels.shape}")
    if num_classes is not None and n and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise InvalidInputError(f"label {bad} is outside [0, {num_classes})")
    return labels


def cross_entropy(logits: np.ndarray, labels: np.ndarray,
                  cfg: LossConfig) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Softmax cross-entropy.

    :returns: (loss, d loss / d logits, probability of the target class per sample)
    """
    n, m = logits.shape
    labels = _check_labels(labels, n, m)
    probs = softmax(logits)
    rows = np.arange(n)
    target = probs[rows, labels]
    z = n * m if cfg.ce_normalization is CeNormalization.PerClass else n
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted[rows, labels] - np.log(np.exp(shifted).sum(axis=1))
    loss = float(-log_probs.sum() / z)
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / z, target


def pairwise_distances(embeddings: np.ndarray) -> np.ndarray:
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def batch_hard_triplet(embeddings: np.ndarray, labels: np.ndarray, cfg: LossConfig) -> Tuple[float, np.ndarray]:
    """
    Mean over anchors of [margin + hardest positive - hardest negative]_+,
    with Euclidean distances. Ties pick the first index in batch order; the
    distance gradient at zero distance is zero.
    """
    n = embeddings.shape[0]
    labels = _check_labels(labels, n)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2:
        raise InvalidInputError("batch hard triplet loss needs at least two distinct labels")
    if counts.min() < 2:
        raise InvalidInputError(f"label {values[counts.argmin()]} has a single sample, triplets need two per label")

    dist = pairwise_distances(embeddings)
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(n, dtype=bool)
    hard_pos = np.where(positive, dist, -np.inf).argmax(axis=1)
    hard_neg = np.where(same, np.inf, dist).argmin(axis=1)
    rows = np.arange(n)
    d_pos = dist[rows, hard_pos]
    d_neg = dist[rows, hard_neg]
    terms = np.maximum(cfg.margin + d_pos - d_neg, 0.0)
    loss = float(terms.mean())

    grad = np.zeros_like(embeddings)
    for a in np.flatnonzero(terms > 0.0):
        for other, sign, d in ((hard_pos[a], 1.0, d_pos[a]), (hard_neg[a], -1.0, d_neg[a])):
            if d == 0.0:
                continue
            unit = (embeddings[a] - embeddings[other]) / d
            grad[a] += sign * unit / n
            grad[other] -= sign * unit / n
    return loss, grad


def total_loss(logits: np.ndarray, embeddings: np.ndarray, labels: np.ndarray, cfg: LossConfig,
               num_originals: Optional[int] = None) -> LossOutput:
    """
    ``cls + lambda * tri``. Cross-entropy sees every sample; the triplet loss
    sees only the first ``num_originals`` rows of ``embeddings`` (all rows by
    default), so generated samples get no triplet gradient.

    :raises NonFiniteError: when the loss is not finite.
    """
    n = logits.shape[0]
    if embeddings.shape[0] != n:
        raise InvalidInputError(f"{embeddings.shape[0]} embeddings for {n} logits")
    num_originals = n if num_originals is None else num_originals
    if not 0 < num_originals <= n:
        raise InvalidInputError(f"num_originals must lie in [1, {n}], got {num_originals}")

    cls, grad_logits, target = cross_entropy(logits, labels, cfg)
    if not cfg.use_cls:
        cls, grad_logits = 0.0, np.zeros_like(logits)

    grad_embeddings = np.zeros_like(embeddings)
    tri = 0.0
    if cfg.use_tri:
        tri, grad_tri = batch_hard_triplet(embeddings[:num_originals], np.asarray(labels)[:num_originals], cfg)
        grad_embeddings[:num_originals] = cfg.lambda_ * grad_tri

    total = cls + cfg.lambda_ * tri
    if not np.isfinite(total):
        raise NonFiniteError(f"non-finite loss (cls={cls!r}, tri={tri!r})")
    return LossOutput(total, cls, tri, grad_embeddings, grad_logits, target)
