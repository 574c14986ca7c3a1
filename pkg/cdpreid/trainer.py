"""
The training loop: sampler, pairing, forward pass, losses, backward pass and
Adam, with the DHSM distribution update between epochs.

Every batch draws its randomness from a generator seeded by
``(rng_seed, epoch, batch)``, so a run resumed from a checkpoint replays the
remaining batches exactly as an uninterrupted run would.
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import model as net
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .configclass import as_dict, replace
from .dataset import DatasetManifest, ImageStore
from .enums import SPECTRA, Mode, SpectrumTag
from .errors import CheckpointError, NonFiniteError
from .imaging import hflip
from .losses import total_loss
from .model import EmbeddingModel, init_model
from .optim import AdamState, TrainConfig, adam_step, lr_at_epoch
from .sampler import (
    Original,
    PairedBatch,
    SpectrumDistribution,
    SpectrumStats,
    dhsm_update,
    make_pairs,
    pk_sample,
    random_sample,
    record_confidence,
    spectrum_confidence,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "loss_total", "loss_cls", "loss_tri",
               "R_R", "R_G", "R_B", "R_X", "P_R", "P_G", "P_B", "P_X")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    loss_total: float
    loss_cls: float
    loss_tri: float
    batches: int


@dataclass(eq=False)
class FitResult:
    model: EmbeddingModel
    history: List[Dict[str, float]]
    distribution: SpectrumDistribution
    adam: AdamState
    confidence: Optional[Dict[SpectrumTag, float]] = None
    checkpoints: List[str] = field(default_factory=list)


def batches_per_epoch(manifest: DatasetManifest, cfg: TrainConfig) -> int:
    if cfg.batches_per_epoch is not None:
        return cfg.batches_per_epoch
    return max(1, math.ceil(len(manifest) / cfg.batch_size))


def initial_distribution(cfg: TrainConfig) -> SpectrumDistribution:
    return SpectrumDistribution.uniform(cfg.dhsm.spectra)


def _batch_generators(cfg: TrainConfig, epoch: int, batch: int) -> List[np.random.Generator]:
    # sampling, flipping, pairing and dropout streams
    children = np.random.SeedSequence([cfg.rng_seed, epoch, batch]).spawn(4)
    return [np.random.default_rng(child) for child in children]


def build_batch(manifest: DatasetManifest, store: ImageStore, dist: SpectrumDistribution, cfg: TrainConfig,
                generators: List[np.random.Generator]) -> PairedBatch:
    """
    Sample, load, flip and (when enabled) pair one training batch.
    """
    sample_rng, flip_rng, pair_rng, _ = generators
    if cfg.pk_sampling:
        drawn = pk_sample(manifest, cfg.sampler, sample_rng)
    else:
        drawn = random_sample(manifest, cfg.batch_size, sample_rng)
    flips = flip_rng.random(len(drawn)) < 0.5 if cfg.flip else np.zeros(len(drawn), dtype=bool)
    originals = []
    for (record, label), flipped in zip(drawn, flips):
        image = store.load(record)
        originals.append(Original(record, label, hflip(image) if flipped else image))
    if cfg.pairing:
        return make_pairs(originals, dist, cfg.jitter, pair_rng)
    return PairedBatch.unpaired(originals)


def train_epoch(model: EmbeddingModel, manifest: DatasetManifest, dist: SpectrumDistribution, state: AdamState,
                cfg: TrainConfig, epoch: int = 0, lr: Optional[float] = None,
                store: Optional[ImageStore] = None) -> Tuple[EpochMetrics, SpectrumStats]:
    """
    Train ``model`` in place for one epoch.

    :param lr: learning rate override, ``lr_at_epoch(cfg, epoch)`` by default.
    :returns: mean losses over the epoch and the spectrum confidence
        statistics of the generated R, G, B and X images.
    :raises NonFiniteError: when a loss or gradient is not finite; the
        message names the epoch and batch.
    """
    lr = lr_at_epoch(cfg, epoch) if lr is None else lr
    store = store if store is not None else ImageStore(model.config.input_size[:2])
    stats = SpectrumStats()
    sums = np.zeros(3)
    count = batches_per_epoch(manifest, cfg)
    for index in range(count):
        generators = _batch_generators(cfg, epoch, index)
        batch = build_batch(manifest, store, dist, cfg, generators)
        try:
            result = net.forward(model, batch.network_input(), Mode.Train, generators[3])
            loss = total_loss(result.logits, result.embeddings, batch.all_labels(), cfg.loss, batch.num_originals)
            grads = net.backward(model, result.trace, loss.grad_embeddings, loss.grad_logits)
            adam_step(model.params, grads, state, lr)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}, batch {index}: {exc}") from exc
        model.touch()

        for offset, tag in enumerate(batch.generated_tags):
            if tag in SPECTRA:
                record_confidence(stats, tag, float(loss.per_sample_target_prob[batch.num_originals + offset]))
        sums += (loss.total, loss.cls, loss.tri)
        log.debug("epoch %d batch %d: loss %.6f (cls %.6f, tri %.6f)", epoch, index, loss.total, loss.cls, loss.tri)

    means = sums / count
    metrics = EpochMetrics(epoch, lr, float(means[0]), float(means[1]), float(means[2]), count)
    return metrics, stats


def _log_row(metrics: EpochMetrics, confidence: Dict[SpectrumTag, float],
             dist: SpectrumDistribution) -> Dict[str, float]:
    row: Dict[str, float] = {
        "epoch": metrics.epoch + 1,
        "lr": metrics.lr,
        "loss_total": metrics.loss_total,
        "loss_cls": metrics.loss_cls,
        "loss_tri": metrics.loss_tri,
    }
    for q in SPECTRA:
        row[f"R_{q.name}"] = confidence.get(q, float("nan"))
    for q in SPECTRA:
        row[f"P_{q.name}"] = dist[q]
    return row


def write_log(path: str, history: List[Dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[column])) for column in LOG_COLUMNS[1:]])


def read_log(path: str) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(fh)]


def resolve_config(manifest: DatasetManifest, cfg: TrainConfig) -> TrainConfig:
    """
    Fill in the classifier width from the manifest.
    """
    num_classes = cfg.model.num_classes
    if num_classes is None:
        return replace(cfg, model=replace(cfg.model, num_classes=manifest.num_persons))
    if num_classes < manifest.num_persons:
        raise ValueError(f"model.num_classes={num_classes} is smaller than the {manifest.num_persons} "
                         f"training identities")
    return cfg


# keys that may change between a run and its resumption
RESUMABLE_KEYS = ("epochs", "checkpoint_every")


def _comparable(config: Dict) -> Dict:
    plain = json.loads(json.dumps(config))
    return {key: value for key, value in plain.items() if key not in RESUMABLE_KEYS}


def fit(manifest: DatasetManifest, cfg: TrainConfig, out_dir: Optional[str] = None,
        resume: Optional[str] = None) -> FitResult:
    """
    Train a model on ``manifest`` for ``cfg.epochs`` epochs.

    With ``out_dir`` set, writes ``config.json``, ``train_log.csv``,
    ``checkpoints/epoch_XXXX.ckpt`` every ``cfg.checkpoint_every`` epochs and
    the final ``model.ckpt``.

    :param resume: checkpoint to continue from; its completed epochs are
        kept and training picks up at the next epoch.
    """
    cfg = resolve_config(manifest, cfg)
    dist = initial_distribution(cfg)
    confidence: Optional[Dict[SpectrumTag, float]] = None
    history: List[Dict[str, float]] = []
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.adam is None or ckpt.distribution is None:
            raise CheckpointError(f"{resume}: checkpoint holds no training state to resume from")
        if ckpt.model.config != cfg.model:
            raise CheckpointError(f"{resume}: checkpoint model config {as_dict(ckpt.model.config)} "
                                  f"differs from {as_dict(cfg.model)}")
        if ckpt.train_config is not None:
            stored, current = _comparable(ckpt.train_config), _comparable(as_dict(cfg))
            if stored != current:
                changed = sorted(key for key in set(stored) | set(current) if stored.get(key) != current.get(key))
                raise CheckpointError(f"{resume}: training config differs from the checkpoint in {', '.join(changed)}")
        if ckpt.epoch > cfg.epochs:
            raise CheckpointError(f"{resume}: checkpoint is at epoch {ckpt.epoch}, past the {cfg.epochs} epochs to run")
        model, state, dist, confidence = ckpt.model, ckpt.adam, ckpt.distribution, ckpt.confidence
        history = [dict(row) for row in ckpt.history]
        start = ckpt.epoch
        log.info("resuming from %s at epoch %d", resume, start)
    else:
        model = init_model(cfg.model)
        state = AdamState.zeros_like(model.params)

    checkpoint_dir = None
    if out_dir is not None:
        checkpoint_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(checkpoint_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(as_dict(cfg), fh, indent=2, sort_keys=True)
            fh.write("\n")

    store = ImageStore(cfg.model.input_size[:2])
    written: List[str] = []
    for epoch in range(start, cfg.epochs):
        metrics, stats = train_epoch(model, manifest, dist, state, cfg, epoch, store=store)
        confidence = spectrum_confidence(stats, cfg.dhsm.spectra, confidence)
        if cfg.dhsm.enabled and cfg.pairing:
            dist = dhsm_update(stats, dist, cfg.dhsm, confidence)
        history.append(_log_row(metrics, confidence, dist))
        log.info("epoch %d/%d lr %g loss %.4f (cls %.4f, tri %.4f) %r", epoch + 1, cfg.epochs, metrics.lr,
                 metrics.loss_total, metrics.loss_cls, metrics.loss_tri, dist)

        done = epoch + 1
        if checkpoint_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"epoch_{done:04d}.ckpt")
            save_checkpoint(path, Checkpoint(model, state, done, dist, confidence, history, as_dict(cfg)))
            written.append(path)

    if out_dir is not None:
        path = os.path.join(out_dir, "model.ckpt")
        save_checkpoint(path, Checkpoint(model, state, cfg.epochs, dist, confidence, history, as_dict(cfg)))
        written.append(path)
        write_log(os.path.join(out_dir, "train_log.csv"), history)
        log.info("wrote %s", path)
    return FitResult(model, history, dist, state, confidence, written)
