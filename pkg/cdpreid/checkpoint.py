"""
Binary checkpoint files.

Layout: the 8 byte magic ``CDPCKPT\\0``, a little-endian uint32 format
version, a little-endian uint32 header length, a JSON header (sorted keys),
then every tensor listed in the header as raw little-endian float64 in header
order. A checkpoint holds the model, optionally the optimizer state and the
training progress needed to resume a run bit-exactly.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .configclass import as_dict
from .enums import SpectrumTag
from .errors import CheckpointError
from .model import EmbeddingModel, ModelConfig
from .optim import AdamState
from .sampler import SpectrumDistribution

log = logging.getLogger(__name__)

MAGIC = b"CDPCKPT\x00"
VERSION = 1
_PREAMBLE = struct.Struct("<8sII")


@dataclass(eq=False)
class Checkpoint:
    """
    ``epoch`` counts the completed epochs. ``history`` holds the training log
    rows written so far and ``train_config`` the serialized training config.
    """
    model: EmbeddingModel
    adam: Optional[AdamState] = None
    epoch: int = 0
    distribution: Optional[SpectrumDistribution] = None
    confidence: Optional[Dict[SpectrumTag, float]] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    train_config: Optional[Dict[str, Any]] = None


def _tensor_table(ckpt: Checkpoint):
    table = [("param", name, ckpt.model.params[name]) for name in ckpt.model.params]
    if ckpt.adam is not None:
        table += [("adam_m", name, ckpt.adam.m[name]) for name in ckpt.model.params]
        table += [("adam_v", name, ckpt.adam.v[name]) for name in ckpt.model.params]
    return table


def encode(ckpt: Checkpoint) -> bytes:
    table = _tensor_table(ckpt)
    header: Dict[str, Any] = {
        "model_config": as_dict(ckpt.model.config),
        "tensors": [[group, name, list(array.shape)] for group, name, array in table],
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "train_config": ckpt.train_config,
    }
    if ckpt.adam is not None:
        header["adam"] = {"t": ckpt.adam.t, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps}
    if ckpt.distribution is not None:
        header["distribution"] = {q.name: p for q, p in ckpt.distribution.probs.items()}
    if ckpt.confidence is not None:
        header["confidence"] = {q.name: r for q, r in ckpt.confidence.items()}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for _, _, array in table)
    return _PREAMBLE.pack(MAGIC, VERSION, len(blob)) + blob + body


def decode(data: bytes) -> Checkpoint:
    if len(data) < _PREAMBLE.size:
        raise CheckpointError("truncated checkpoint: missing preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    start = _PREAMBLE.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    try:
        tensors: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        offset = start + header_len
        for group, name, shape in header["tensors"]:
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointError(f"truncated checkpoint: tensor {group}/{name} is incomplete")
            array = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape)
            tensors[group][name] = array.astype(np.float64)
            offset = end
        if offset != len(data):
            raise CheckpointError(f"checkpoint has {len(data) - offset} trailing bytes")

        model = EmbeddingModel(ModelConfig.from_mapping(header["model_config"]), tensors["param"])
        adam = None
        if "adam" in header:
            adam = AdamState(tensors["adam_m"], tensors["adam_v"], **header["adam"])
        distribution = None
        if "distribution" in header:
            distribution = SpectrumDistribution({SpectrumTag[q]: p for q, p in header["distribution"].items()})
        confidence = None
        if "confidence" in header:
            confidence = {SpectrumTag[q]: r for q, r in header["confidence"].items()}
        return Checkpoint(model, adam, header["epoch"], distribution, confidence,
                          header["history"], header["train_config"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """
    Write ``ckpt`` to ``path`` through a temporary file, so an interrupted
    save never leaves a partial checkpoint behind.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode(ckpt))
    os.replace(tmp, path)
    log.debug("saved checkpoint %s (epoch %d)", path, ckpt.epoch)


def load_checkpoint(path: str) -> Checkpoint:
    """
    :raises CheckpointError: when ``path`` does not exist or is not a valid
        checkpoint; the message names the path.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc.strerror}") from None
    try:
        return decode(data)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
