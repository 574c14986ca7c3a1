"""
Adam optimizer, the step learning-rate schedule and the training
configuration that ties every component's settings together.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .configclass import configclass, field
from .errors import NonFiniteError
from .imaging import JitterConfig
from .losses import LossConfig
from .model import ModelConfig
from .sampler import DHSMConfig, SamplerConfig

log = logging.getLogger(__name__)


def _decreasing(values) -> bool:
    return len(values) >= 1 and all(v > 0.0 for v in values) and all(a > b for a, b in zip(values, values[1:]))


def _milestones(values) -> bool:
    return all(0.0 < v < 1.0 for v in values) and all(a < b for a, b in zip(values, values[1:]))


@configclass
class TrainConfig:
    epochs: int = field(default=100, validator=lambda e: e >= 1)
    batches_per_epoch: Optional[int] = field(default=None, validator=lambda b: b is None or b >= 1,
                                             doc="batches per epoch, ceil(images / (P * K)) when unset")
    learning_rates: Tuple[float, ...] = field(default=(1e-3, 1e-4, 1e-5), validator=_decreasing)
    lr_milestones: Tuple[float, ...] = field(default=(0.5, 0.75), validator=_milestones,
                                             doc="fractions of the epochs at which the learning rate steps down")
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    dhsm: DHSMConfig = field(default_factory=DHSMConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    pairing: bool = field(default=True, doc="pair every original with a cross-spectrum counterpart")
    pk_sampling: bool = field(default=True, doc="identity balanced batches instead of uniform ones")
    flip: bool = field(default=True, doc="random horizontal flips of the originals")
    rng_seed: int = 0
    checkpoint_every: int = field(default=10, validator=lambda c: c >= 0,
                                  doc="epochs between checkpoints, 0 writes only the final one")

    def __post_init__(self):
        if len(self.learning_rates) != len(self.lr_milestones) + 1:
            raise ValueError(f"{len(self.lr_milestones)} learning rate milestones need "
                             f"{len(self.lr_milestones) + 1} learning rates, got {len(self.learning_rates)}")
        if not self.pk_sampling and self.loss.use_tri:
            raise ValueError("the triplet loss needs PK sampling, set loss.use_tri = false for random batches")

    @property
    def base_lr(self) -> float:
        return self.learning_rates[0]

    @property
    def batch_size(self) -> int:
        return self.sampler.P * self.sampler.K


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """
    Learning rate of ``epoch`` (0-based): ``learning_rates[i]`` where ``i``
    is the number of milestones at or before it.
    """
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} is outside [0, {cfg.epochs})")
    passed = sum(1 for fraction in cfg.lr_milestones if epoch >= fraction * cfg.epochs)
    return cfg.learning_rates[passed]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({name: np.zeros_like(p) for name, p in params.items()},
                   {name: np.zeros_like(p) for name, p in params.items()})


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """
    One bias-corrected Adam update, applied to ``params`` in place.

    :raises NonFiniteError: naming the first parameter with a non-finite
        gradient; nothing is updated in that case.
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, p in params.items():
        if name not in grads or grads[name].shape != p.shape:
            raise ValueError(f"gradient for {name} is missing or misshapen")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
