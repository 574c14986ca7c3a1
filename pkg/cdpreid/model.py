"""
The one-stream embedding network: a stack of stride-2 3x3 convolutions with
ReLU, global average pooling, an affine embedding, dropout and a classifier
head, with exact reverse-mode gradients.

The embedding (before dropout) feeds the triplet loss and retrieval; the
logits feed the classification loss. Every input, whatever its spectrum, is a
3-channel image, so each first-layer filter sees red, green, blue, gray and
infrared content through the same weights.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from . import layers
from .configclass import configclass, field
from .enums import Mode
from .errors import InvalidInputError, StaleTraceError

log = logging.getLogger(__name__)

ParameterGradients = Dict[str, np.ndarray]


@configclass
class ModelConfig:
    input_size: Tuple[int, int, int] = field(default=(64, 32, 3), validator=lambda s: s[2] == 3 and min(s) >= 1,
                                             doc="network input height, width and channels")
    conv_channels: Tuple[int, ...] = field(default=(8, 16, 32), validator=lambda c: len(c) >= 1 and min(c) >= 1)
    embedding_dim: int = field(default=32, validator=lambda d: d >= 1)
    num_classes: Optional[int] = field(default=None, validator=lambda m: m is None or m >= 2,
                                       doc="classifier width, taken from the training manifest when unset")
    dropout_rate: float = field(default=0.5, validator=lambda r: 0.0 <= r < 1.0)
    rng_seed: int = 0

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        if self.num_classes is None:
            raise ValueError("ModelConfig.num_classes must be set to build a model")
        shapes: Dict[str, Tuple[int, ...]] = {}
        in_channels = self.input_size[2]
        for i, out_channels in enumerate(self.conv_channels, start=1):
            shapes[f"conv{i}.w"] = (out_channels, in_channels, 3, 3)
            shapes[f"conv{i}.b"] = (out_channels,)
            in_channels = out_channels
        shapes["fc_embed.w"] = (self.embedding_dim, in_channels)
        shapes["fc_embed.b"] = (self.embedding_dim,)
        shapes["classifier.w"] = (self.num_classes, self.embedding_dim)
        shapes["classifier.b"] = (self.num_classes,)
        return shapes

    def feature_sizes(self) -> List[Tuple[int, int]]:
        """
        Spatial size after each convolution.
        """
        height, width = self.input_size[0], self.input_size[1]
        sizes = []
        for _ in self.conv_channels:
            height, width = layers.conv_output_size(height), layers.conv_output_size(width)
            sizes.append((height, width))
        return sizes


class EmbeddingModel:
    """
    Parameters of the network, keyed ``conv1.w``, ``conv1.b``, ...,
    ``fc_embed.w``, ``fc_embed.b``, ``classifier.w``, ``classifier.b``.
    ``version`` increases every time the parameters are updated in place.
    """
    def __init__(self, config: ModelConfig, params: Dict[str, np.ndarray]):
        shapes = config.parameter_shapes()
        if list(params) != list(shapes):
            raise ValueError(f"model parameters {list(params)} do not match {list(shapes)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise ValueError(f"parameter {name} holds non-finite values")
        self.config = config
        self.params = params
        self.version = 0

    @property
    def num_convs(self) -> int:
        return len(self.config.conv_channels)

    def touch(self) -> None:
        self.version += 1

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.config, {name: value.copy() for name, value in self.params.items()})

    def __repr__(self):
        count = sum(value.size for value in self.params.values())
        return f"EmbeddingModel({count} parameters, {self.config.num_classes} classes)"


@dataclass(eq=False)
class ForwardTrace:
    """
    Activations cached by a forward pass for backpropagation. Eval traces
    carry no dropout mask and cannot be differentiated.
    """
    mode: Mode
    model_id: int
    version: int
    conv_caches: list
    relu_caches: list
    gap_cache: tuple
    embed_cache: tuple
    dropout_mask: Optional[np.ndarray]
    classifier_cache: tuple


class ForwardResult(NamedTuple):
    embeddings: np.ndarray
    logits: np.ndarray
    trace: ForwardTrace


def init_model(cfg: ModelConfig) -> EmbeddingModel:
    """
    He initialisation: weights ~ N(0, 2 / fan_in), biases zero.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    params = {}
    for name, shape in cfg.parameter_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    model = EmbeddingModel(cfg, params)
    log.debug("initialised %r", model)
    return model


def forward(model: EmbeddingModel, batch: np.ndarray, mode: Mode,
            rng: Optional[np.random.Generator] = None) -> ForwardResult:
    """
    :param batch: N x 3 x H x W unit-float images.
    :param rng: generator for the dropout mask in train mode; defaults to one
        seeded by the model config.
    """
    height, width, channels = model.config.input_size
    if batch.ndim != 4 or batch.shape[1:] != (channels, height, width):
        raise InvalidInputError(f"expected a batch of shape N x {channels} x {height} x {width}, got {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise InvalidInputError("batch holds non-finite values")

    p = model.params
    conv_caches, relu_caches = [], []
    x = batch
    for i in range(1, model.num_convs + 1):
        x, cache = layers.conv_forward(x, p[f"conv{i}.w"], p[f"conv{i}.b"])
        conv_caches.append(cache)
        x, cache = layers.relu_forward(x)
        relu_caches.append(cache)
    pooled, gap_cache = layers.gap_forward(x)
    embeddings, embed_cache = layers.affine_forward(pooled, p["fc_embed.w"], p["fc_embed.b"])

    if mode is Mode.Train:
        rng = rng if rng is not None else np.random.default_rng(model.config.rng_seed)
        dropped, mask = layers.dropout_forward(embeddings, model.config.dropout_rate, rng)
    else:
        dropped, mask = embeddings, None
    logits, classifier_cache = layers.affine_forward(dropped, p["classifier.w"], p["classifier.b"])

    trace = ForwardTrace(mode, id(model), model.version, conv_caches, relu_caches, gap_cache,
                         embed_cache, mask, classifier_cache)
    return ForwardResult(embeddings, logits, trace)


def backward(model: EmbeddingModel, trace: ForwardTrace, grad_embeddings: np.ndarray,
             grad_logits: np.ndarray) -> ParameterGradients:
    """
    Gradients of every parameter given the upstream derivatives of the
    embeddings (N x D) and the logits (N x M).

    :raises StaleTraceError: when the trace is from eval mode, another model,
        or parameters that have been updated since the forward pass.
    """
    if trace.mode is not Mode.Train:
        raise StaleTraceError("backward needs a trace from a train-mode forward pass")
    if trace.model_id != id(model) or trace.version != model.version:
        raise StaleTraceError("trace does not belong to the current model parameters")
    n = trace.embed_cache[0].shape[0]
    d, m = model.config.embedding_dim, model.config.num_classes
    if grad_embeddings.shape != (n, d) or grad_logits.shape != (n, m):
        raise StaleTraceError(f"upstream gradients {grad_embeddings.shape}, {grad_logits.shape} "
                              f"do not match the traced batch ({n} x {d}, {n} x {m})")

    grads: ParameterGradients = {}
    d_dropped, grads["classifier.w"], grads["classifier.b"] = layers.affine_backward(grad_logits, trace.classifier_cache)
    d_embed = layers.dropout_backward(d_dropped, trace.dropout_mask) + grad_embeddings
    d_pooled, grads["fc_embed.w"], grads["fc_embed.b"] = layers.affine_backward(d_embed, trace.embed_cache)
    dx = layers.gap_backward(d_pooled, trace.gap_cache)
    for i in range(model.num_convs, 0, -1):
        dx = layers.relu_backward(dx, trace.relu_caches[i - 1])
        dx, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv_backward(dx, trace.conv_caches[i - 1], need_dx=i > 1)
    return {name: grads[name] for name in model.params}
