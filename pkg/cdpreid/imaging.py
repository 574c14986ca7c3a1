"""
Pixel-level operations on ``ImageTensor`` values: gray conversion, spectrum
extraction, infrared brightness jitter, channel expansion and normalization.

Every function is pure. Randomness only enters through an explicit
``numpy.random.Generator`` or the seed held by a ``JitterConfig``.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from .configclass import configclass, field
from .enums import SPECTRA, SpectrumTag, ValueDomain
from .errors import InvalidInputError

log = logging.getLogger(__name__)

# BT.601 luma weights for R, G and B.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_CHANNEL_INDEX = {SpectrumTag.R: 0, SpectrumTag.G: 1, SpectrumTag.B: 2}


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """
    An H x W x C pixel array with its value domain and, for generated
    images, the spectrum it was generated in.

    ``u8`` images hold ``numpy.uint8`` data in [0, 255]; ``unit-float``
    images hold ``numpy.float64`` data in [0, 1].
    """
    data: np.ndarray
    domain: ValueDomain = ValueDomain.U8
    tag: Optional[SpectrumTag] = None

    def __post_init__(self):
        data = self.data
        if not isinstance(data, np.ndarray) or data.ndim != 3:
            raise InvalidInputError(f"image data must be an H x W x C array, got {getattr(data, 'shape', type(data))}")
        if data.shape[2] not in (1, 3):
            raise InvalidInputError(f"images have 1 or 3 channels, got {data.shape[2]}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f"empty image of shape {data.shape}")
        if self.domain is ValueDomain.U8:
            if data.dtype != np.uint8:
                raise InvalidInputError(f"u8 images must hold uint8 data, got {data.dtype}")
        else:
            if not np.issubdtype(data.dtype, np.floating):
                raise InvalidInputError(f"unit-float images must hold floating point data, got {data.dtype}")
            if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
                raise InvalidInputError("unit-float image values must lie in [0, 1]")

    @classmethod
    def from_array(cls, array, domain: ValueDomain = ValueDomain.U8, tag: Optional[SpectrumTag] = None) -> "ImageTensor":
        """
        Build an image from a 2-D (single channel) or 3-D array.
        """
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[:, :, None]
        if domain is ValueDomain.U8 and array.dtype != np.uint8:
            if np.any(array < 0) or np.any(array > 255) or np.any(array != np.round(array)):
                raise InvalidInputError("u8 pixel values must be integers in [0, 255]")
            array = array.astype(np.uint8)
        return cls(np.ascontiguousarray(array), domain, tag)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_tag(self, tag: Optional[SpectrumTag]) -> "ImageTensor":
        return ImageTensor(self.data, self.domain, tag)

    def __repr__(self):
        return f"ImageTensor({self.height}x{self.width}x{self.channels}, {self.domain.value}, tag={self.tag})"


@configclass
class JitterConfig:
    delta: float = field(default=0.1, validator=lambda d: 0.0 <= d < 1.0,
                         doc="infrared brightness jitter ratio")
    rng_seed: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def _require(img: ImageTensor, channels: int, op: str) -> None:
    if not isinstance(img, ImageTensor):
        raise InvalidInputError(f"{op} expects an ImageTensor, got {type(img).__name__}")
    if img.channels != channels:
        raise InvalidInputError(f"{op} expects a {channels}-channel image, got {img.channels} channels")


def _require_u8(img: ImageTensor, op: str) -> None:
    if img.domain is not ValueDomain.U8:
        raise InvalidInputError(f"{op} expects a u8 image, got {img.domain.value}")


def to_gray(img: ImageTensor) -> ImageTensor:
    """
    BT.601 gray-scale image of a 3-channel u8 image, rounded half up.
    """
    _require(img, 3, "to_gray")
    _require_u8(img, "to_gray")
    rgb = img.data.astype(np.float64)
    gray = GRAY_WEIGHTS[0] * rgb[..., 0] + GRAY_WEIGHTS[1] * rgb[..., 1] + GRAY_WEIGHTS[2] * rgb[..., 2]
    gray = np.clip(_round_half_up(gray), 0, 255).astype(np.uint8)
    return ImageTensor(gray[:, :, None], ValueDomain.U8, SpectrumTag.X)


def extract_channel(img: ImageTensor, which: SpectrumTag) -> ImageTensor:
    """
    Single channel ``which`` (R, G or B) of a 3-channel image, values untouched.
    """
    _require(img, 3, "extract_channel")
    if which not in _CHANNEL_INDEX:
        raise InvalidInputError(f"channel selector must be one of R, G, B, got {which!r}")
    channel = img.data[:, :, _CHANNEL_INDEX[which]]
    return ImageTensor(np.ascontiguousarray(channel[:, :, None]), img.domain, which)


def generate_spectrum_image(img: ImageTensor, spectrum: SpectrumTag) -> ImageTensor:
    """
    Cross-spectrum image of a visible image: one of its color channels or
    its gray-scale image, tagged with the chosen spectrum.
    """
    if spectrum is SpectrumTag.X:
        return to_gray(img)
    if spectrum not in SPECTRA:
        raise InvalidInputError(f"spectrum must be one of R, G, B, X, got {spectrum!r}")
    return extract_channel(img, spectrum)


def jitter_infrared(img: ImageTensor, cfg: JitterConfig,
                    rng: Optional[np.random.Generator] = None,
                    factor: Optional[float] = None) -> ImageTensor:
    """
    Scale the brightness of a single-channel infrared image by one factor
    drawn from Uniform[1 - delta, 1 + delta], then round and clamp to u8.

    :param rng: generator to draw the factor from, defaults to ``cfg.rng()``.
    :param factor: use this factor instead of drawing one.
    """
    _require(img, 1, "jitter_infrared")
    _require_u8(img, "jitter_infrared")
    if not 0.0 <= cfg.delta < 1.0:
        raise InvalidInputError(f"jitter delta must lie in [0, 1), got {cfg.delta}")
    if factor is None:
        if cfg.delta == 0.0:
            return img.with_tag(SpectrumTag.IRJitter)
        rng = rng if rng is not None else cfg.rng()
        factor = rng.uniform(1.0 - cfg.delta, 1.0 + cfg.delta)
    scaled = _round_half_up(img.data.astype(np.float64) * factor)
    data = np.clip(scaled, 0, 255).astype(np.uint8)
    return ImageTensor(data, ValueDomain.U8, SpectrumTag.IRJitter)


def expand_channels(img: ImageTensor) -> ImageTensor:
    """
    Duplicate a single-channel image into three identical channels.
    """
    _require(img, 1, "expand_channels")
    return ImageTensor(np.repeat(img.data, 3, axis=2), img.domain, img.tag)


def normalize(img: ImageTensor) -> ImageTensor:
    """
    Map a u8 image onto unit-float values.
    """
    _require_u8(img, "normalize")
    return ImageTensor(img.data.astype(np.float64) / 255.0, ValueDomain.UnitFloat, img.tag)


def resize_nearest(img: ImageTensor, size: Tuple[int, int]) -> ImageTensor:
    """
    Nearest-neighbour resize to ``size`` = (height, width).
    """
    height, width = size
    if height < 1 or width < 1:
        raise InvalidInputError(f"target size must be positive, got {size}")
    if (height, width) == (img.height, img.width):
        return img
    rows = (np.arange(height) * img.height) // height
    cols = (np.arange(width) * img.width) // width
    return ImageTensor(np.ascontiguousarray(img.data[rows][:, cols]), img.domain, img.tag)


def hflip(img: ImageTensor) -> ImageTensor:
    """
    Mirror an image left to right.
    """
    return ImageTensor(np.ascontiguousarray(img.data[:, ::-1]), img.domain, img.tag)


def to_network_input(images: Iterable[ImageTensor]) -> np.ndarray:
    """
    Stack 3-channel u8 images into a normalized N x 3 x H x W float64 batch.
    """
    arrays = []
    for img in images:
        _require(img, 3, "to_network_input")
        arrays.append(normalize(img).data)
    if not arrays:
        raise InvalidInputError("cannot build a batch from zero images")
    return np.ascontiguousarray(np.stack(arrays).transpose(0, 3, 1, 2))
