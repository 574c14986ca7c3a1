"""
Enums shared across the package. Every enum here can be populated from a
config file, an environment variable or a command line flag by its
case-insensitive name or value, see ``cdpreid.conversions.EnumConversionRegistry``.
"""

import logging
from enum import Enum


class LogLevel(Enum):
    """
    Python logging module log level constants represented as an ``enum.Enum``.
    """
    NotSet = logging.NOTSET
    Debug = logging.DEBUG
    Info = logging.INFO
    Warning = logging.WARNING
    Error = logging.ERROR
    Critical = logging.CRITICAL


class ValueDomain(Enum):
    """
    Range of the pixel values held by an ``ImageTensor``.
    """
    U8 = "u8"
    UnitFloat = "unit-float"


class Modality(Enum):
    Visible = "visible"
    Infrared = "infrared"

    @property
    def other(self) -> "Modality":
        return Modality.Infrared if self is Modality.Visible else Modality.Visible


class SpectrumTag(Enum):
    """
    Where an image in a training batch came from. Generated images carry
    exactly one of R, G, B, X or IRJitter.
    """
    R = "R"
    G = "G"
    B = "B"
    X = "X"
    IRJitter = "IRJitter"
    OriginalRGB = "OriginalRGB"
    OriginalIR = "OriginalIR"


# Candidate spectra of cross-spectrum generation, in sampling order.
SPECTRA = (SpectrumTag.R, SpectrumTag.G, SpectrumTag.B, SpectrumTag.X)


class IrTransform(Enum):
    """
    Mapping from a gray render to a simulated infrared image.
    """
    GammaNoise = "gamma-noise"
    Gray = "gray"
    Inverted = "inverted"


class Mode(Enum):
    Train = "train"
    Eval = "eval"


class CeNormalization(Enum):
    MeanOverSamples = "mean"
    PerClass = "per-class"


class GalleryMode(Enum):
    All = "all"
    SingleShotPerIdPerCamera = "single-shot"


class Direction(Enum):
    """
    Retrieval direction, query modality first.
    """
    VisibleToThermal = "v2t"
    ThermalToVisible = "t2v"

    @property
    def query_modality(self) -> Modality:
        return Modality.Visible if self is Direction.VisibleToThermal else Modality.Infrared

    @property
    def gallery_modality(self) -> Modality:
        return self.query_modality.other

    @classmethod
    def from_query(cls, query: Modality) -> "Direction":
        return cls.VisibleToThermal if query is Modality.Visible else cls.ThermalToVisible
