"""
Identity-balanced PK batch sampling, dual-subspace pairing and dynamic hard
spectrum mining (DHSM).

Each visible original in a batch is paired with one cross-spectrum image of
itself, its spectrum drawn from the current ``SpectrumDistribution``; each
infrared original is paired with a brightness-jittered copy. DHSM measures
how confidently the classifier recognises generated images of every spectrum
during an epoch, and shifts sampling probability towards the spectra it
recognises worst.
"""

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .configclass import configclass, field
from .dataset import DatasetManifest, SampleRecord
from .enums import SPECTRA, Modality, SpectrumTag
from .errors import InvalidInputError
from .imaging import (
    ImageTensor,
    JitterConfig,
    expand_channels,
    generate_spectrum_image,
    jitter_infrared,
    to_network_input,
)

log = logging.getLogger(__name__)

Seed = Union[int, np.random.Generator, None]


def _spectra_subset(spectra) -> bool:
    return len(spectra) > 0 and len(set(spectra)) == len(spectra) and all(q in SPECTRA for q in spectra)


@configclass
class SamplerConfig:
    P: int = field(default=16, validator=lambda p: p >= 2, doc="persons per batch")
    K: int = field(default=4, validator=lambda k: k >= 2, doc="images per person")
    rng_seed: int = 0


@configclass
class DHSMConfig:
    alpha: float = field(default=0.1, validator=lambda a: 0.0 <= a <= 1.0, doc="weight of the previous distribution")
    enabled: bool = True
    spectra: Tuple[SpectrumTag, ...] = field(default=SPECTRA, validator=_spectra_subset,
                                             doc="candidate spectra for generated images")


@dataclass(frozen=True, eq=False)
class SpectrumDistribution:
    """
    Sampling probabilities over the spectra R, G, B and X.
    """
    probs: Mapping[SpectrumTag, float]

    def __post_init__(self):
        unknown = set(self.probs) - set(SPECTRA)
        if unknown:
            raise ValueError(f"spectrum distribution over unknown spectra: {sorted(q.name for q in unknown)}")
        full = {q: float(self.probs.get(q, 0.0)) for q in SPECTRA}
        values = np.array(list(full.values()))
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError(f"spectrum probabilities must be finite and non-negative, got {full}")
        if abs(values.sum() - 1.0) > 1e-9:
            raise ValueError(f"spectrum probabilities must sum to 1, got {values.sum()!r}")
        object.__setattr__(self, "probs", full)

    @classmethod
    def uniform(cls, spectra: Sequence[SpectrumTag] = SPECTRA) -> "SpectrumDistribution":
        return cls({q: 1.0 / len(spectra) for q in spectra})

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "SpectrumDistribution":
        return cls(dict(zip(SPECTRA, (float(v) for v in values))))

    def as_array(self) -> np.ndarray:
        return np.array([self.probs[q] for q in SPECTRA])

    def __getitem__(self, spectrum: SpectrumTag) -> float:
        return self.probs[spectrum]

    def __repr__(self):
        inner = ", ".join(f"{q.name}={p:.4f}" for q, p in self.probs.items())
        return f"SpectrumDistribution({inner})"


@dataclass
class SpectrumStats:
    """
    Per-spectrum sums of target-class probabilities of generated images,
    accumulated over one epoch.
    """
    sums: Dict[SpectrumTag, float] = dataclass_field(default_factory=lambda: {q: 0.0 for q in SPECTRA})
    counts: Dict[SpectrumTag, int] = dataclass_field(default_factory=lambda: {q: 0 for q in SPECTRA})
    total: int = 0

    def record(self, spectrum: SpectrumTag, target_prob: float) -> None:
        if spectrum not in SPECTRA:
            raise ValueError(f"only R, G, B and X images are tracked, got {spectrum!r}")
        if not 0.0 <= target_prob <= 1.0:
            raise ValueError(f"target probability must lie in [0, 1], got {target_prob!r}")
        self.sums[spectrum] += float(target_prob)
        self.counts[spectrum] += 1
        self.total += 1

    def mean(self, spectrum: SpectrumTag) -> Optional[float]:
        if self.counts[spectrum] == 0:
            return None
        return self.sums[spectrum] / self.counts[spectrum]


def record_confidence(stats: SpectrumStats, spectrum_tag: SpectrumTag, target_prob: float) -> SpectrumStats:
    stats.record(spectrum_tag, target_prob)
    return stats


def spectrum_confidence(stats: SpectrumStats, spectra: Sequence[SpectrumTag] = SPECTRA,
                        fallback: Optional[Mapping[SpectrumTag, float]] = None) -> Dict[SpectrumTag, float]:
    """
    Mean target-class probability R_q of every spectrum in ``spectra``.

    A spectrum with no samples this epoch keeps its ``fallback`` value from
    the previous epoch; without one it takes the mean of the measured
    spectra, or 0 when nothing was measured.
    """
    measured = {q: stats.mean(q) for q in spectra}
    known = [r for r in measured.values() if r is not None]
    neutral = float(np.mean(known)) if known else 0.0
    confidence = {}
    for q, r in measured.items():
        if r is None:
            r = fallback[q] if fallback is not None and q in fallback else neutral
        confidence[q] = r
    return confidence


def hard_spectrum_distribution(confidence: Mapping[SpectrumTag, float]) -> SpectrumDistribution:
    """
    Raw distribution with probability proportional to 1 - R_q. When every
    spectrum is recognised perfectly, falls back to uniform.
    """
    spectra = list(confidence)
    weights = np.array([1.0 - confidence[q] for q in spectra])
    total = weights.sum()
    if total <= 0.0:
        return SpectrumDistribution.uniform(spectra)
    return SpectrumDistribution({q: w / total for q, w in zip(spectra, weights)})


def blend(prev: SpectrumDistribution, raw: SpectrumDistribution, alpha: float) -> SpectrumDistribution:
    mixed = alpha * prev.as_array() + (1.0 - alpha) * raw.as_array()
    return SpectrumDistribution.from_array(mixed / mixed.sum())


def dhsm_update(stats: SpectrumStats, prev: SpectrumDistribution, cfg: DHSMConfig,
                fallback: Optional[Mapping[SpectrumTag, float]] = None) -> SpectrumDistribution:
    """
    Distribution for the next epoch: the distribution used this epoch blended
    with the raw hard-spectrum distribution measured this epoch.
    """
    raw = hard_spectrum_distribution(spectrum_confidence(stats, cfg.spectra, fallback))
    return blend(prev, raw, cfg.alpha)


def dhsm_sample_spectrum(dist: SpectrumDistribution, seed: Seed = None) -> SpectrumTag:
    """
    Categorical draw by inverse CDF over the order R, G, B, X.
    """
    rng = np.random.default_rng(seed)
    probs = dist.as_array()
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, rng.random(), side="right"))
    if index >= len(SPECTRA):
        # u landed above a cdf that rounds short of 1
        index = int(np.flatnonzero(probs > 0.0)[-1])
    return SPECTRA[index]


def pk_sample(manifest: DatasetManifest, cfg: SamplerConfig, seed: Seed = None) -> List[Tuple[SampleRecord, int]]:
    """
    Draw P distinct persons and K images of each. Persons with fewer than K
    images are drawn with replacement.
    """
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    groups = manifest.indices_by_label()
    if len(groups) < cfg.P:
        raise ValueError(f"PK sampling needs at least P={cfg.P} persons, manifest has {len(groups)}")
    persons = rng.choice(sorted(groups), size=cfg.P, replace=False)
    batch = []
    for label in persons:
        indices = groups[int(label)]
        for index in rng.choice(indices, size=cfg.K, replace=len(indices) < cfg.K):
            batch.append((manifest.records[int(index)], int(label)))
    return batch


def random_sample(manifest: DatasetManifest, batch_size: int, seed: Seed = None) -> List[Tuple[SampleRecord, int]]:
    """
    Identity-agnostic batch of distinct images drawn uniformly.
    """
    rng = np.random.default_rng(seed)
    size = min(batch_size, len(manifest))
    indices = rng.choice(len(manifest), size=size, replace=False)
    return [(manifest.records[int(i)], int(manifest.labels[int(i)])) for i in indices]


@dataclass(frozen=True, eq=False)
class Original:
    """
    A sampled training image as loaded: 3 channels for visible, 1 for infrared.
    """
    record: SampleRecord
    label: int
    image: ImageTensor

    def network_image(self) -> ImageTensor:
        expected = 3 if self.record.modality is Modality.Visible else 1
        if self.image.channels != expected:
            raise InvalidInputError(f"{self.record.image_path}: {self.record.modality.name} image "
                                    f"with {self.image.channels} channels")
        if self.record.modality is Modality.Visible:
            return self.image.with_tag(SpectrumTag.OriginalRGB)
        return expand_channels(self.image).with_tag(SpectrumTag.OriginalIR)


@dataclass(eq=False)
class PairedBatch:
    """
    Training batch: the originals first, then one generated counterpart per
    original. ``origin_index[i]`` is the original generated image ``i`` was
    made from. Unpaired batches have no generated half.
    """
    originals: List[ImageTensor]
    labels: np.ndarray
    modalities: List[Modality]
    generated: List[ImageTensor]
    origin_index: np.ndarray

    @classmethod
    def unpaired(cls, originals: Sequence[Original]) -> "PairedBatch":
        return cls([o.network_image() for o in originals],
                   np.array([o.label for o in originals], dtype=np.int64),
                   [o.record.modality for o in originals],
                   [], np.zeros(0, dtype=np.int64))

    @property
    def num_originals(self) -> int:
        return len(self.originals)

    def __len__(self) -> int:
        return len(self.originals) + len(self.generated)

    @property
    def generated_tags(self) -> List[SpectrumTag]:
        return [img.tag for img in self.generated]

    def all_labels(self) -> np.ndarray:
        return np.concatenate([self.labels, self.labels[self.origin_index]])

    def network_input(self) -> np.ndarray:
        return to_network_input(self.originals + self.generated)


def make_pairs(originals: Sequence[Original], dist: SpectrumDistribution, jitter: JitterConfig,
               seed: Seed = None) -> PairedBatch:
    """
    Pair every original with a generated image of identical appearance in
    another spectrum, doubling the batch.
    """
    rng = np.random.default_rng(seed)
    generated = []
    for original in originals:
        if original.record.modality is Modality.Visible:
            spectrum = dhsm_sample_spectrum(dist, rng)
            image = generate_spectrum_image(original.image, spectrum)
        else:
            image = jitter_infrared(original.image, jitter, rng)
        generated.append(expand_channels(image))

    batch = PairedBatch.unpaired(originals)
    batch.generated = generated
    batch.origin_index = np.arange(len(originals), dtype=np.int64)
    return batch
