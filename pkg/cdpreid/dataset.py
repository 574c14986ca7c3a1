"""
Dataset manifests, image loading, identity-disjoint splits and the synthetic
cross-modality dataset generator.

A manifest is a header-less CSV with one image per line::

    image_path,person_id,camera_id,modality

Relative image paths are resolved against the directory holding the manifest.
"""

import csv
import io
import logging
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb

from . import pnm
from .configclass import configclass, field
from .conversions import ENUMS
from .enums import IrTransform, Modality, ValueDomain
from .errors import ManifestError
from .imaging import ImageTensor, resize_nearest, to_gray

log = logging.getLogger(__name__)

ENUMS.add_enum(Modality)

_GOLDEN = 0.618033988749895
_SILVER = 0.414213562373095
_ROOT3 = 0.732050807568877

# Camera labels of the synthetic corpus: two visible cameras, one infrared.
VISIBLE_CAMERAS = (0, 1)
INFRARED_CAMERA = 2


@dataclass(frozen=True)
class SampleRecord:
    """
    One dataset entry. ``person_id`` is the id written in the manifest; the
    contiguous class label is held by the manifest.
    """
    person_id: int
    camera_id: int
    modality: Modality
    image_path: str


class DatasetManifest:
    """
    An ordered collection of ``SampleRecord`` entries with person ids
    remapped to contiguous labels 0..M-1 (sorted by raw id).
    """
    def __init__(self, records: Iterable[SampleRecord], require_both_modalities: bool = True):
        self.records: Tuple[SampleRecord, ...] = tuple(records)
        if not self.records:
            raise ManifestError("empty manifest")
        raw_ids = sorted({record.person_id for record in self.records})
        self.id_mapping: Dict[int, int] = {raw: label for label, raw in enumerate(raw_ids)}
        self.labels = np.array([self.id_mapping[r.person_id] for r in self.records], dtype=np.int64)
        self._validate(require_both_modalities)

    def _validate(self, require_both_modalities: bool) -> None:
        seen: Dict[str, int] = {}
        for index, record in enumerate(self.records):
            if record.person_id < 0:
                raise ManifestError(f"record {index}: negative person id {record.person_id}")
            if record.image_path in seen:
                raise ManifestError(f"record {index}: duplicate image path {record.image_path!r} "
                                    f"(first seen in record {seen[record.image_path]})")
            seen[record.image_path] = index
        if require_both_modalities:
            for raw, modalities in sorted(self.modalities_by_person().items()):
                missing = {Modality.Visible, Modality.Infrared} - modalities
                if missing:
                    names = ", ".join(sorted(m.name for m in missing))
                    raise ManifestError(f"person {raw} has no {names} images")

    @property
    def num_persons(self) -> int:
        return len(self.id_mapping)

    @property
    def person_ids(self) -> List[int]:
        return sorted(self.id_mapping)

    def __len__(self) -> int:
        return len(self.records)

    def label(self, record: SampleRecord) -> int:
        return self.id_mapping[record.person_id]

    def modalities_by_person(self) -> Dict[int, Set[Modality]]:
        found: Dict[int, Set[Modality]] = defaultdict(set)
        for record in self.records:
            found[record.person_id].add(record.modality)
        return found

    def indices_by_label(self) -> Dict[int, List[int]]:
        groups: Dict[int, List[int]] = defaultdict(list)
        for index, label in enumerate(self.labels):
            groups[int(label)].append(index)
        return dict(groups)

    def with_modality(self, modality: Modality) -> List[SampleRecord]:
        return [record for record in self.records if record.modality is modality]

    def subset(self, person_ids: Iterable[int], require_both_modalities: bool = True) -> "DatasetManifest":
        keep = set(person_ids)
        return DatasetManifest([r for r in self.records if r.person_id in keep], require_both_modalities)

    def __repr__(self):
        return f"DatasetManifest({len(self.records)} records, {self.num_persons} persons)"


def load_manifest(path: str, require_both_modalities: bool = True) -> DatasetManifest:
    """
    Parse a manifest CSV.

    :raises ManifestError: on a missing file, a malformed line or duplicate
        image paths, with the offending line number.
    """
    if not os.path.exists(path):
        raise ManifestError(f"{path}: manifest file does not exist")
    base = os.path.dirname(path)
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        raise ManifestError(f"{path}: empty manifest")

    records: List[SampleRecord] = []
    lines: Dict[str, int] = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ManifestError(f"{path}:{lineno}: expected 4 fields "
                                f"(image_path,person_id,camera_id,modality), got {len(row)}")
        image_path, person_id, camera_id, modality = (cell.strip() for cell in row)
        try:
            pid, cam = int(person_id), int(camera_id)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: person_id and camera_id must be integers") from None
        if pid < 0:
            raise ManifestError(f"{path}:{lineno}: person_id must be >= 0, got {pid}")
        try:
            mod = ENUMS.to_enum(Modality, modality)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        if not image_path:
            raise ManifestError(f"{path}:{lineno}: empty image path")
        resolved = image_path if os.path.isabs(image_path) else os.path.normpath(os.path.join(base, image_path))
        if resolved in lines:
            raise ManifestError(f"{path}:{lineno}: duplicate image path {image_path!r} "
                                f"(first listed on line {lines[resolved]})")
        lines[resolved] = lineno
        records.append(SampleRecord(pid, cam, mod, resolved))

    try:
        manifest = DatasetManifest(records, require_both_modalities)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    log.info("loaded %s from %s", manifest, path)
    return manifest


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    """
    Write a manifest CSV, with image paths relative to its directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for record in manifest.records:
            rel = os.path.relpath(os.path.abspath(record.image_path), base).replace(os.sep, "/")
            writer.writerow([rel, record.person_id, record.camera_id, record.modality.value])


def split(manifest: DatasetManifest, train_fraction: float, seed: int) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Split by identity into disjoint train and test manifests.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = np.array(manifest.person_ids)
    order = np.random.default_rng(seed).permutation(ids)
    n_train = int(round(train_fraction * len(ids)))
    if n_train == 0 or n_train == len(ids):
        raise ManifestError(f"splitting {len(ids)} persons at {train_fraction} leaves one side empty")
    train_ids = {int(i) for i in order[:n_train]}
    test_ids = {int(i) for i in order[n_train:]}
    return manifest.subset(train_ids), manifest.subset(test_ids)


class ImageStore:
    """
    Loads record images, checks modality against channel count and resizes
    to the network input size. Loaded images are cached by path.
    """
    def __init__(self, size: Optional[Tuple[int, int]] = None):
        self.size = size
        self._cache: Dict[str, ImageTensor] = {}

    def load(self, record: SampleRecord) -> ImageTensor:
        img = self._cache.get(record.image_path)
        if img is None:
            img = pnm.read_image(record.image_path)
            expected = 3 if record.modality is Modality.Visible else 1
            if img.channels != expected:
                raise ManifestError(f"{record.image_path}: {record.modality.name} images have "
                                    f"{expected} channels, file has {img.channels}")
            if self.size is not None:
                img = resize_nearest(img, self.size)
            self._cache[record.image_path] = img
        return img


@configclass
class SynthConfig:
    num_persons: int = field(default=40, validator=lambda n: n >= 1)
    images_per_person_per_modality: int = field(default=10, validator=lambda n: n >= 1)
    image_size: Tuple[int, int] = field(default=(64, 32), validator=lambda s: s[0] >= 16 and s[1] >= 8)
    rng_seed: int = 7
    ir_transform: IrTransform = IrTransform.GammaNoise
    ir_gamma: float = field(default=0.7, validator=lambda g: g > 0)
    ir_noise_sigma: float = field(default=8.0, validator=lambda s: s >= 0)
    ir_contrast: float = field(default=0.7, validator=lambda c: 0 < c <= 1)


@dataclass(frozen=True, eq=False)
class IdentityPattern:
    """
    Appearance of one synthetic person, colors as float RGB in [0, 255].
    Stripes are (top, bottom, color) in fractions of the image height.
    """
    skin: np.ndarray
    shirt: np.ndarray
    pants: np.ndarray
    stripes: Tuple[Tuple[float, float, np.ndarray], ...]
    patch: Tuple[float, float, float, float, np.ndarray]


_LUMA = np.array([0.299, 0.587, 0.114])


def _color(hue: float, saturation: float, luminance: float) -> np.ndarray:
    """
    RGB color of ``hue`` and ``saturation`` whose gray conversion is
    ``luminance``. Colors too bright for the hue lose saturation instead.
    """
    base = hsv_to_rgb(np.array([hue % 1.0, saturation, 1.0])) * 255.0
    color = base * (luminance / float(base @ _LUMA))
    peak = color.max()
    if peak > 255.0:
        color = luminance + (255.0 - luminance) / (peak - luminance) * (color - luminance)
    return color


def _contrasting(level: float, offset: float) -> float:
    shifted = level - offset if level > 140.0 else level + offset
    return float(np.clip(shifted, 15.0, 245.0))


def identity_pattern(person_id: int, seed: int) -> IdentityPattern:
    """
    Deterministic appearance of ``person_id``: a base hue, shirt and pants
    gray levels spread over their ranges by irrational strides, 2 or 3 torso
    stripes and one rectangular patch whose geometry is seeded by the id.

    Only gray levels survive in infrared; the strides keep the (shirt, pants)
    levels of different persons apart.
    """
    rng = np.random.default_rng([seed, person_id, 0])
    hue = person_id * _GOLDEN + rng.uniform(0.0, 0.05)
    shirt_level = 55.0 + 175.0 * ((person_id * _SILVER + rng.uniform(0.0, 0.03)) % 1.0)
    pants_level = 25.0 + 150.0 * ((person_id * _ROOT3 + rng.uniform(0.0, 0.03)) % 1.0)
    shirt = _color(hue, rng.uniform(0.55, 0.95), shirt_level)
    pants = _color(hue + rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.8), pants_level)
    skin = _color(rng.uniform(0.02, 0.1), rng.uniform(0.3, 0.6), rng.uniform(120.0, 210.0))

    stripes = []
    count = 2 + person_id % 2
    edges = np.sort(rng.choice(np.arange(19, 55), size=2 * count, replace=False)) / 100.0
    for i in range(count):
        top, bottom = edges[2 * i], max(edges[2 * i + 1], edges[2 * i] + 0.03)
        # stripes contrast with the shirt so they survive in infrared
        level = _contrasting(shirt_level, 100.0 + rng.uniform(-20.0, 20.0))
        stripes.append((float(top), float(bottom), _color(hue + rng.uniform(0.2, 0.8), rng.uniform(0.3, 1.0), level)))

    left = rng.uniform(0.25, 0.55)
    top = rng.uniform(0.58, 0.8)
    patch_level = _contrasting(pants_level, 90.0 + rng.uniform(-20.0, 20.0))
    patch = (float(top), float(top + rng.uniform(0.06, 0.15)), float(left), float(left + rng.uniform(0.1, 0.2)),
             _color(hue + 0.5, rng.uniform(0.0, 1.0), patch_level))
    return IdentityPattern(skin, shirt, pants, tuple(stripes), patch)


def render_pattern(pattern: IdentityPattern, size: Tuple[int, int], background: float,
                   dy: float = 0.0, dx: float = 0.0) -> np.ndarray:
    """
    Float H x W x 3 render of a pattern shifted by (dy, dx) pixels.
    """
    height, width = size
    ys = (np.arange(height) - dy)[:, None] / height
    xs = (np.arange(width) - dx)[None, :] / width
    img = np.empty((height, width, 3))
    img[:] = background

    body = (xs >= 0.22) & (xs < 0.78)
    head = (ys >= 0.03) & (ys < 0.17) & (xs >= 0.36) & (xs < 0.64)
    torso = (ys >= 0.17) & (ys < 0.56) & body
    legs = (ys >= 0.56) & (ys < 0.97) & body & ~((xs >= 0.47) & (xs < 0.53))
    img[head] = pattern.skin
    img[torso] = pattern.shirt
    img[legs] = pattern.pants
    for top, bottom, color in pattern.stripes:
        img[torso & (ys >= top) & (ys < bottom)] = color
    top, bottom, left, right, color = pattern.patch
    img[legs & (ys >= top) & (ys < bottom) & (xs >= left) & (xs < right)] = color
    return img


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def infrared_from_gray(gray: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Simulated infrared response of a float gray render.
    """
    if cfg.ir_transform is IrTransform.Gray:
        return gray
    if cfg.ir_transform is IrTransform.Inverted:
        return 255.0 - gray
    response = 255.0 * (np.clip(gray, 0, 255) / 255.0) ** cfg.ir_gamma
    response = 128.0 + cfg.ir_contrast * (response - 128.0)
    return response + rng.normal(0.0, cfg.ir_noise_sigma, size=gray.shape)


def render_sample(pattern: IdentityPattern, cfg: SynthConfig, modality: Modality, camera_id: int,
                  rng: np.random.Generator) -> ImageTensor:
    """
    One perturbed image of a pattern: pose shift, illumination and noise.
    """
    dy = rng.uniform(-1.5, 1.5)
    dx = rng.uniform(-1.0, 1.0)
    illumination = rng.uniform(0.93, 1.07)
    background = 95.0 + 15.0 * camera_id
    rgb = render_pattern(pattern, cfg.image_size, background, dy, dx) * illumination
    if modality is Modality.Visible:
        rgb = rgb + rng.normal(0.0, 3.0, size=rgb.shape)
        return ImageTensor(_to_u8(rgb), ValueDomain.U8)
    gray = to_gray(ImageTensor(_to_u8(rgb), ValueDomain.U8)).data[:, :, 0].astype(np.float64)
    return ImageTensor(_to_u8(infrared_from_gray(gray, cfg, rng))[:, :, None], ValueDomain.U8)


def generate_synthetic(cfg: SynthConfig, out_dir: str) -> DatasetManifest:
    """
    Render a synthetic cross-modality corpus into ``out_dir`` laid out as
    ``person_<id>/<modality>_<camera>_<index>.(ppm|pgm)`` and return its
    manifest. The output is a pure function of ``cfg``.
    """
    records: List[SampleRecord] = []
    for person_id in range(cfg.num_persons):
        pattern = identity_pattern(person_id, cfg.rng_seed)
        person_dir = os.path.join(out_dir, f"person_{person_id:04d}")
        os.makedirs(person_dir, exist_ok=True)
        for stream, modality in enumerate((Modality.Visible, Modality.Infrared), start=1):
            for index in range(cfg.images_per_person_per_modality):
                camera = VISIBLE_CAMERAS[index % 2] if modality is Modality.Visible else INFRARED_CAMERA
                rng = np.random.default_rng([cfg.rng_seed, person_id, stream, index])
                img = render_sample(pattern, cfg, modality, camera, rng)
                path = os.path.join(person_dir, f"{modality.value}_{camera}_{index:02d}{pnm.suffix_for(img)}")
                pnm.write_image(path, img)
                records.append(SampleRecord(person_id, camera, modality, path))
        log.debug("rendered person %d", person_id)
    manifest = DatasetManifest(records)
    log.info("generated %s in %s", manifest, out_dir)
    return manifest


def base_pattern_images(person_id: int, cfg: SynthConfig) -> Tuple[ImageTensor, ImageTensor]:
    """
    Aligned, unperturbed visible and infrared renders of one person, used to
    measure the modality gap of the generator.
    """
    pattern = identity_pattern(person_id, cfg.rng_seed)
    rgb = render_pattern(pattern, cfg.image_size, 100.0)
    visible = ImageTensor(_to_u8(rgb), ValueDomain.U8)
    gray = to_gray(visible).data[:, :, 0].astype(np.float64)
    rng = np.random.default_rng([cfg.rng_seed, person_id, 0, 0])
    infrared = ImageTensor(_to_u8(infrared_from_gray(gray, cfg, rng))[:, :, None], ValueDomain.U8)
    return visible, infrared
