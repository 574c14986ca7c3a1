"""
Cross-modality retrieval evaluation: embedding extraction, Euclidean
distance matrices, CMC and mAP, the repeated-trial protocol and the report
files (CSV, Markdown, SVG plots).
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import model as net  # noqa: E402
from .configclass import configclass, field  # noqa: E402
from .dataset import DatasetManifest, ImageStore, SampleRecord  # noqa: E402
from .enums import Direction, GalleryMode, Modality, Mode  # noqa: E402
from .errors import InvalidInputError  # noqa: E402
from .imaging import expand_channels, to_network_input  # noqa: E402
from .model import EmbeddingModel  # noqa: E402

log = logging.getLogger(__name__)

RANKS = (1, 10, 20)
METRICS = ("r1", "r10", "r20", "mAP")

plt.rcParams["svg.hashsalt"] = "cdpreid"


@configclass
class ProtocolConfig:
    query_modality: Modality = Modality.Visible
    gallery_modality: Modality = Modality.Infrared
    num_trials: int = field(default=10, validator=lambda n: n >= 1)
    gallery_mode: GalleryMode = GalleryMode.All
    rng_seed: int = 0

    def __post_init__(self):
        if self.query_modality is self.gallery_modality:
            raise ValueError(f"query and gallery modality are both {self.query_modality.name}")

    @property
    def direction(self) -> Direction:
        return Direction.from_query(self.query_modality)

    @classmethod
    def for_direction(cls, direction: Direction, **kwargs) -> "ProtocolConfig":
        return cls(query_modality=direction.query_modality, gallery_modality=direction.gallery_modality, **kwargs)


@dataclass(frozen=True, eq=False)
class Embeddings:
    """
    Row ``i`` of ``features`` embeds ``records[i]``.
    """
    features: np.ndarray
    records: Tuple[SampleRecord, ...]

    @property
    def person_ids(self) -> np.ndarray:
        return np.array([r.person_id for r in self.records], dtype=np.int64)

    @property
    def camera_ids(self) -> np.ndarray:
        return np.array([r.camera_id for r in self.records], dtype=np.int64)

    @property
    def modalities(self) -> List[Modality]:
        return [r.modality for r in self.records]

    def select(self, indices: Sequence[int]) -> "Embeddings":
        indices = np.asarray(indices, dtype=np.int64)
        return Embeddings(self.features[indices], tuple(self.records[i] for i in indices))

    def indices_of(self, modality: Modality) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if r.modality is modality], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)


def extract_embeddings(model: EmbeddingModel, records: Sequence[SampleRecord], store: Optional[ImageStore] = None,
                       batch_size: int = 64) -> Embeddings:
    """
    Eval-mode embeddings of ``records``. Infrared images are channel
    expanded, visible images go in as RGB.
    """
    if not records:
        raise InvalidInputError("no records to embed")
    store = store if store is not None else ImageStore(model.config.input_size[:2])
    chunks = []
    for start in range(0, len(records), batch_size):
        images = []
        for record in records[start:start + batch_size]:
            image = store.load(record)
            images.append(expand_channels(image) if record.modality is Modality.Infrared else image)
        chunks.append(net.forward(model, to_network_input(images), Mode.Eval).embeddings)
    return Embeddings(np.concatenate(chunks), tuple(records))


def distance_matrix(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """
    Euclidean distances between every query row and every gallery row.
    """
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise InvalidInputError(f"cannot compare {query.shape} queries with {gallery.shape} gallery features")
    diff = query[:, None, :] - gallery[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def cmc_map(dist: np.ndarray, query_labels: np.ndarray, gallery_labels: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    CMC curve over ranks 1..g and mean average precision.

    The gallery is ranked per query by a stable ascending sort of distances,
    so ties keep gallery order. AP is not interpolated.

    :raises ValueError: naming the first query without a same-label gallery item.
    """
    num_q, num_g = dist.shape
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if query_labels.shape != (num_q,) or gallery_labels.shape != (num_g,):
        raise InvalidInputError(f"labels {query_labels.shape}, {gallery_labels.shape} do not match distances {dist.shape}")
    hits = np.zeros(num_g, dtype=np.int64)
    aps = []
    for i in range(num_q):
        order = np.argsort(dist[i], kind="stable")
        matches = gallery_labels[order] == query_labels[i]
        if not matches.any():
            raise ValueError(f"query {i} (label {query_labels[i]}) has no matching gallery item")
        hits[int(np.argmax(matches)):] += 1
        ranks = np.flatnonzero(matches)
        found = np.cumsum(matches)[ranks]
        aps.append(np.mean(found / (ranks + 1)))
    return hits / num_q, float(np.mean(aps))


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial: int
    cmc: np.ndarray
    mAP: float

    def at_rank(self, rank: int) -> float:
        # galleries smaller than ``rank`` report their last rank
        return float(self.cmc[min(rank, len(self.cmc)) - 1])

    def metrics(self) -> Dict[str, float]:
        values = {f"r{rank}": self.at_rank(rank) for rank in RANKS}
        values["mAP"] = self.mAP
        return values


@dataclass(frozen=True, eq=False)
class EvalReport:
    direction: Direction
    trials: Tuple[TrialResult, ...]
    ranks_reported: Tuple[int, ...] = RANKS

    @property
    def cmc(self) -> np.ndarray:
        return np.mean([t.cmc for t in self.trials], axis=0)

    @property
    def map(self) -> float:
        return self.mean("mAP")

    def values(self, metric: str) -> np.ndarray:
        return np.array([t.metrics()[metric] for t in self.trials])

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def std(self, metric: str) -> float:
        return float(np.std(self.values(metric)))


def single_shot_gallery(embeddings: Embeddings, candidates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    One randomly chosen candidate per (person, camera), in sorted key order.
    """
    groups: Dict[Tuple[int, int], List[int]] = {}
    for index in candidates:
        record = embeddings.records[int(index)]
        groups.setdefault((record.person_id, record.camera_id), []).append(int(index))
    return np.array([rng.choice(groups[key]) for key in sorted(groups)], dtype=np.int64)


def run_protocol(model: Optional[EmbeddingModel], test_manifest: DatasetManifest, cfg: ProtocolConfig,
                 embeddings: Optional[Embeddings] = None, store: Optional[ImageStore] = None) -> EvalReport:
    """
    Repeated-trial retrieval of ``cfg.query_modality`` images against a
    ``cfg.gallery_modality`` gallery. Every trial seeds its gallery draw with
    ``(cfg.rng_seed, trial)``.

    :param embeddings: embeddings of ``test_manifest.records``, extracted
        with ``model`` when not given.
    """
    if embeddings is None:
        if model is None:
            raise ValueError("run_protocol needs a model or precomputed embeddings")
        embeddings = extract_embeddings(model, test_manifest.records, store)
    queries = embeddings.indices_of(cfg.query_modality)
    candidates = embeddings.indices_of(cfg.gallery_modality)
    if not len(queries) or not len(candidates):
        raise ValueError(f"the test set needs both {cfg.query_modality.name} and {cfg.gallery_modality.name} images")
    query_labels = embeddings.person_ids[queries]

    trials = []
    for trial in range(cfg.num_trials):
        if cfg.gallery_mode is GalleryMode.All:
            gallery = candidates
        else:
            gallery = single_shot_gallery(embeddings, candidates, np.random.default_rng([cfg.rng_seed, trial]))
        dist = distance_matrix(embeddings.features[queries], embeddings.features[gallery])
        cmc, mean_ap = cmc_map(dist, query_labels, embeddings.person_ids[gallery])
        result = TrialResult(trial, cmc, mean_ap)
        trials.append(result)
        log.info("%s trial %d: r1 %.4f r10 %.4f r20 %.4f mAP %.4f", cfg.direction.value, trial,
                 *(result.metrics()[m] for m in METRICS))
    return EvalReport(cfg.direction, tuple(trials))


def _fmt(value: float) -> str:
    return repr(float(value))


def write_report_csv(path: str, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("trial", "direction") + METRICS)
        for report in reports:
            for trial in report.trials:
                metrics = trial.metrics()
                writer.writerow([trial.trial, report.direction.value] + [_fmt(metrics[m]) for m in METRICS])
            writer.writerow(["mean", report.direction.value] + [_fmt(report.mean(m)) for m in METRICS])
            writer.writerow(["std", report.direction.value] + [_fmt(report.std(m)) for m in METRICS])


def write_report_markdown(path: str, reports: Sequence[EvalReport]) -> None:
    lines = ["| Direction | Trials | r=1 | r=10 | r=20 | mAP |", "| --- | --- | --- | --- | --- | --- |"]
    for report in reports:
        cells = [f"{100 * report.mean(m):.2f} ± {100 * report.std(m):.2f}" for m in METRICS]
        lines.append(f"| {report.direction.value} | {len(report.trials)} | " + " | ".join(cells) + " |")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _save_svg(fig, path: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_cmc(path: str, report: EvalReport) -> None:
    cmc = report.cmc
    ranks = np.arange(1, len(cmc) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ranks, cmc, marker=".", label=report.direction.value)
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"CMC ({report.direction.value}, {len(report.trials)} trials)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    _save_svg(fig, path)


def principal_components(features: np.ndarray, count: int = 2) -> np.ndarray:
    """
    Projection onto the top principal components, signs fixed so the largest
    loading of every component is positive.
    """
    centered = features - features.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:count]
    signs = np.sign(components[np.arange(len(components)), np.abs(components).argmax(axis=1)])
    signs[signs == 0] = 1.0
    projected = centered @ (components * signs[:, None]).T
    if projected.shape[1] < count:
        projected = np.pad(projected, ((0, 0), (0, count - projected.shape[1])))
    return projected


def plot_embedding_scatter(path: str, embeddings: Embeddings) -> int:
    """
    2-D scatter of the embeddings, colored by person and marked by modality.

    :returns: the number of points drawn.
    """
    points = principal_components(embeddings.features)
    persons = embeddings.person_ids
    colors = plt.get_cmap("tab20")(np.searchsorted(np.unique(persons), persons) % 20)
    fig, ax = plt.subplots(figsize=(6, 6))
    for modality, marker in ((Modality.Visible, "o"), (Modality.Infrared, "^")):
        index = embeddings.indices_of(modality)
        if len(index):
            ax.scatter(points[index, 0], points[index, 1], c=colors[index], marker=marker, s=18,
                       label=modality.value, edgecolors="none")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(loc="best")
    _save_svg(fig, path)
    return len(points)


def emit_report(reports: Sequence[EvalReport], out_dir: str, embeddings: Optional[Embeddings] = None) -> List[str]:
    """
    Write ``report.csv``, ``report.md``, one ``cmc_<direction>.svg`` per
    report and, when ``embeddings`` are given, ``embedding_scatter.svg``.

    :returns: the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "report.csv"), os.path.join(out_dir, "report.md")]
    write_report_csv(paths[0], reports)
    write_report_markdown(paths[1], reports)
    for report in reports:
        path = os.path.join(out_dir, f"cmc_{report.direction.value}.svg")
        plot_cmc(path, report)
        paths.append(path)
    if embeddings is not None:
        path = os.path.join(out_dir, "embedding_scatter.svg")
        plot_embedding_scatter(path, embeddings)
        paths.append(path)
    log.info("wrote report to %s", out_dir)
    return paths
