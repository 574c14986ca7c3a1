"""
Command line entry point: ``cdpreid synth | spectra | train | eval | ablate``.

Exit codes are 0 on success, 1 when a subcommand fails and 2 for usage or
configuration errors. Training configuration is layered, lowest priority
first: defaults, ``--preset``, ``--config`` (JSON or TOML), ``--set`` pairs,
then explicit flags.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__, pnm
from .checkpoint import load_checkpoint
from .configclass import configclass
from .conversions import csv_list, csv_pairs, nested
from .dataset import SynthConfig, generate_synthetic, load_manifest, save_manifest, split
from .enums import SPECTRA, Direction, GalleryMode, IrTransform, LogLevel, ValueDomain
from .errors import InvalidInputError
from .evaluation import METRICS, EvalReport, ProtocolConfig, emit_report, extract_embeddings, run_protocol
from .imaging import ImageTensor, expand_channels, generate_spectrum_image
from .optim import TrainConfig
from .presets import DEFAULT_ABLATION, preset_names, preset_source
from .sources import EnvironmentSource, MappingSource, Source, file_source
from .trainer import fit

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


@configclass
class RuntimeSettings:
    LOG: LogLevel = LogLevel.Info


class ConfigError(Exception):
    """Raised for invalid configuration; reported with exit code 2."""


def configure_logging(verbose: int, quiet: int, environ=os.environ) -> int:
    """
    Set the root log level from $CDP_LOG, stepped down by every -v and up by
    every -q.

    :raises ConfigError: when $CDP_LOG is not a log level.
    """
    try:
        settings = RuntimeSettings.from_sources(EnvironmentSource(namespace="CDP_", environ=environ))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    level = settings.LOG.value if settings.LOG is not LogLevel.NotSet else logging.INFO
    level = min(max(level + 10 * (quiet - verbose), logging.DEBUG), logging.CRITICAL)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    return level


def _config_sources(args) -> List[Source]:
    sources: List[Source] = []
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file {args.config} does not exist")
        try:
            sources.append(file_source(args.config))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"config file {args.config} is malformed: {exc}") from exc
    try:
        for pairs in getattr(args, "set", None) or []:
            sources.append(MappingSource(nested(csv_pairs(pairs))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return sources


def build_train_config(args, preset: Optional[str] = None) -> TrainConfig:
    """
    :raises ConfigError: on unknown presets, unknown keys or invalid values.
    """
    flags: Dict[str, Any] = {}
    if args.epochs is not None:
        flags["epochs"] = args.epochs
    if getattr(args, "batches_per_epoch", None) is not None:
        flags["batches_per_epoch"] = args.batches_per_epoch
    if getattr(args, "checkpoint_every", None) is not None:
        flags["checkpoint_every"] = args.checkpoint_every
    if getattr(args, "p", None) is not None:
        flags["sampler.P"] = args.p
    if getattr(args, "k", None) is not None:
        flags["sampler.K"] = args.k
    if getattr(args, "dhsm", None) is not None:
        flags["dhsm.enabled"] = args.dhsm == "on"
    if args.seed is not None:
        for key in ("rng_seed", "model.rng_seed", "sampler.rng_seed", "jitter.rng_seed"):
            flags[key] = args.seed
    try:
        sources = [preset_source(preset)] if preset else []
        sources += _config_sources(args)
        sources.append(MappingSource(nested(flags)))
        return TrainConfig.from_sources(*sources)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_synth(args) -> int:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.persons is not None:
        overrides["num_persons"] = args.persons
    if args.per_modality is not None:
        overrides["images_per_person_per_modality"] = args.per_modality
    if args.ir_transform is not None:
        overrides["ir_transform"] = args.ir_transform
    try:
        cfg = SynthConfig.from_sources(*_config_sources(args), MappingSource(overrides))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    manifest = generate_synthetic(cfg, args.out)
    train, test = split(manifest, args.train_fraction, cfg.rng_seed)
    save_manifest(train, os.path.join(args.out, "train.csv"))
    save_manifest(test, os.path.join(args.out, "test.csv"))
    print(f"wrote {len(manifest)} images of {manifest.num_persons} persons to {args.out} "
          f"({train.num_persons} train / {test.num_persons} test persons)")
    return 0


def contact_sheet(images: Sequence[ImageTensor]) -> ImageTensor:
    """
    Images side by side, single-channel ones expanded to RGB.
    """
    tiles = [img if img.channels == 3 else expand_channels(img) for img in images]
    return ImageTensor(np.concatenate([tile.data for tile in tiles], axis=1), ValueDomain.U8)


def cmd_spectra(args) -> int:
    image = pnm.read_image(args.image)
    if image.channels != 3:
        raise InvalidInputError(f"{args.image}: expected an RGB image, got {image.channels} channel(s)")
    os.makedirs(args.out, exist_ok=True)
    generated = []
    for spectrum in SPECTRA:
        spectral = generate_spectrum_image(image, spectrum)
        pnm.write_image(os.path.join(args.out, f"{spectrum.value}.pgm"), spectral)
        generated.append(spectral)
    pnm.write_image(os.path.join(args.out, "spectra.ppm"), contact_sheet([image] + generated))
    print(f"wrote R, G, B and X spectra of {args.image} to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(args, args.preset)
    manifest = load_manifest(args.train_manifest)
    result = fit(manifest, cfg, args.out, resume=args.resume)
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs, final loss {last['loss_total']:.4f}; wrote {os.path.join(args.out, 'model.ckpt')}")
    return 0


def _protocol(args, direction: Direction, sources: Sequence[Source]) -> ProtocolConfig:
    overrides = {"query_modality": direction.query_modality.name,
                 "gallery_modality": direction.gallery_modality.name}
    for key, value in (("num_trials", args.trials), ("gallery_mode", args.gallery_mode), ("rng_seed", args.seed)):
        if value is not None:
            overrides[key] = value
    try:
        return ProtocolConfig.from_sources(*sources, MappingSource(overrides))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _directions(value: str) -> List[Direction]:
    if value == "both":
        return [Direction.VisibleToThermal, Direction.ThermalToVisible]
    return [Direction(value)]


def evaluate_model(model, test_manifest, args, out_dir: str, sources: Sequence[Source] = (),
                   scatter: bool = False) -> List[EvalReport]:
    protocols = [_protocol(args, direction, sources) for direction in _directions(args.direction)]
    embeddings = extract_embeddings(model, test_manifest.records)
    reports = [run_protocol(model, test_manifest, protocol, embeddings) for protocol in protocols]
    emit_report(reports, out_dir, embeddings if scatter else None)
    return reports


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint).model
    manifest = load_manifest(args.test_manifest)
    reports = evaluate_model(model, manifest, args, args.out, _config_sources(args), args.scatter)
    for report in reports:
        print(f"{report.direction.value}: " + " ".join(f"{m} {report.mean(m):.4f}" for m in METRICS))
    return 0


def write_ablation(out_dir: str, results: Dict[str, List[EvalReport]]) -> None:
    header = ("preset", "direction") + METRICS
    lines = ["| " + " | ".join(header) + " |", "|" + " --- |" * len(header)]
    with open(os.path.join(out_dir, "ablation.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for preset, reports in results.items():
            for report in reports:
                values = [report.mean(m) for m in METRICS]
                fh.write(",".join([preset, report.direction.value] + [repr(v) for v in values]) + "\n")
                lines.append(f"| {preset} | {report.direction.value} | "
                             + " | ".join(f"{100 * v:.2f}" for v in values) + " |")
    with open(os.path.join(out_dir, "ablation.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_ablate(args) -> int:
    presets = csv_list(args.presets)
    configs = {preset: build_train_config(args, preset) for preset in presets}
    train = load_manifest(args.train_manifest)
    test = load_manifest(args.test_manifest)
    results: Dict[str, List[EvalReport]] = {}
    for preset, cfg in configs.items():
        run_dir = os.path.join(args.out, preset)
        log.info("ablation run %s", preset)
        model = fit(train, cfg, run_dir).model
        results[preset] = evaluate_model(model, test, args, os.path.join(run_dir, "eval"))
    write_ablation(args.out, results)
    print(f"wrote ablation of {', '.join(presets)} to {args.out}")
    return 0


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train-manifest", required=True)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--p", type=int, help="persons per batch")
    parser.add_argument("--k", type=int, help="images per person")
    parser.add_argument("--dhsm", choices=("on", "off"))
    parser.add_argument("--batches-per-epoch", type=int)
    parser.add_argument("--checkpoint-every", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--config", help="JSON or TOML training configuration")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE[,KEY=VALUE]",
                        help="override configuration keys, e.g. sampler.P=8,loss.margin=0.5")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--direction", choices=("v2t", "t2v", "both"), default="both")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--gallery-mode", choices=[m.value for m in GalleryMode])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdpreid", description="RGB-infrared cross-modality person re-identification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="count", default=0)
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    synth = commands.add_parser("synth", help="render a synthetic dataset and its train/test manifests")
    synth.add_argument("--out", required=True)
    synth.add_argument("--persons", type=int)
    synth.add_argument("--per-modality", type=int)
    synth.add_argument("--seed", type=int, help="generator seed (7 by default)")
    synth.add_argument("--train-fraction", type=float, default=0.5)
    synth.add_argument("--ir-transform", choices=[t.value for t in IrTransform])
    synth.add_argument("--config", help="JSON or TOML synthetic dataset configuration")
    synth.set_defaults(handler=cmd_synth)

    spectra = commands.add_parser("spectra", help="write the R, G, B and gray spectra of an RGB image")
    spectra.add_argument("--image", required=True)
    spectra.add_argument("--out", required=True)
    spectra.set_defaults(handler=cmd_spectra)

    train = commands.add_parser("train", help="train an embedding model")
    _add_train_flags(train)
    train.add_argument("--preset", choices=preset_names())
    train.add_argument("--resume", help="checkpoint to resume from")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint on a test manifest")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--test-manifest", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--seed", type=int)
    evaluate.add_argument("--scatter", action="store_true", help="also plot the embeddings")
    evaluate.add_argument("--config", help="JSON or TOML protocol configuration")
    _add_eval_flags(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="train and evaluate a list of presets")
    _add_train_flags(ablate)
    ablate.add_argument("--test-manifest", required=True)
    ablate.add_argument("--presets", default=",".join(DEFAULT_ABLATION))
    _add_eval_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        configure_logging(args.verbose, args.quiet)
        return args.handler(args)
    except ConfigError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pylint: disable=broad-except
        log.debug("%s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
