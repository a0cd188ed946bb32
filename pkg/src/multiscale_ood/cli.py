"""Command-line entry point: synth, fit, select-layer, score, evaluate, inspect.

Exit codes: 0 success, 1 I/O failure, 2 validation or config failure.
No command mutates an input archive.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

from .archive import ArchiveError, open_archive, validate_archive
from .metrics import ScoreSet, auroc, detection_accuracy, tnr_at_tpr
from .ocsvm import OcsvmConfig
from .pipeline import (
    BUNDLE_NAME,
    KIND_GRAM,
    DetectorBundle,
    PipelineConfig,
    fit_bundle,
    load_bundle,
    save_bundle,
    score_archive,
    select_layer,
    write_scores_csv,
)
from .synth import SynthConfig, generate_archive

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


class CliConfigError(Exception):
    """The config file or flag combination is unusable."""


_PIPELINE_KEYS = ("theta", "svm_rectify_c", "gram_rectify_c", "gram_p", "tpr_target", "forced_layer")
_OCSVM_KEYS = ("nu", "gamma", "tolerance", "max_passes")
_SYNTH_KEYS = (
    "seed",
    "num_layers",
    "channels",
    "spatial",
    "latent_dim",
    "n_samples",
    "mode",
    "shift_layer",
    "shift_magnitude",
    "split",
    "first_sample_index",
    "model_id",
)


def _parse_spatial(text: str) -> tuple[tuple[int, int], ...]:
    sizes = []
    for part in text.split(","):
        w, _, h = part.strip().partition("x")
        sizes.append((int(w), int(h)))
    return tuple(sizes)


def _parse_channels(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(","))


def _section_dict(parser: configparser.ConfigParser, name: str, allowed: tuple[str, ...]) -> dict[str, str]:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, value in parser.items(name):
        if key not in allowed:
            raise CliConfigError(f"unknown key {key!r} in config section [{name}]")
        if value.strip() != "":
            out[key] = value.strip()
    return out


def load_config_file(path: str | Path | None) -> tuple[PipelineConfig, SynthConfig]:
    """Parse the flat INI config; unknown sections or keys are rejected."""
    pipeline = PipelineConfig()
    synth = SynthConfig()
    if path is None:
        return pipeline, synth
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise CliConfigError(f"cannot parse config file: {exc}") from None
    for section in parser.sections():
        if section not in ("pipeline", "ocsvm", "synth"):
            raise CliConfigError(f"unknown config section [{section}]")
    try:
        pl = _section_dict(parser, "pipeline", _PIPELINE_KEYS)
        if "theta" in pl:
            pipeline.theta = float(pl["theta"])
        if "svm_rectify_c" in pl:
            pipeline.svm_rectify_c = float(pl["svm_rectify_c"])
        if "gram_rectify_c" in pl:
            pipeline.gram_rectify_c = float(pl["gram_rectify_c"])
        if "gram_p" in pl:
            pipeline.gram_p = int(pl["gram_p"])
        if "tpr_target" in pl:
            pipeline.tpr_target = float(pl["tpr_target"])
        if "forced_layer" in pl:
            pipeline.forced_layer = int(pl["forced_layer"])
        oc = _section_dict(parser, "ocsvm", _OCSVM_KEYS)
        svm = OcsvmConfig()
        if "nu" in oc:
            svm.nu = float(oc["nu"])
        if "gamma" in oc:
            svm.gamma = "auto" if oc["gamma"] == "auto" else float(oc["gamma"])
        if "tolerance" in oc:
            svm.tolerance = float(oc["tolerance"])
        if "max_passes" in oc:
            svm.max_passes = int(oc["max_passes"])
        pipeline.ocsvm = svm
        sy = _section_dict(parser, "synth", _SYNTH_KEYS)
        if "seed" in sy:
            synth.seed = int(sy["seed"])
        if "num_layers" in sy:
            synth.num_layers = int(sy["num_layers"])
        if "channels" in sy:
            synth.channels = _parse_channels(sy["channels"])
        if "spatial" in sy:
            synth.spatial = _parse_spatial(sy["spatial"])
        if "latent_dim" in sy:
            synth.latent_dim = int(sy["latent_dim"])
        if "n_samples" in sy:
            synth.n_samples = int(sy["n_samples"])
        if "mode" in sy:
            synth.mode = sy["mode"]
        if "shift_layer" in sy:
            synth.shift_layer = int(sy["shift_layer"])
        if "shift_magnitude" in sy:
            synth.shift_magnitude = float(sy["shift_magnitude"])
        if "split" in sy:
            synth.split = sy["split"]
        if "first_sample_index" in sy:
            synth.first_sample_index = int(sy["first_sample_index"])
        if "model_id" in sy:
            synth.model_id = sy["model_id"]
    except ValueError as exc:
        raise CliConfigError(f"bad config value: {exc}") from None
    try:
        pipeline.validate()
    except ValueError as exc:
        raise CliConfigError(str(exc)) from None
    return pipeline, synth


def cmd_fit(args: argparse.Namespace) -> int:
    config, _ = load_config_file(args.config)
    if args.tpr_target is not None:
        config.tpr_target = args.tpr_target
    if args.forced_layer is not None:
        config.forced_layer = args.forced_layer
    config.validate()
    train = open_archive(args.train)
    validation = open_archive(args.validation)
    bundle = fit_bundle(train, validation, config)
    for descriptor in bundle.layers:
        index = descriptor.index
        kind = bundle.kind_for(index)
        if kind == KIND_GRAM:
            detail = (
                f"channels={bundle.gram_stats.channels} "
                f"expected_deviation={bundle.gram_stats.expected_deviation:.6g}"
            )
        else:
            model = bundle.svm_models[index]
            detail = f"support_vectors={len(model.alphas)} gamma={model.gamma:.6g}"
        print(
            f"layer {index} [{kind}] threshold={bundle.thresholds[index]:.6g} {detail}"
        )
    save_bundle(bundle, args.out)
    print(f"bundle written to {args.out}")
    return EXIT_OK


def _print_tnr_table(bundle: DetectorBundle) -> None:
    print(f"{'layer':>5}  {'kind':<6} {'threshold':>14} {'tnr':>9}")
    for report in bundle.reports:
        marker = "  <- selected" if report.layer_index == bundle.selected_layer else ""
        print(
            f"{report.layer_index:>5}  {report.detector_kind:<6} "
            f"{report.calibration_threshold:>14.6g} {report.tnr_on_tune:>9.6f}{marker}"
        )


def cmd_select_layer(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    if args.tune_ood is None:
        if bundle.selected_layer is not None:
            print(
                f"no tune archive given; keeping preset layer {bundle.selected_layer} "
                f"({bundle.selected_kind})"
            )
            return EXIT_OK
        raise ValueError("no tune archive given and the bundle has no preset layer")
    tune = open_archive(args.tune_ood)
    bundle = select_layer(bundle, tune)
    _print_tnr_table(bundle)
    save_bundle(bundle, args.bundle)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    archive = open_archive(args.archive)
    scored = score_archive(bundle, archive, diagnostics=args.diagnostics)
    layer_indices = [d.index for d in bundle.layers] if args.diagnostics else None
    write_scores_csv(scored, args.out, layer_indices)
    print(f"scored {len(scored)} samples -> {args.out}")
    return EXIT_OK


def _read_score_column(path: str, column: str) -> list[float]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path} has no column {column!r}")
        try:
            return [float(row[column]) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad value in {path} column {column!r}: {exc}") from None


def cmd_evaluate(args: argparse.Namespace) -> int:
    ids = _read_score_column(args.id_csv, args.column)
    oods = _read_score_column(args.ood_csv, args.column)
    scores = ScoreSet(ids, oods)
    target = args.tpr_target if args.tpr_target is not None else 0.95
    print(f"AUROC              {auroc(scores):.6f}")
    print(f"Detection Accuracy {detection_accuracy(scores):.6f}")
    print(f"TNR@TPR{int(round(target * 100))}%         {tnr_at_tpr(scores, target):.6f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    _, config = load_config_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.mode is not None:
        config.mode = args.mode
    if args.n_samples is not None:
        config.n_samples = args.n_samples
    if args.num_layers is not None:
        config.num_layers = args.num_layers
    if args.channels is not None:
        config.channels = _parse_channels(args.channels)
    if args.spatial is not None:
        config.spatial = _parse_spatial(args.spatial)
    if args.latent_dim is not None:
        config.latent_dim = args.latent_dim
    if args.shift_layer is not None:
        config.shift_layer = args.shift_layer
    if args.shift_magnitude is not None:
        config.shift_magnitude = args.shift_magnitude
    if args.split is not None:
        config.split = args.split
    if args.first_sample_index is not None:
        config.first_sample_index = args.first_sample_index
    if args.model_id is not None:
        config.model_id = args.model_id
    archive = generate_archive(config, args.out)
    print(
        f"wrote {config.n_samples} {config.mode} samples x {config.num_layers} layers "
        f"to {archive.root}"
    )
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if (path / BUNDLE_NAME).exists():
        bundle = load_bundle(path)
        print(f"bundle for model {bundle.model_id!r}")
        print(f"layers: {len(bundle.layers)}")
        for descriptor in bundle.layers:
            print(
                f"  layer {descriptor.index} {descriptor.name!r} "
                f"({descriptor.channels}x{descriptor.width}x{descriptor.height}) "
                f"[{bundle.kind_for(descriptor.index)}]"
            )
        if bundle.selected_layer is None:
            print("selected layer: unset")
        else:
            print(f"selected layer: {bundle.selected_layer} ({bundle.selected_kind})")
        return EXIT_OK
    try:
        archive = open_archive(path)
    except ArchiveError:
        findings = validate_archive(path)
        if findings:
            for finding in findings:
                print(f"finding [{finding.code}] {finding.message}")
            print(f"{len(findings)} findings")
            return EXIT_INVALID
        raise
    manifest = archive.manifest
    print(f"archive for model {manifest.model_id!r} created {manifest.created_utc}")
    print(f"layers: {len(manifest.layers)}")
    for descriptor in manifest.layers:
        print(
            f"  layer {descriptor.index} {descriptor.name!r} "
            f"({descriptor.channels}x{descriptor.width}x{descriptor.height})"
        )
    by_label: dict[str, int] = {}
    by_split: dict[str, int] = {}
    for record in manifest.samples:
        by_label[record.label] = by_label.get(record.label, 0) + 1
        by_split[record.split] = by_split.get(record.split, 0) + 1
    print(f"samples: {len(manifest.samples)} labels={by_label} splits={by_split}")
    findings = validate_archive(archive)
    if findings:
        for finding in findings:
            print(f"finding [{finding.code}] {finding.message}")
        print(f"{len(findings)} findings")
        return EXIT_INVALID
    print("validation: clean")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msood",
        description="Multi-scale OOD detection over per-layer activation archives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit per-layer detectors on ID archives")
    p.add_argument("--train", required=True, help="ID training archive")
    p.add_argument("--validation", required=True, help="ID validation archive")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--tpr-target", type=float, default=None, dest="tpr_target")
    p.add_argument("--forced-layer", type=int, default=None, dest="forced_layer")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-layer", help="pick the scoring layer by tune TNR")
    p.add_argument("--bundle", required=True)
    p.add_argument("--tune-ood", default=None, dest="tune_ood", help="tune OOD archive")
    p.set_defaults(func=cmd_select_layer)

    p = sub.add_parser("score", help="score an archive with a fitted bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--diagnostics", action="store_true", help="emit per-layer raw scores")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="AUROC / detection accuracy / TNR from score CSVs")
    p.add_argument("id_csv", help="CSV of ID sample scores")
    p.add_argument("ood_csv", help="CSV of OOD sample scores")
    p.add_argument("--column", choices=("normality", "raw_score"), default="normality")
    p.add_argument("--tpr-target", type=float, default=None, dest="tpr_target")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a deterministic synthetic archive")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("id", "ood"), default=None)
    p.add_argument("--n-samples", type=int, default=None, dest="n_samples")
    p.add_argument("--num-layers", type=int, default=None, dest="num_layers")
    p.add_argument("--channels", default=None, help="comma list, e.g. 4,6,8,8")
    p.add_argument("--spatial", default=None, help="comma list of WxH, e.g. 4x4,3x3,2x2,2x2")
    p.add_argument("--latent-dim", type=int, default=None, dest="latent_dim")
    p.add_argument("--shift-layer", type=int, default=None, dest="shift_layer")
    p.add_argument("--shift-magnitude", type=float, default=None, dest="shift_magnitude")
    p.add_argument("--split", default=None)
    p.add_argument("--first-sample-index", type=int, default=None, dest="first_sample_index")
    p.add_argument("--model-id", default=None, dest="model_id")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="summarize an archive or bundle")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArchiveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
