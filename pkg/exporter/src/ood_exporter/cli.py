"""CLI: list capturable activation layers or export an image folder."""

from __future__ import annotations

import argparse
import sys

from .capture import BACKBONES, CheckpointError, list_layers
from .export import ExportError, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ood-export",
        description="Capture CNN activation layers into a portable feature archive.",
    )
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--backbone", choices=BACKBONES, default="generic")
    parser.add_argument("--image-size", type=int, default=224, dest="image_size")
    parser.add_argument(
        "--list-layers", action="store_true", dest="list_layers",
        help="print capturable activation layers and exit",
    )
    parser.add_argument("--layers", default=None, help="comma-separated layer names to capture")
    parser.add_argument("--images", default=None, help="folder of input images")
    parser.add_argument("--out", default=None, help="output archive directory")
    parser.add_argument("--mean", default="0.485,0.456,0.406")
    parser.add_argument("--std", default="0.229,0.224,0.225")
    parser.add_argument("--label", choices=("id", "ood", "unknown"), default="id")
    parser.add_argument("--split", choices=("train", "validation", "tune", "test"), default="train")
    parser.add_argument("--model-id", default=None, dest="model_id")
    return parser


def _triple(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return parts[0], parts[1], parts[2]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.list_layers:
            for index, point in enumerate(
                list_layers(args.checkpoint, args.backbone, args.image_size)
            ):
                shape = "x".join(str(d) for d in point.shape)
                print(f"{index:>3}  {point.name}  ({shape})")
            return 0
        if not (args.layers and args.images and args.out):
            print("error: --layers, --images and --out are required for export", file=sys.stderr)
            return 2
        spec = ExportSpec(
            checkpoint=args.checkpoint,
            backbone=args.backbone,
            layers=[name.strip() for name in args.layers.split(",") if name.strip()],
            images=args.images,
            out=args.out,
            image_size=args.image_size,
            mean=_triple(args.mean),
            std=_triple(args.std),
            label=args.label,
            split=args.split,
            model_id=args.model_id,
        )
        summary = export(spec)
        print(f"exported {summary.exported} samples -> {summary.archive}")
        if summary.skipped:
            for name, reason in summary.skipped:
                print(f"skipped {name}: {reason}", file=sys.stderr)
            print(f"{len(summary.skipped)} images skipped", file=sys.stderr)
        return 0
    except (CheckpointError, ExportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
