"""Command line: ``cvra-export export`` and ``cvra-export selfcheck``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ExporterError
from .export import ExportJob, export
from .selfcheck import selfcheck


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvra-export",
        description="Encode frames/queries/captions into CVRA v1 archives")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode an input manifest")
    p.add_argument("--manifest", required=True, help="input JSONL manifest")
    p.add_argument("--out", required=True, help="output archive directory")
    p.add_argument("--encoder", default="hash:64")
    p.add_argument("--frames-per-video", type=int, default=12)
    p.add_argument("--max-words", type=int, default=32)
    p.add_argument("--split", default="test")

    p = sub.add_parser("selfcheck", help="validate an archive directory")
    p.add_argument("--archive", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(sys.argv[1:] if argv is None else argv)
    try:
        if args.command == "export":
            report = export(ExportJob(
                manifest_path=args.manifest, output_path=args.out,
                encoder=args.encoder, frames_per_video=args.frames_per_video,
                max_words=args.max_words, split=args.split))
            print(json.dumps({
                "written": report.output_path, "count": report.count,
                "dim": report.dim,
                "top1_caption_cosine": report.top1_caption_cosine,
                "mean_caption_cosine": report.mean_caption_cosine,
                "caption_signal_ok": report.caption_signal_ok(),
            }, sort_keys=True))
        else:
            report = selfcheck(args.archive)
            print(json.dumps(report.to_dict(), sort_keys=True))
            if report.warnings:
                return 1
        return 0
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
