"""hark-bridge export: write pretrained-encoder features as HEMB files.

Requires the relevant encoder stacks installed locally (pip extra
`hark-bridge[encoders]` plus the published MuQ / MusicFM code and weights).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .encoders import default_adapters
from .export import export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hark-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export encoder features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sources", required=True,
                   help="comma-separated subset of: muq, musicfm")
    p.add_argument("--audio-dir", default=None,
                   help="base directory for audio paths (default: manifest dir)")
    p.add_argument("--layer", type=int, default=-1,
                   help="hidden layer to export (default: last)")
    p.add_argument("--muq-checkpoint", default=None)
    p.add_argument("--musicfm-repo", default=None)
    p.add_argument("--musicfm-checkpoint", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    adapters = default_adapters(
        layer=args.layer,
        muq_checkpoint=args.muq_checkpoint,
        musicfm_repo=args.musicfm_repo,
        musicfm_checkpoint=args.musicfm_checkpoint,
    )
    sources = [s.strip() for s in args.sources.split(",") if s.strip()]
    try:
        report = export(args.manifest, args.out_dir, adapters, sources,
                        audio_dir=args.audio_dir)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"hark-bridge: error: {exc}", file=sys.stderr)
        return 2
    for f in report.files:
        print(
            f"{f.entry_id}\t{f.source_id}\t{f.scale}\tT={f.num_frames}\t"
            f"D={f.dim}\trate={f.frame_rate_hz:g}",
            file=sys.stderr,
        )
    print(json.dumps({
        "manifest": report.manifest_path,
        "files": [dataclasses.asdict(f) for f in report.files],
        "skipped": report.skipped,
    }, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
