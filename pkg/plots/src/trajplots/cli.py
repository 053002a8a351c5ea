"""plots CLI: batch-render figures from a spec file.

Usage: plots render --spec figures.json --out outdir
The spec file holds {"figures": [...]}; table paths are resolved relative to
the spec file, outputs relative to --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import FigureSpec, load_style, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render all figures in a spec file")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_render)
    return parser


def cmd_render(args) -> int:
    doc = json.loads(args.spec.read_text(encoding="utf-8"))
    figures = doc.get("figures")
    if not isinstance(figures, list) or not figures:
        print("error: spec file needs a non-empty 'figures' list", file=sys.stderr)
        return 2
    style = load_style()
    base = args.spec.resolve().parent
    for i, d in enumerate(figures):
        try:
            spec = FigureSpec.from_dict(d, base_dir=base, out_dir=args.out)
        except (ValueError, KeyError) as e:
            print(f"error: figures[{i}]: {e}", file=sys.stderr)
            return 2
        out = render(spec, style=style)
        print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
