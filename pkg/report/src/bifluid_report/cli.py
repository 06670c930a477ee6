"""Command line entry point. Exit codes: 0 success, 2 bad input."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import ALL_FIGURES, ReportSpec, render
from .schema import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bifluid-report",
        description="Render figures and a summary page from run artifacts",
    )
    parser.add_argument("inputs", nargs="+",
                        help="run or sweep output directories")
    parser.add_argument("-o", "--output-dir", default="report",
                        help="directory for images and summary.md")
    parser.add_argument("--format", default="png", choices=["png", "svg"])
    parser.add_argument("--plots", default=None,
                        help=f"comma-separated subset of: {', '.join(ALL_FIGURES)}")
    args = parser.parse_args(argv)

    plots = ALL_FIGURES
    if args.plots is not None:
        plots = tuple(p.strip() for p in args.plots.split(",") if p.strip())
    try:
        spec = ReportSpec(inputs=tuple(Path(p) for p in args.inputs),
                          output_dir=Path(args.output_dir),
                          plots=plots, image_format=args.format)
        written = render(spec)
    except SchemaError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    print(f"report written: {len(written)} files in {args.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
