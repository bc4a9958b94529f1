"""figures <kind> <csv> <out.png> [--title T]"""

from __future__ import annotations

import argparse
import sys

from .render import REQUIRED_COLUMNS, EmptyDataError, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="figures", description="Render a dpstop study CSV as a PNG figure"
    )
    parser.add_argument("kind", choices=sorted(REQUIRED_COLUMNS))
    parser.add_argument("csv")
    parser.add_argument("out_png")
    parser.add_argument("--title", default="")
    args = parser.parse_args(argv)
    spec = FigureSpec(
        csv_path=args.csv, figure_kind=args.kind, out_png=args.out_png, title=args.title
    )
    try:
        render(spec)
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, EmptyDataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
