"""Command line: plotkit excitation|estimates|observer --trace F [--trace F2] [--eta F] --out F.png"""

import argparse
import sys

from .figures import KINDS, FigureSpec, render
from .traces import MissingColumn


def _build_parser():
    parser = argparse.ArgumentParser(prog="plotkit",
                                     description="render figures from simulation trace CSVs")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--trace", action="append", required=True,
                        help="trace CSV (repeat to overlay)")
    parser.add_argument("--eta", type=float, default=None,
                        help="inequality level for the excitation overlay")
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        spec = FigureSpec(traces=args.trace, kind=args.kind, out=args.out, eta=args.eta)
        render(spec)
    except (MissingColumn, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
