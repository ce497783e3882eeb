"""Command line for the converter: exit 0 on success, 2 on any input problem."""

import argparse
import sys

from .convert import DEFAULT_MAPPING, ConversionError, convert


def parse_mapping(pairs):
    mapping = {}
    for pair in pairs or ():
        role, sep, key = pair.partition("=")
        if not sep or role not in DEFAULT_MAPPING:
            raise ConversionError(
                f"bad --map {pair!r}; use role=dataset with role in {sorted(DEFAULT_MAPPING)}"
            )
        mapping[role] = key
    return mapping


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmt-convert",
        description="Convert the benchmark HDF5 release into an MMT1 container",
    )
    parser.add_argument("--src", required=True, help="source HDF5 file")
    parser.add_argument("--dst", required=True, help="destination MMT1 container")
    parser.add_argument("--limit", type=int, help="convert only the first N rows")
    parser.add_argument(
        "--map",
        action="append",
        dest="mapping",
        metavar="ROLE=DATASET",
        help=f"override a source dataset name; roles: {sorted(DEFAULT_MAPPING)}",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        summary = convert(args.src, args.dst, limit=args.limit, mapping=parse_mapping(args.mapping))
    except (ConversionError, OSError) as exc:
        print(f"conversion failed: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {summary['records']} records to {summary['destination']}")
    print("per-class positive counts:", " ".join(str(c) for c in summary["class_counts"]))
    print(
        "per-class frequencies:",
        " ".join(f"{f:.4f}" for f in summary["class_frequencies"]),
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
