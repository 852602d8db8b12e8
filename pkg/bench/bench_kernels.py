"""Compare the compiled and numpy kernel backends.

    python bench/bench_kernels.py --events 1000000
"""

import argparse
import json

from evpipe.bench import compare_backends, format_rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--events", type=int, default=1_000_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--json", action="store_true", help="print raw numbers as JSON")
    args = parser.parse_args()
    rows = compare_backends(args.events, args.repeat)
    print(json.dumps(rows, indent=2) if args.json else format_rows(rows))


if __name__ == "__main__":
    main()
