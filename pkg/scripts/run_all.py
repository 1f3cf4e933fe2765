"""Run every section of an experiment INI file through the command-line entry point.

Usage: python3 scripts/run_all.py [--config scripts/experiments.ini] [--out results] [only ...]
"""
import argparse
import configparser
import sys
import time
from pathlib import Path

from ssep import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(Path(__file__).with_name("experiments.ini")))
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("only", nargs="*", help="restrict to these sections")
    args = ap.parse_args(argv)
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(args.config)
    sections = [s for s in parser.sections() if not args.only or s in args.only]
    codes = {}
    for name in sections:
        t0 = time.perf_counter()
        codes[name] = cli.main([name, "--config", args.config, "--out", args.out,
                                "--threads", str(args.threads)])
        print(f"{name}: exit {codes[name]} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return max(codes.values(), default=0)


if __name__ == "__main__":
    sys.exit(main())
