"""Produce the data behind every figure into one directory.

The maximizing vector is computed once by ``lambda`` and reused by the other
verbs through ``--resume``.

    python3 scripts/figure_data.py results/
"""

import argparse
import sys
from pathlib import Path

from backflow import cli

VERBS = ("eigenvector", "evolve", "current", "flowlines", "normconv")


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("outdir", nargs="?", default="results")
    p.add_argument("--skip-flowlines", action="store_true", help="flow lines take several minutes")
    args = p.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    base = out / "lambda.bfz"
    code = cli.main(["lambda", "--out", str(base), "--verbose"])
    if code:
        return code
    for verb in VERBS:
        if verb == "flowlines" and args.skip_flowlines:
            continue
        code = cli.main([verb, "--resume", str(base), "--out", str(out / f"{verb}.bfz"), "--verbose"])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
