"""Run the h = 1..h_max refinement protocol with per-h checkpoints, then fit.

Interrupted runs resume from the checkpoint directory.

    python3 scripts/run_protocol.py --h-max 40 --workers 4
"""

import argparse
import sys

from backflow import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h-max", type=int, default=40)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint-dir", default=".cache/protocol")
    p.add_argument("--out", default="results/extrapolate.bfz")
    args = p.parse_args()
    return cli.main(["extrapolate", "--h-max", str(args.h_max), "--workers", str(args.workers),
                     "--checkpoint-dir", args.checkpoint_dir, "--out", args.out, "--verbose"])


if __name__ == "__main__":
    sys.exit(main())
