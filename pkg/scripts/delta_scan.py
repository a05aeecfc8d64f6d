"""Scan the coercivity constants over a range of weights and print the scan table.

    python3 scripts/delta_scan.py --deltas -1.2 -1.5 -1.8 --size 10
"""

import argparse
import sys
import tempfile
from pathlib import Path

from ahconstraint.cli import main

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--deltas", type=float, nargs="+", default=[-1.2, -1.35, -1.5, -1.65, -1.8])
parser.add_argument("--size", type=int, default=10)
parser.add_argument("--resolutions", type=int, nargs="+", default=[16, 32])
args = parser.parse_args()

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "scan.cfg"
    cfg.write_text("[run]\nprobes = inequalities\n"
                   f"[weights]\ndeltas = {', '.join(map(str, args.deltas))}\n"
                   f"[ladder]\nresolutions = {', '.join(map(str, args.resolutions))}\n"
                   f"[families]\nsize = {args.size}\n")
    out = Path(tmp) / "out"
    try:
        main(["run", "--config", str(cfg), "--out", str(out)], standalone_mode=False)
    except SystemExit:
        pass
    sys.stdout.write((out / "scan.csv").read_text())
