"""Run every pipeline stage in order and print a one-line summary per stage.

    python3 scripts/run_pipeline.py --config configs/desk.ini --workdir runs/desk
"""

import argparse
import json
import sys
from pathlib import Path

from salience.cli import main

STAGES = ("simulate", "prepare", "tune", "crossval", "report", "encode", "embed", "partition")


def run(config: str, workdir: str, start: str, extra: list[str]) -> int:
    stages = STAGES[STAGES.index(start):]
    for stage in stages:
        code = main([stage, "--config", config, "--workdir", workdir, *extra])
        last = json.loads((Path(workdir) / "manifest.jsonl").read_text().splitlines()[-1])
        print(f"{stage:<10} {last['status']:<14} {last['duration_s']:>9.1f}s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.ini")
    ap.add_argument("--workdir", default="runs/desk")
    ap.add_argument("--from", dest="start", default="simulate", choices=STAGES,
                    help="resume from this stage, reusing earlier outputs")
    args, extra = ap.parse_known_args()
    sys.exit(run(args.config, args.workdir, args.start, extra))
