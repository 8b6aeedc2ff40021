"""Calibrate the six reference object profiles and print them as config sections.

    python scripts/calibrate_profiles.py > configs/profiles.ini
"""

import argparse

from salience.config import format_profile_section, reference_profile
from salience.simulator import REFERENCE_MEDIANS, PopulationConfig, calibrate_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()
    pop = PopulationConfig()
    for name in REFERENCE_MEDIANS:
        prof = calibrate_profile(reference_profile(name), pop, n=args.n, seed=args.seed, iters=args.iters)
        print(format_profile_section(prof))


if __name__ == "__main__":
    main()
