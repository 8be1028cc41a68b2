"""Geomean throughput relative to 900 GB/s across DRAM bandwidths, per mode."""

import argparse
import math

from upcycle import baselines, dse
from upcycle.arch import preset
from upcycle.cli import print_table

POINTS = [(450e9, "450e9"), (1.8e12, "1.8e12"), (math.inf, "inf"), ("inf+perfect", "inf+perfect")]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=dse.LARGE_BATCH)
    args = ap.parse_args()
    cfg = preset("base")
    pub = baselines.table()["membw_sensitivity"]
    for col, mode in enumerate(("inference", "training")):
        res = dse.sensitivity_membw(cfg, [bw for bw, _ in POINTS], mode, batch=args.batch)
        rows = []
        for bw, key in POINTS:
            gm, per_app = res[bw]
            rows.append({"bandwidth": key, "geomean": gm, "published": pub[key][col], **per_app})
        print(f"{mode} (batch {args.batch}, relative to 900 GB/s)")
        print_table(rows)
        print()


if __name__ == "__main__":
    main()
