"""Base utilization at batch 1 and batch 64 beside the published A100 and accelerator figures."""

import argparse

from upcycle import baselines, dse
from upcycle.arch import preset
from upcycle.cli import print_table, write_csv
from upcycle.perf import BATCH_POLICIES, SimOptions, simulate, simulate_batch

APPS = dse.SUITE


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--large-batch", type=int, default=dse.LARGE_BATCH)
    ap.add_argument("--policy", choices=BATCH_POLICIES, default="best")
    ap.add_argument("--csv")
    args = ap.parse_args()
    cfg = preset("base")
    rows = []
    for model, mode in APPS:
        name = dse.zoo.trace_name(model, mode)
        small = simulate(dse._trace(model, mode, 1), cfg)
        large = simulate_batch(lambda s: dse._trace(model, mode, s), args.large_batch, cfg,
                               SimOptions(), args.policy)
        row = {"app": name, "small_pct": 100 * small.utilization,
               "large_pct": 100 * large.utilization, "sub_batch": large.micro_batch}
        if name in baselines.table()["utilization"]:
            row["published_small_pct"] = 100 * baselines.reported_utilization(name, "small")
            row["published_large_pct"] = 100 * baselines.reported_utilization(name, "large")
            row["a100_small_pct"] = 100 * baselines.a100_utilization(name, "small")
            row["a100_large_pct"] = 100 * baselines.a100_utilization(name, "large")
        rows.append(row)
    print_table(rows)
    if args.csv:
        write_csv(rows, args.csv)


if __name__ == "__main__":
    main()
