"""Op counts and distinct shapes of every shipped workload next to the published census."""

import argparse

from upcycle import baselines, zoo
from upcycle.cli import print_table, write_csv
from upcycle.workload import characterize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv")
    args = ap.parse_args()
    gops = baselines.table()["gops_per_sample"]
    shapes = baselines.table()["shapes"]
    rows = []
    for model, mode in zoo.SHIPPED:
        s = characterize(zoo.build(model, mode, 1))
        rows.append({"trace": s.name, "gops": s.gops_per_sample, "published_gops": gops.get(s.name, ""),
                     "shapes": s.distinct_shape_count, "published_shapes": shapes.get(s.name, ""),
                     "primary_pct": 100 * s.primary_op_fraction})
    print_table(rows)
    if args.csv:
        write_csv(rows, args.csv)


if __name__ == "__main__":
    main()
