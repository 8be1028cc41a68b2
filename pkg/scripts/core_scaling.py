"""Application speedup from a free per-tile core speedup with DRAM bandwidth held fixed."""

import argparse

from upcycle import dse
from upcycle.arch import preset
from upcycle.cli import print_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=dse.LARGE_BATCH)
    ap.add_argument("--multipliers", type=float, nargs="+", default=[2, 10, 100])
    args = ap.parse_args()
    res = dse.sensitivity_core(preset("base"), args.multipliers, batch=args.batch)
    rows = [{"app": app, **{f"{m:g}x": v for m, v in sp.items()}} for app, sp in res.per_app.items()]
    rows.append({"app": "geomean", **{f"{m:g}x": res.geomean(m) for m in args.multipliers}})
    print_table(rows)


if __name__ == "__main__":
    main()
