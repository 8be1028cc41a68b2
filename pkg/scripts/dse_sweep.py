"""Grid sweep of tile count, SIMD width and clock; reports the efficiency findings."""

import argparse
from importlib import resources

from upcycle import dse
from upcycle.cli import print_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("manifest", nargs="?",
                    default=str(resources.files("upcycle.data").joinpath("sweep_default.json")))
    ap.add_argument("--workers", type=int)
    ap.add_argument("--csv", default="dse_sweep.csv")
    args = ap.parse_args()
    spec = dse.load_manifest(args.manifest)
    points = dse.sweep(spec, workers=args.workers)
    feasible = [p for p in points if p.feasible]
    front = {id(p) for p in dse.pareto(feasible)}
    print_table([{"config": p.label, **p.summary(), "pareto": id(p) in front} for p in feasible])
    dse.write_csv(points, args.csv)

    base = dse.find_point(feasible, tiles=2048, simd_bits=512, freq_hz=2e9)
    gap, per_app = dse.optimum_gap(feasible, base)
    print(f"\nBase geomean pJ/op {base.geomean('pj_per_op'):.4f}; {100 * (gap - 1):.1f}% above "
          f"the per-app optimum")
    try:
        bad = dse.find_point(feasible, tiles=1024, simd_bits=256, freq_hz=1e9)
        print(f"{bad.label}: {bad.geomean('pj_per_op') / base.geomean('pj_per_op'):.2f}x Base pJ/op")
        wide = dse.find_point(feasible, tiles=4096, simd_bits=256, freq_hz=2e9)
        for app in ("rnnt_train", "bert_large_128_train"):
            print(f"{app}: {wide.label} {wide.per_trace[app]['pj_per_op']:.4f} vs Base "
                  f"{base.per_trace[app]['pj_per_op']:.4f} pJ/op")
    except KeyError as e:
        print(f"skipping comparisons: {e}")
    print(f"per-trace rows written to {args.csv}")


if __name__ == "__main__":
    main()
