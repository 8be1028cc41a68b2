"""Write the shipped batch-1 trace files from the model zoo."""

import argparse
from pathlib import Path

from upcycle import zoo
from upcycle.workload import characterize, save_trace


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "traces"))
    ap.add_argument("--batch", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for model, mode in zoo.SHIPPED:
        trace = zoo.build(model, mode, args.batch)
        path = out / f"{trace.name}.json"
        save_trace(trace, path)
        s = characterize(trace)
        print(f"{path.name:28s} {s.gops_per_sample:8.2f} GOPs  {s.distinct_shape_count:4d} shapes  "
              f"{len(trace.nodes):5d} nodes  {path.stat().st_size / 1024:7.1f} KiB")


if __name__ == "__main__":
    main()
