"""Speedup and energy efficiency of Base against A100 figures rebuilt from published utilization."""

import argparse

from upcycle import baselines, dse
from upcycle.arch import preset
from upcycle.cli import print_table
from upcycle.powerarea import estimate_power, load_coefficients
from upcycle.workload import characterize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--large-batch", type=int, default=dse.LARGE_BATCH)
    args = ap.parse_args()
    cfg = preset("base")
    coeffs = load_coefficients()
    results = []
    for model, mode in dse.SUITE:
        gops = characterize(dse._trace(model, mode, 1)).gops_per_sample
        for batch in (1, args.large_batch):
            run = dse.run_app(model, mode, batch, cfg)
            pj = estimate_power(cfg, run, coeffs).pj_per_op
            results.append(baselines.AppResult(dse.zoo.trace_name(model, mode), batch,
                                               run.samples_per_s, pj, gops))
    rep = baselines.compare_a100(results)
    print_table(rep.rows)
    print()
    print_table([{"group": k, "geomean": v} for k, v in rep.geomeans().items()])
    print(f"\n{rep.footer}")


if __name__ == "__main__":
    main()
