"""Single-tile Riss energy per op, scaled from 7 nm to 65 nm, beside EyerissV2."""

from upcycle import baselines, zoo
from upcycle.arch import preset
from upcycle.cli import print_table
from upcycle.perf import simulate
from upcycle.powerarea import estimate_power, load_coefficients, scale_technology


def main() -> None:
    cfg = preset("riss")
    coeffs = load_coefficients()
    pub = baselines.table()["eyeriss_pj_per_op"]
    rows = []
    for model in ("alexnet", "mobilenet"):
        run = simulate(zoo.build(model, "inference", 1), cfg)
        pj = estimate_power(cfg, run, coeffs).pj_per_op
        rows.append({"app": model, "utilization_pct": 100 * run.utilization, "pj_per_op_7nm": pj,
                     "pj_per_op_65nm": scale_technology(pj, "7nm", "65nm", "energy"),
                     "published_riss_65nm": pub["upcycle_riss"][model],
                     "eyerissv2": pub["eyerissv2"][model]})
    print_table(rows)


if __name__ == "__main__":
    main()
