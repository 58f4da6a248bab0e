"""Headline synthetic experiment: dense baseline vs adaptive sensing, the
lambda2 sweep, random-masking robustness, the patch heatmap and the energy
comparison of the lambda2=0.1 model.

    python scripts/synthetic_results.py --out runs/synthetic_results
    python scripts/synthetic_results.py --config configs/synthetic_quick.yaml --out /tmp/quick

Every run shares one train/val/test split. Results are reported on the test
split and written as CSV/JSON/SVG under ``--out``.
"""

import argparse
import json
import logging
import time
from pathlib import Path

from ami import experiments as ex
from ami.config import load_config
from ami.report import format_table, write_csv, write_heatmap
from ami.trainer import robustness_random_masking

log = logging.getLogger("synthetic_results")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default="configs/synthetic.yaml")
    p.add_argument("--out", default="runs/synthetic_results")
    p.add_argument("--lambdas", default="0.05,0.1,0.2")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config, args.overrides)
    out = Path(args.out)
    splits = ex.load_splits(cfg)
    lambdas = [float(v) for v in args.lambdas.split(",")]

    rows, trainers = [], {}
    for name, run_cfg in [("dense", ex.dense_config(cfg))] + [
            (f"lambda2={v:g}", ex.with_overrides(cfg, loss={"lambda2": v})) for v in lambdas]:
        t0 = time.perf_counter()
        tr, _ = ex.train_run(run_cfg, out / name.replace("=", "_"), splits)
        rep = tr.evaluate("test")
        rep.save(out / name.replace("=", "_"), "eval_test")
        trainers[name] = tr
        rows.append({**ex.report_row(name, rep), "train_s": round(time.perf_counter() - t0, 1)})
        log.info("%s: %.2f%% at %.1f%% modality sensing", name, rep.accuracy, rep.modality_sensing)
    write_csv(rows, out / "headline.csv")
    print("test split")
    print(format_table(rows))

    main_run = trainers.get("lambda2=0.1") or trainers[f"lambda2={lambdas[0]:g}"]
    masked = robustness_random_masking(main_run.model, splits.test, main_run.switches)
    mask_rows = [{"p_drop": p, **ex.report_row(f"p={p:g}", r)} for p, r in masked.items()]
    write_csv(mask_rows, out / "robustness_mask.csv")
    print("\nrandom modality masking")
    print(format_table(mask_rows))

    rep = main_run.evaluate("test")
    write_heatmap(rep.heatmap, rep.names, out, "heatmap_test")
    summary = ex.energy_summary(rep.trace(), ex.power_table(cfg, splits.test), cfg.energy.mode,
                                main_run.model_cfg.layers)
    (out / "energy.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    print("\nsensing energy saving vs dense: "
          f"{summary['comparison']['sensing_energy_savings_pct']:.1f}%")


if __name__ == "__main__":
    main()
