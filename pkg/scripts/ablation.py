"""Component ablation on the synthetic task: the full model plus one run per
switched-off component (or '+'-joined group of components).

    python scripts/ablation.py --out runs/ablation
    python scripts/ablation.py fusion context+predictive --out runs/ablation
"""

import argparse
import logging
from pathlib import Path

from ami import experiments as ex
from ami.config import load_config
from ami.report import format_table

DEFAULT_VARIANTS = ["sigma_delta", "fusion", "context", "predictive"]


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("variants", nargs="*", default=DEFAULT_VARIANTS)
    p.add_argument("--config", default="configs/synthetic.yaml")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    cfg = load_config(args.config, args.overrides)
    rows = ex.ablate(cfg, [ex.parse_variant(v) for v in args.variants], Path(args.out))
    print("validation split")
    print(format_table(rows))


if __name__ == "__main__":
    main()
