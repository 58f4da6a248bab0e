"""Command-line harness.

Every command reads one YAML config (``--config``) plus dotted overrides
(``--set section.key=value``). Artifacts go under the run's ``output_dir``,
which is resolved against ``$AMI_OUTPUT_ROOT`` when that is set.

Exit codes: 0 success, 2 configuration error, 1 any other failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import energy as en
from . import experiments as ex
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, dump_config, load_config, parse_override
from .data import save_dataset
from .report import format_table, write_csv, write_heatmap
from .trainer import evaluate, load_model

log = logging.getLogger("ami")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
OUTPUT_ROOT_ENV = "AMI_OUTPUT_ROOT"


def output_dir(cfg: RunConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg.output_dir)
    return Path(root) / out if root and not out.is_absolute() else out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("values", f"expected comma-separated numbers, got {text!r}") from None


def _echo(cfg: RunConfig, overrides: list[str], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in overrides:
        key, value = parse_override(item)
        log.info("override %s = %r", key, value)
    log.info("config digest %s, output %s", cfg.digest(), out)
    print(dump_config(cfg), end="", file=sys.stderr)
    (out / "config.yaml").write_text(dump_config(cfg))


def _emit(rows: list[dict], title: str) -> None:
    print(title)
    print(format_table(rows))


def _checkpoint(args, out: Path) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.ami"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found (train first or pass --checkpoint)")
    return path


# -- commands --------------------------------------------------------------------

def cmd_train(cfg, args, out):
    _, rep = ex.train_run(cfg, out, resume=args.resume, checkpoint_every=args.checkpoint_every)
    _emit([ex.report_row("val", rep)], f"trained {cfg.train.epochs} epochs -> {out}")


def cmd_eval(cfg, args, out):
    model, stored = load_model(_checkpoint(args, out))
    splits = ex.load_splits(cfg)
    rep = evaluate(model, getattr(splits, args.split), stored.train.switches, cfg.train.eval_batch)
    rep.save(out, f"eval_{args.split}")
    _emit([ex.report_row(args.split, rep)], f"evaluation on {args.split}")


def cmd_sweep(cfg, args, out):
    values = _floats(args.values)
    rows = ex.sweep_lambda2(cfg, values, out)
    _emit(rows, "lambda2 sweep")


def cmd_ablate(cfg, args, out):
    variants = [ex.parse_variant(v) for v in args.variants]
    rows = ex.ablate(cfg, variants, out)
    _emit(rows, "ablation")


def cmd_robust_mask(cfg, args, out):
    rows = ex.robustness_mask(cfg, _checkpoint(args, out), _floats(args.ps), out, args.split)
    _emit(rows, "random modality masking")


def cmd_robust_rate(cfg, args, out):
    rows = ex.robustness_rate(cfg, _checkpoint(args, out), _floats(args.rates), out, args.split)
    _emit(rows, "sampling-rate robustness")


def cmd_heatmap(cfg, args, out):
    model, stored = load_model(_checkpoint(args, out))
    ds = getattr(ex.load_splits(cfg), args.split)
    rep = evaluate(model, ds, stored.train.switches, cfg.train.eval_batch)
    csv_path, svg_path = write_heatmap(rep.heatmap, rep.names, out, f"heatmap_{args.split}")
    print(f"heatmap written to {csv_path} and {svg_path}")


def cmd_energy(cfg, args, out):
    if args.policy:
        policy = json.loads(Path(args.policy).read_text())
        duty = policy["duty_cycles"]
        ranges = {k: tuple(v) for k, v in policy.get("power_mw", {}).items()}
        ranges.update({k: tuple(v) for k, v in cfg.energy.power_mw.items()})
        missing = sorted(set(duty) - set(ranges))
        if missing:
            raise ConfigError("energy.power_mw", f"no power range for {', '.join(missing)}")
        table = en.PowerTable.from_ranges({n: ranges[n] for n in duty}, capacity_mwh=cfg.energy.capacity_mwh,
                                          point=cfg.energy.point)
        hours = en.battery_life(duty, table)
        rows = [{"subset": s, "power_mw": p, "battery_life_h": h} for s, p, h in en.battery_curve(table)]
        rows.append({"subset": "policy", "power_mw": table.capacity_mwh / hours, "battery_life_h": hours})
        summary = {"policy": policy, "battery_life_h": hours, "battery_curve": rows}
    else:
        model, stored = load_model(_checkpoint(args, out))
        ds = getattr(ex.load_splits(cfg), args.split)
        rep = evaluate(model, ds, stored.train.switches, cfg.train.eval_batch)
        table = ex.power_table(cfg, ds)
        summary = ex.energy_summary(rep.trace(), table, cfg.energy.mode, model.cfg.layers)
        rows = summary["battery_curve"]
        _emit([{"run": "dense", **summary["dense"]}, {"run": "ami", **summary["ami"]}],
              "energy per window")
    (out / "energy.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    write_csv(rows, out / "battery_curve.csv", ["subset", "power_mw", "battery_life_h"])
    _emit(rows, "battery life per sensor subset")


def cmd_gen_data(cfg, args, out):
    ds = ex.load_data(cfg)
    path = Path(args.output) if args.output else out / "dataset.amid"
    if not path.is_absolute() and args.output:
        path = out / path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, path)
    print(f"{len(ds.streams)} streams, {ds.num_windows()} windows -> {path}")


COMMANDS = {
    "train": (cmd_train, "train a model and evaluate it on the validation split"),
    "eval": (cmd_eval, "evaluate a checkpoint"),
    "sweep-lambda2": (cmd_sweep, "train once per gating-loss weight and tabulate"),
    "ablate": (cmd_ablate, "train the full model and variants with components switched off"),
    "robustness-mask": (cmd_robust_mask, "evaluate under random modality masking"),
    "robustness-rate": (cmd_robust_rate, "evaluate at reduced sampling rates"),
    "heatmap": (cmd_heatmap, "per-patch sensing-rate heatmap (CSV and SVG)"),
    "energy": (cmd_energy, "energy, savings and battery-life report"),
    "gen-data": (cmd_gen_data, "materialise the configured dataset into a cache file"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ami", description="Adaptive multimodal sensing experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", help="YAML run config")
        c.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, repeatable (e.g. --set loss.lambda2=0.2)")
        if name in ("eval", "robustness-mask", "robustness-rate", "heatmap", "energy"):
            c.add_argument("--checkpoint", help="defaults to <output_dir>/checkpoint.ami")
            c.add_argument("--split", default="test" if name.startswith("robust") else "val",
                           choices=("train", "val", "test"))
        if name == "train":
            c.add_argument("--resume", help="checkpoint to continue from")
            c.add_argument("--checkpoint-every", type=int, default=1, help="epochs between checkpoints")
        if name == "sweep-lambda2":
            c.add_argument("--values", default="0.05,0.1,0.2")
        if name == "ablate":
            c.add_argument("variants", nargs="*", metavar="VARIANT",
                           help=f"switches to turn off, joined with '+'; one of {', '.join(ex.SWITCH_NAMES)}")
        if name == "robustness-mask":
            c.add_argument("--ps", default="0,0.2,0.5,0.8")
        if name == "robustness-rate":
            c.add_argument("--rates", required=True, help="comma-separated target rates in Hz")
        if name == "energy":
            c.add_argument("--policy", help="JSON with duty_cycles (and power_mw) instead of a checkpoint")
        if name == "gen-data":
            c.add_argument("--output", help="cache file (relative paths land in the output directory)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers = [handler]
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    log.propagate = False
    try:
        cfg = load_config(args.config, args.overrides)
        out = output_dir(cfg)
        cfg = dataclasses.replace(cfg, output_dir=str(out))
        _echo(cfg, args.overrides, out)
        COMMANDS[args.command][0](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
