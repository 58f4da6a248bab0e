"""Experiment drivers shared by the command line and the scripts: dataset
loading from a run config, training runs, lambda-2 sweeps, ablations,
robustness protocols and energy reports."""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from . import energy as en
from .config import ConfigError, RunConfig, dump_config
from .data import (Dataset, ModalitySpec, Splits, load_dataset, load_delimited, prepare_splits,
                   recording_to_streams, synth_generate)
from .model import Switches
from .report import write_csv
from .trainer import EvalReport, Trainer, load_model, robustness_random_masking, robustness_sampling_rate

log = logging.getLogger(__name__)

SWITCH_NAMES = ("amc", "sigma_delta", "fusion", "context", "contrastive", "predictive")
TABLE_COLUMNS = ["variant", "accuracy", "macro_f1", "sensing", "modality_sensing", "patch_sensing"]


# -- data ------------------------------------------------------------------------

def load_data(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        return synth_generate(d.synthetic, cfg.seed)
    if d.source == "cache":
        if not d.cache:
            raise ConfigError("data.cache", "path required when data.source is 'cache'")
        return load_dataset(d.cache)
    f = d.files
    if not f.paths:
        raise ConfigError("data.files.paths", "at least one file is required when data.source is 'files'")
    if not f.column_map:
        raise ConfigError("data.files.column_map", "must map modality names to columns")
    names = list(f.column_map)
    streams = []
    for subject, path in enumerate(f.paths):
        rec = load_delimited(path, f.column_map, f.label_column)
        streams += recording_to_streams(rec, names, f.window_samples, f.stride, f.drop_null, f.null_label,
                                        f.label_offset, subject)
    if not streams:
        raise ValueError("no labelled windows in the supplied files")
    mods = [ModalitySpec(n, len(f.column_map[n]), tuple(f.power_mw.get(n, (1.0, 1.0)))) for n in names]
    missing = [n for n in names if n not in f.power_mw and n not in cfg.energy.power_mw]
    if missing:
        log.warning("no power range for %s; using 1 mW", ", ".join(missing))
    return Dataset(mods, streams, f.rate_hz, f.window_samples, f.num_classes, {"source": "files"})


def load_splits(cfg: RunConfig) -> Splits:
    return prepare_splits(load_data(cfg), cfg.seed, cfg.data.normalize)


def power_table(cfg: RunConfig, ds: Dataset) -> en.PowerTable:
    ranges = {m.name: tuple(m.power_mw) for m in ds.modalities}
    ranges.update({k: tuple(v) for k, v in cfg.energy.power_mw.items()})
    e = cfg.energy
    return en.PowerTable.from_ranges(ranges, capacity_mwh=e.capacity_mwh, token_mj=e.token_mj,
                                     layer_mj=e.layer_mj, controller_mj=e.controller_mj, point=e.point)


# -- variants --------------------------------------------------------------------

def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Copy of ``cfg`` with ``section={field: value}`` replacements."""
    out = cfg
    for name, fields in sections.items():
        out = dataclasses.replace(out, **{name: dataclasses.replace(getattr(out, name), **fields)})
    return out


def with_switches(cfg: RunConfig, off: list[str] | tuple[str, ...] = ()) -> RunConfig:
    unknown = [s for s in off if s not in SWITCH_NAMES]
    if unknown:
        raise ConfigError("switches", f"unknown switch {unknown[0]!r} (valid: {', '.join(SWITCH_NAMES)})")
    sw = dataclasses.replace(cfg.train.switches, **{f"{s}_on": False for s in off})
    return with_overrides(cfg, train={"switches": sw})


def dense_config(cfg: RunConfig) -> RunConfig:
    """Same architecture with every modality and every patch sensed."""
    return with_switches(cfg, ["amc", "sigma_delta"])


# -- runs ------------------------------------------------------------------------

def report_row(variant, r: EvalReport) -> dict:
    return {"variant": variant, "accuracy": r.accuracy, "macro_f1": r.macro_f1, "sensing": r.sensing,
            "modality_sensing": r.modality_sensing, "patch_sensing": r.patch_sensing}


def train_run(cfg: RunConfig, out_dir, splits: Splits | None = None, resume=None,
              checkpoint_every: int = 1) -> tuple[Trainer, EvalReport]:
    """Train, then write the config echo, loss log, checkpoint and validation report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    trainer = Trainer(cfg, splits if splits is not None else load_splits(cfg), out)
    if resume:
        trainer.resume(resume)
        log.info("resumed from %s at epoch %d", resume, trainer.epoch)
    trainer.fit(checkpoint_every=checkpoint_every)
    trainer.write_log()
    trainer.save(out / "checkpoint.ami")
    report = trainer.evaluate("val")
    report.save(out, "eval_val")
    return trainer, report


def sweep_lambda2(cfg: RunConfig, values, out_dir, splits: Splits | None = None) -> list[dict]:
    if not values:
        raise ConfigError("values", "at least one lambda2 value is required")
    splits = splits if splits is not None else load_splits(cfg)
    rows = []
    for v in values:
        run_cfg = with_overrides(cfg, loss={"lambda2": float(v)})
        _, rep = train_run(run_cfg, Path(out_dir) / f"lambda2_{v:g}", splits)
        rows.append({"lambda2": float(v), **report_row(f"lambda2={v:g}", rep)})
    write_csv(rows, Path(out_dir) / "sweep_lambda2.csv", ["lambda2"] + TABLE_COLUMNS[1:])
    return rows


def sweep_rows_from_reports(out_dir, values) -> list[dict]:
    """Rebuild the sweep table from the per-run validation reports."""
    rows = []
    for v in values:
        d = json.loads((Path(out_dir) / f"lambda2_{v:g}" / "eval_val.json").read_text())
        rows.append({"lambda2": float(v), "accuracy": d["accuracy"], "macro_f1": d["macro_f1"],
                     "sensing": d["sensing"], "modality_sensing": d["modality_sensing"],
                     "patch_sensing": d["patch_sensing"]})
    return rows


def parse_variant(text: str) -> list[str]:
    """``"fusion+context"`` -> ``["fusion", "context"]``."""
    parts = [p.strip() for p in text.split("+") if p.strip()]
    with_switches(RunConfig(), parts)  # validates names
    return parts


def ablate(cfg: RunConfig, variants: list[list[str]], out_dir, splits: Splits | None = None) -> list[dict]:
    """Full model plus one run per variant (each variant switches off a set of components)."""
    for v in variants:
        with_switches(cfg, v)
    splits = splits if splits is not None else load_splits(cfg)
    rows = []
    for off in [[]] + list(variants):
        name = "full" if not off else "w/o " + "+".join(off)
        stem = "full" if not off else "wo_" + "_".join(off)
        _, rep = train_run(with_switches(cfg, off), Path(out_dir) / stem, splits)
        rows.append(report_row(name, rep))
    write_csv(rows, Path(out_dir) / "ablation.csv", TABLE_COLUMNS)
    return rows


def robustness_mask(cfg: RunConfig, checkpoint, ps, out_dir, split: str = "test",
                    splits: Splits | None = None) -> list[dict]:
    model, _ = load_model(checkpoint)
    ds = getattr(splits if splits is not None else load_splits(cfg), split)
    reps = robustness_random_masking(model, ds, cfg.train.switches, tuple(ps), cfg.train.eval_batch, cfg.seed)
    rows = [{"p_drop": p, **report_row(f"p={p:g}", r)} for p, r in reps.items()]
    write_csv(rows, Path(out_dir) / "robustness_mask.csv", ["p_drop"] + TABLE_COLUMNS[1:])
    return rows


def robustness_rate(cfg: RunConfig, checkpoint, rates, out_dir, split: str = "test",
                    splits: Splits | None = None) -> list[dict]:
    model, _ = load_model(checkpoint)
    ds = getattr(splits if splits is not None else load_splits(cfg), split)
    rows = []
    for hz in rates:
        r = robustness_sampling_rate(model, ds, cfg.train.switches, float(hz), cfg.train.eval_batch)
        rows.append({"rate_hz": float(hz), **report_row(f"{hz:g} Hz", r)})
    write_csv(rows, Path(out_dir) / "robustness_rate.csv", ["rate_hz"] + TABLE_COLUMNS[1:])
    return rows


# -- energy ----------------------------------------------------------------------

def dense_trace(trace: en.SensingTrace) -> en.SensingTrace:
    return en.SensingTrace(trace.names, np.ones_like(trace.gates), np.ones_like(trace.active),
                           trace.window_seconds)


def energy_summary(trace: en.SensingTrace, table: en.PowerTable, mode: str, layers: int) -> dict:
    """AMI-vs-dense energy for one sensing trace plus the subset battery curve."""
    ami = en.energy_report(trace, table, mode, layers, controller=True)
    base_trace = dense_trace(trace)
    base = en.energy_report(base_trace, table, mode, layers)
    sens_ami = 100.0 * trace.patch_rate()
    comparison = en.savings_report(ami, base, sens_ami, 100.0)
    ami.savings_pct = {k: v for k, v in comparison.items() if k.endswith("savings_pct")}
    curve = [{"subset": s, "power_mw": p, "battery_life_h": h} for s, p, h in en.battery_curve(table)]
    duty = dict(zip(trace.names, trace.duty_cycles().tolist()))
    return {"mode": mode, "point": table.point, "capacity_mwh": table.capacity_mwh,
            "ami": ami.to_dict(), "dense": base.to_dict(), "comparison": comparison,
            "duty_cycles": duty, "battery_curve": curve,
            "dense_sensing_pct": 100.0 * base_trace.patch_rate()}
