"""Declarative run configuration: nested dataclasses loaded from YAML with
strict key checking and dotted-path overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SynthSpec
from .model import Switches


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)


@dataclass
class FilesSpec:
    paths: list[str] = field(default_factory=list)
    # modality name -> column indices in the delimited file
    column_map: dict[str, list[int]] = field(default_factory=dict)
    label_column: int = -1
    rate_hz: float = 50.0
    window_samples: int = 100
    stride: int = 100
    num_classes: int = 12
    drop_null: bool = True
    null_label: int = 0
    label_offset: int = 1
    # per-modality power range [min, max] in mW
    power_mw: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: SynthSpec = field(default_factory=SynthSpec)
    files: FilesSpec = field(default_factory=FilesSpec)
    cache: str = ""
    normalize: bool = True

    def __post_init__(self):
        if self.source not in ("synthetic", "files", "cache"):
            raise ConfigError("data.source", f"must be synthetic, files or cache, got {self.source!r}")


@dataclass
class ModelSection:
    d_model: int = 256
    layers: int = 4
    heads: int = 8
    ff_dim: int = 1024
    history: int = 10
    gate_hidden: int = 256
    patch_size: int = 10
    dropout: float = 0.0
    gate_init_bias: float = 2.0


@dataclass
class SensingConfig:
    k_skip: int = 2
    theta_init: float = 0.1
    learn_thresholds: bool = False
    tau_theta: float = 0.1
    tau_start: float = 1.0
    tau_end: float = 0.5
    # fraction of training during which gates are random draws kept open with
    # probability warmup_keep and the gating weight is held at 0
    gate_warmup: float = 0.0
    warmup_keep: float = 0.5
    # whether the contrastive and predictive terms reach the gate network;
    # when false it learns from the task and gating terms only
    gate_aux_grad: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gate_warmup <= 1.0:
            raise ConfigError("sensing.gate_warmup", "must lie in [0, 1]")
        if not 0.0 < self.warmup_keep <= 1.0:
            raise ConfigError("sensing.warmup_keep", "must lie in (0, 1]")
        if self.k_skip < 0:
            raise ConfigError("sensing.k_skip", "must be >= 0")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ConfigError("sensing.tau_start", "temperatures must be positive")


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.05
    lambda4: float = 0.2
    contrastive_tau: float = 0.1
    bank_size: int = 512
    pred_offset: int = 1
    pred_source: str = "cls"
    # restrict contrastive positives to modalities whose gate is open
    positives_present_only: bool = False

    def __post_init__(self):
        for k in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, k) < 0:
                raise ConfigError(f"loss.{k}", "must be non-negative")
        if self.pred_source not in ("cls", "mean"):
            raise ConfigError("loss.pred_source", "must be 'cls' or 'mean'")
        if self.pred_offset < 1:
            raise ConfigError("loss.pred_offset", "must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-4
    min_lr: float = 0.0
    weight_decay: float = 1e-3
    bptt_window: int = 10
    grad_clip: float = 1.0
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    max_bad_steps: int = 10
    eval_batch: int = 64
    switches: Switches = field(default_factory=Switches)

    def __post_init__(self):
        if self.bptt_window < 1:
            raise ConfigError("train.bptt_window", "must be >= 1")
        if self.lr <= 0:
            raise ConfigError("train.lr", "must be positive")
        if self.batch < 1:
            raise ConfigError("train.batch", "must be >= 1")


@dataclass
class EnergyConfig:
    # overrides for per-modality [min, max] mW; defaults come from the dataset
    power_mw: dict[str, list[float]] = field(default_factory=dict)
    capacity_mwh: float = 300.0
    token_mj: float = 0.0
    layer_mj: float = 0.0
    controller_mj: float = 0.0
    point: str = "mid"
    mode: str = "sampling_and_compute"

    def __post_init__(self):
        if self.point not in ("min", "mid", "max"):
            raise ConfigError("energy.point", "must be min, mid or max")
        if self.mode not in ("sampling_and_compute", "compute_only"):
            raise ConfigError("energy.mode", "must be sampling_and_compute or compute_only")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- building from plain dicts ---------------------------------------------------

ALIASES = {"λ1": "loss.lambda1", "λ2": "loss.lambda2", "λ3": "loss.lambda3", "λ4": "loss.lambda4",
           "lambda1": "loss.lambda1", "lambda2": "loss.lambda2", "lambda3": "loss.lambda3",
           "lambda4": "loss.lambda4"}


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads "3e-3" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        (inner,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        _, inner = typing.get_args(tp)
        return {str(k): _coerce(v, inner, f"{path}.{k}") for k, v in value.items()}
    return value


def from_dict(cls, raw: dict | None, path: str = ""):
    raw = raw or {}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, f"unknown key (valid: {', '.join(sorted(names))})")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(value, hints[key], f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(dotted, f"'{k}' is not a section")
        node = nxt
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    key, raw = text.split("=", 1)
    key = ALIASES.get(key.strip(), key.strip())
    return key, yaml.safe_load(raw) if raw.strip() else ""


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    tree: dict = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from None
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
        if not isinstance(tree, dict):
            raise ConfigError(str(path), "top level must be a mapping")
    for item in overrides or []:
        key, value = parse_override(item)
        _set_path(tree, key, value)
    return from_dict(RunConfig, tree)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
