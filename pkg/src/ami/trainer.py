"""Truncated-BPTT training over window sequences, evaluation metrics,
robustness protocols and checkpoint persistence."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as tt
from .config import ConfigError, LossConfig, RunConfig, SensingConfig
from .controller import (GateDecision, fixed_gates, gumbel_sigmoid_sample, open_gates, relaxed_decision,
                         temperature_at)
from .data import Dataset, Splits, Stream, chunk_streams, decimate_dataset
from .energy import SensingTrace
from .model import AMIModel, HistoryMemory, ModelConfig, Switches, WindowTrace
from .objectives import (LossWeights, MemoryBank, contrastive_loss, gating_loss, predictive_loss, task_loss,
                         total_loss)
from .optim import AdamW
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "task", "gating", "contrastive", "predictive", "total", "sensing_rate",
               "tau", "lr", "skipped")


# -- model construction ------------------------------------------------------------

def build_model_config(cfg: RunConfig, ds: Dataset) -> ModelConfig:
    return ModelConfig(**dataclasses.asdict(cfg.model), num_classes=ds.num_classes,
                       modality_names=ds.names, channels=ds.channels, window_samples=ds.window_samples)


def build_model(cfg: RunConfig, model_cfg: ModelConfig) -> AMIModel:
    s = cfg.sensing
    return AMIModel(model_cfg, np.random.default_rng([cfg.seed, 0]), s.k_skip, s.theta_init,
                    s.learn_thresholds, s.tau_theta)


def stack_batch(streams: list[Stream]) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-modality ``[B, S, C, T]`` arrays and labels ``[B, S]``."""
    M = len(streams[0].x)
    xs = [np.stack([s.x[m] for s in streams]) for m in range(M)]
    return xs, np.stack([s.y for s in streams])


# -- one unrolled sequence ----------------------------------------------------------

@dataclass
class UnrollResult:
    total: Tensor
    parts: dict[str, Tensor]
    traces: list[WindowTrace]
    logits: list[Tensor]
    decisions: list[GateDecision]
    modality_means: np.ndarray  # [B*S*M, D] detached, for the memory bank
    pred_targets: list[np.ndarray]  # values of the stop-gradient predictive targets

    def sensing_rate(self) -> float:
        return float(np.mean([tr.gates.mean() for tr in self.traces]))


def unroll_sequence(model: AMIModel, xs: list[np.ndarray], y: np.ndarray, weights: LossWeights,
                    switches: Switches, tau: float, rng: np.random.Generator | None,
                    bank: MemoryBank | None = None, loss_cfg: LossConfig | None = None,
                    gate_noise: np.ndarray | None = None, explore_keep: float | None = None,
                    frozen_targets: list[np.ndarray] | None = None) -> UnrollResult:
    """Forward ``S`` consecutive windows carrying memory and gates, and sum the losses.

    Window 0 runs with every gate open. The decision made after window ``t``
    gates window ``t + 1``; the last window's decision would act outside the
    unroll, so it is neither taken nor penalised. ``gate_noise`` (``[S, B, M]``)
    switches the gates to a soft forward with fixed noise, which keeps the
    whole loss differentiable for gradient checks. With ``explore_keep`` set,
    the controller is bypassed and every gate after window 0 is an
    independent draw, open with that probability. ``frozen_targets`` pins the
    stop-gradient predictive targets to given values, so a finite-difference
    check sees the same function the analytic gradient differentiates.
    """
    loss_cfg = loss_cfg or LossConfig()
    B, S = y.shape
    M = model.cfg.num_modalities
    memory = HistoryMemory(model.cfg.history) if switches.context_on else None
    decision: GateDecision | None = None
    task, gate_terms, con, hs = [], [], [], []
    traces, logits, decisions, means = [], [], [], []
    for t in range(S):
        gates = None
        if switches.amc_on:
            gates = open_gates(B, M) if decision is None else decision
        out = model.forward_window([x[:, t] for x in xs], gates, memory, switches, rng)
        task.append(task_loss(out.logits, y[:, t]))
        if switches.contrastive_on:
            present = None if gates is None or not loss_cfg.positives_present_only else gates.p_hard
            con.append(contrastive_loss(out.modality_means, bank, loss_cfg.contrastive_tau, present))
        hs.append(out.h_cls if loss_cfg.pred_source == "cls" else tt.mean(out.R, axis=1))
        means.append(out.modality_means.data)
        traces.append(out.trace)
        logits.append(out.logits)
        if switches.amc_on and t < S - 1 and explore_keep is not None:
            decision = fixed_gates(rng.random((B, M)) < explore_keep)
        elif switches.amc_on and t < S - 1:
            z = model.gate_logits(out.R)
            if gate_noise is not None:
                decision = relaxed_decision(z, tau, gate_noise[t])
            else:
                decision = gumbel_sigmoid_sample(z, tau, rng, training=model.training)
            decisions.append(decision)
            gate_terms.append(gating_loss(decision.p_soft))
    if S > 1:
        log.debug("unroll of %d windows", S)

    def avg(terms):
        if not terms:
            return Tensor(0.0)
        acc = terms[0]
        for x in terms[1:]:
            acc = acc + x
        return acc * (1.0 / len(terms))

    pred, targets = [], []
    if switches.predictive_on:
        d = loss_cfg.pred_offset
        targets = [hs[t + d].data for t in range(S - d)]
        fut = targets if frozen_targets is None else frozen_targets
        pred = [predictive_loss(hs[t], Tensor(fut[t]), model.predictor) for t in range(S - d)]
    parts = {"task": avg(task), "gating": avg(gate_terms), "contrastive": avg(con), "predictive": avg(pred)}
    D = model.cfg.d_model
    bank_emb = np.stack(means, axis=1).reshape(-1, D)
    return UnrollResult(total_loss(parts, weights), parts, traces, logits, decisions, bank_emb, targets)


# -- evaluation ---------------------------------------------------------------------

def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    total = cm.sum()
    return 100.0 * np.trace(cm) / total if total else 0.0


def macro_f1_from_confusion(cm: np.ndarray) -> float:
    """Mean per-class F1 (percent) over classes that occur in labels or predictions."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    seen = denom > 0
    if not seen.any():
        return 0.0
    return float(100.0 * np.mean(2 * tp[seen] / denom[seen]))


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    modality_sensing: float
    patch_sensing: float
    sensing: float  # patch-inclusive when Sigma-Delta is on, else modality level
    confusion: np.ndarray
    gates: np.ndarray  # [W, M] gate trace over evaluated windows
    active: np.ndarray  # [W, M, L]
    names: list[str]
    window_seconds: float
    labels: np.ndarray
    preds: np.ndarray
    logits: np.ndarray  # [W, C]

    @property
    def heatmap(self) -> np.ndarray:
        """Mean activation frequency per modality and patch index, ``[M, L]``."""
        return self.active.mean(axis=0)

    def trace(self) -> SensingTrace:
        return SensingTrace(self.names, self.gates, self.active.astype(np.float64), self.window_seconds)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "modality_sensing": self.modality_sensing, "patch_sensing": self.patch_sensing,
                "sensing": self.sensing, "windows": int(len(self.labels)),
                "confusion": self.confusion.tolist(), "modalities": self.names,
                "per_modality_sensing": dict(zip(self.names, self.gates.mean(axis=0).tolist())),
                "heatmap": self.heatmap.tolist()}

    def save(self, out_dir, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(out / f"{stem}_gates.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "label", "pred", *self.names])
            for i, (yl, pr, g) in enumerate(zip(self.labels, self.preds, self.gates)):
                w.writerow([i, int(yl), int(pr), *(int(v) for v in g)])


def evaluate(model: AMIModel, ds: Dataset, switches: Switches, batch: int = 64,
             p_drop: float | None = None, mask_seed: int = 0) -> EvalReport:
    """Run every stream of ``ds`` end to end with deterministic gates.

    With ``p_drop`` set, the controller is bypassed and each modality is
    replaced by its mask embedding independently with probability ``p_drop``
    in every window.
    """
    if not ds.streams:
        raise ValueError("cannot evaluate an empty split")
    M = model.cfg.num_modalities
    mask_rng = np.random.default_rng(mask_seed)
    by_len: dict[int, list[Stream]] = {}
    for s in ds.streams:
        by_len.setdefault(len(s), []).append(s)
    labels, preds, gates_all, active_all, logits_all = [], [], [], [], []
    was_training = model.training
    model.eval()
    with tt.no_grad():
        for S in sorted(by_len):
            group = by_len[S]
            for i in range(0, len(group), batch):
                xs, y = stack_batch(group[i:i + batch])
                B = len(y)
                memory = HistoryMemory(model.cfg.history) if switches.context_on else None
                decision = None
                per_t = []
                for t in range(S):
                    if p_drop is not None:
                        gates = fixed_gates(mask_rng.random((B, M)) >= p_drop)
                    elif switches.amc_on:
                        gates = open_gates(B, M) if decision is None else decision
                    else:
                        gates = None
                    out = model.forward_window([x[:, t] for x in xs], gates, memory, switches)
                    if switches.amc_on and p_drop is None:
                        decision = gumbel_sigmoid_sample(model.gate_logits(out.R), 1.0, None, training=False)
                    per_t.append((out.logits.data, out.trace))
                # stream-major order: all windows of stream 0, then stream 1, ...
                for b in range(B):
                    for t in range(S):
                        lg, tr = per_t[t]
                        logits_all.append(lg[b])
                        gates_all.append(tr.gates[b])
                        active_all.append(tr.active[b])
                    labels.append(y[b])
    model.train(was_training)
    logits = np.stack(logits_all)
    y_true = np.concatenate(labels)
    y_pred = logits.argmax(axis=1)
    gates = np.stack(gates_all)
    active = np.stack(active_all)
    cm = confusion_matrix(y_true, y_pred, model.cfg.num_classes)
    mod_rate = 100.0 * float(gates.mean())
    patch_rate = 100.0 * float((gates * active.mean(axis=-1)).mean())
    return EvalReport(accuracy_from_confusion(cm), macro_f1_from_confusion(cm), mod_rate, patch_rate,
                      patch_rate if switches.sigma_delta_on else mod_rate, cm, gates, active,
                      list(model.cfg.modality_names), ds.window_seconds, y_true, y_pred, logits)


def robustness_random_masking(model: AMIModel, ds: Dataset, switches: Switches,
                              ps=(0.0, 0.2, 0.5, 0.8), batch: int = 64, seed: int = 0) -> dict[float, EvalReport]:
    """Evaluate with the controller off and Bernoulli(p) modality dropout."""
    sw = dataclasses.replace(switches, amc_on=False)
    return {p: evaluate(model, ds, sw, batch, p_drop=p, mask_seed=seed) for p in ps}


def resample_model(model: AMIModel, factor: int) -> AMIModel:
    """Copy of ``model`` for inputs decimated by ``factor``.

    The patch size shrinks to ``P0 / factor`` so the patch count is
    unchanged; each tokenizer kernel is summed over blocks of ``factor``
    taps, which keeps its response to slowly varying deltas.
    """
    P0 = model.cfg.patch_size
    if factor < 1 or P0 % factor:
        raise ValueError(f"decimation factor {factor} must divide the patch size {P0}")
    if factor == 1:
        return model
    new = copy.deepcopy(model)
    new.cfg = dataclasses.replace(model.cfg, patch_size=P0 // factor,
                                  window_samples=model.cfg.window_samples // factor)
    for W in new.tokenizers:
        D, C, P = W.shape
        W.data = W.data.reshape(D, C, P // factor, factor).sum(axis=-1)
    return new


def robustness_sampling_rate(model: AMIModel, ds: Dataset, switches: Switches, rate_hz: float,
                             batch: int = 64) -> EvalReport:
    ratio = ds.rate_hz / rate_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(f"{rate_hz} Hz is not an integer decimation of {ds.rate_hz} Hz")
    return evaluate(resample_model(model, factor), decimate_dataset(ds, factor), switches, batch)


# -- training loop ------------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: RunConfig, splits: Splits, out_dir=None):
        self.cfg = cfg
        self.splits = splits
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model_cfg = build_model_config(cfg, splits.train)
        self.model = build_model(cfg, self.model_cfg)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.weights = LossWeights(cfg.loss.lambda1, cfg.loss.lambda2, cfg.loss.lambda3, cfg.loss.lambda4)
        self.switches = cfg.train.switches
        self.chunks = chunk_streams(splits.train.streams, cfg.train.bptt_window)
        short = sum(len(c) < cfg.train.bptt_window for c in self.chunks)
        if short:
            log.info("%d sequences shorter than the %d-window unroll; they run as shorter unrolls",
                     short, cfg.train.bptt_window)
        self.steps_per_epoch = len(self._plan_batches(np.random.default_rng(0)))
        self.total_steps = cfg.train.epochs * self.steps_per_epoch
        t = cfg.train
        self.opt = AdamW(self.model.trainable_parameters(), t.lr, t.betas, t.eps, t.weight_decay,
                         self.total_steps, t.grad_clip, t.max_bad_steps)
        self.bank = MemoryBank(cfg.loss.bank_size)
        self.epoch = 0
        self.log_rows: list[dict] = []

    def _plan_batches(self, rng: np.random.Generator) -> list[list[int]]:
        buckets: dict[int, list[int]] = {}
        for i, c in enumerate(self.chunks):
            buckets.setdefault(len(c), []).append(i)
        batches = []
        bs = self.cfg.train.batch
        for length in sorted(buckets):
            idx = rng.permutation(buckets[length])
            batches += [list(idx[i:i + bs]) for i in range(0, len(idx), bs)]
        order = rng.permutation(len(batches))
        return [batches[i] for i in order]

    def in_warmup(self, step: int) -> bool:
        return step < self.cfg.sensing.gate_warmup * self.total_steps

    def weights_at(self, step: int) -> LossWeights:
        """Loss weights with the gating term held at zero during the warm-up span."""
        if self.in_warmup(step):
            return dataclasses.replace(self.weights, lambda2=0.0)
        return self.weights

    def train_step(self, chunk_ids: list[int]) -> dict:
        xs, y = stack_batch([self.chunks[i] for i in chunk_ids])
        tau = temperature_at(self.opt.step_count, self.total_steps, self.cfg.sensing.tau_start,
                             self.cfg.sensing.tau_end)
        self.model.train()
        step = self.opt.step_count
        keep = self.cfg.sensing.warmup_keep if self.in_warmup(step) else None
        res = unroll_sequence(self.model, xs, y, self.weights_at(step), self.switches, tau, self.rng,
                              self.bank if self.switches.contrastive_on else None, self.cfg.loss,
                              explore_keep=keep)
        self.model.zero_grad()
        w = self.weights_at(step)
        if self.cfg.sensing.gate_aux_grad or keep is not None or not self.switches.amc_on:
            tt.backward(res.total)
        else:
            self._backward_routed(res, w)
        lr = self.opt.current_lr()
        ok = self.opt.step()
        if self.switches.contrastive_on:
            self.bank.push(res.modality_means)
        row = {"step": self.opt.step_count, "epoch": self.epoch,
               **{k: float(v.data) for k, v in res.parts.items()},
               "total": float(res.total.data), "sensing_rate": res.sensing_rate(), "tau": tau, "lr": lr,
               "skipped": int(not ok)}
        self.log_rows.append(row)
        return row

    def _backward_routed(self, res: UnrollResult, w: LossWeights) -> None:
        """Full-loss gradients everywhere except the gate network, which only
        sees the task and gating terms."""
        primary = res.parts["task"] * w.lambda1 + res.parts["gating"] * w.lambda2
        aux = res.parts["contrastive"] * w.lambda3 + res.parts["predictive"] * w.lambda4
        tt.backward(primary)
        gate_params = self.model.gate_net.parameters()
        kept = [None if p.grad is None else p.grad.copy() for p in gate_params]
        if aux.requires_grad:
            tt.backward(aux)
        for p, g in zip(gate_params, kept):
            p.grad = g

    def train_epoch(self) -> list[dict]:
        rows = [self.train_step(ids) for ids in self._plan_batches(self.rng)]
        self.epoch += 1
        return rows

    def fit(self, epochs: int | None = None, checkpoint_every: int = 0) -> list[dict]:
        target = self.cfg.train.epochs if epochs is None else epochs
        start = time.perf_counter()
        while self.epoch < target:
            rows = self.train_epoch()
            log.info("epoch %d/%d  loss %.4f  task %.4f  sensing %.3f  (%.1fs)", self.epoch, target,
                     np.mean([r["total"] for r in rows]), np.mean([r["task"] for r in rows]),
                     np.mean([r["sensing_rate"] for r in rows]), time.perf_counter() - start)
            if self.out_dir is not None:
                self.write_log()
                if checkpoint_every and self.epoch % checkpoint_every == 0:
                    self.save(self.out_dir / "checkpoint.ami")
        return self.log_rows

    def evaluate(self, split: str = "val", **kw) -> EvalReport:
        ds = getattr(self.splits, split)
        return evaluate(self.model, ds, self.switches, self.cfg.train.eval_batch, **kw)

    def write_log(self, path=None) -> Path:
        path = Path(path) if path is not None else self.out_dir / "train_log.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            w.writeheader()
            for r in self.log_rows:
                w.writerow({k: r[k] for k in LOG_COLUMNS})
        return path

    # -- persistence ---------------------------------------------------------------
    def state_blocks(self) -> tuple[dict[str, np.ndarray], dict]:
        blocks = {f"param/{n}": p.data for n, p in self.model.named_parameters()}
        blocks.update({f"adam/{k}": v for k, v in self.opt.state_arrays().items()})
        snap = self.bank.snapshot()
        blocks.update({f"bank/{k}": v for k, v in snap.items()})
        meta = {"config": self.cfg.to_dict(), "model": dataclasses.asdict(self.model_cfg),
                "epoch": self.epoch, "step": self.opt.step_count, "rng": self.rng.bit_generator.state,
                "log": self.log_rows}
        return blocks, meta

    def save(self, path) -> Path:
        blocks, meta = self.state_blocks()
        checkpoint.save(path, blocks, meta, kind="model")
        return Path(path)

    def resume(self, path) -> None:
        blocks, meta = checkpoint.load(path, kind="model")
        check_model_config(self.model_cfg, meta["model"])
        load_parameters(self.model, blocks)
        self.opt.load_state_arrays({k[5:]: v for k, v in blocks.items() if k.startswith("adam/")}, meta["step"])
        self.bank.clear()
        emb = blocks.get("bank/embeddings")
        if emb is not None and emb.size:
            self.bank.push(emb, blocks["bank/window"], blocks["bank/modality"])
        self.rng.bit_generator.state = meta["rng"]
        self.epoch = meta["epoch"]
        self.log_rows = [dict(r) for r in meta["log"]]


_DATA_FIELDS = ("num_classes", "modality_names", "channels", "window_samples")


def check_model_config(expected: ModelConfig, stored: dict) -> None:
    """Raise naming the first field where a checkpoint disagrees with the config."""
    exp = dataclasses.asdict(expected)
    if len(stored.get("channels", [])) != len(exp["channels"]):
        raise ConfigError("data.modalities", f"checkpoint has {len(stored.get('channels', []))} modalities, "
                                             f"config has {len(exp['channels'])}")
    for k, v in exp.items():
        if stored.get(k) != v:
            section = "data" if k in _DATA_FIELDS else "model"
            raise ConfigError(f"{section}.{k}", f"checkpoint has {stored.get(k)!r}, config has {v!r}")


def load_parameters(model: AMIModel, blocks: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in blocks:
            raise checkpoint.CheckpointError(f"checkpoint lacks parameter '{name}'")
        if blocks[key].shape != p.data.shape:
            raise checkpoint.CheckpointError(f"parameter '{name}' has shape {blocks[key].shape}, "
                                             f"model expects {p.data.shape}")
        p.data = blocks[key].astype(np.float64)


def load_model(path, expected: ModelConfig | None = None) -> tuple[AMIModel, RunConfig]:
    """Model and run config from a checkpoint; ``expected`` (built from the
    current config and dataset), if given, must match the stored shape."""
    from .config import from_dict

    blocks, meta = checkpoint.load(path, kind="model")
    if expected is not None:
        check_model_config(expected, meta["model"])
    stored_cfg = from_dict(RunConfig, meta["config"])
    model = build_model(stored_cfg, ModelConfig(**meta["model"]))
    load_parameters(model, blocks)
    return model, stored_cfg
