"""Multimodal prediction model: Sigma-Delta patch tokenizers, all-to-all
cross-modal fusion, positional encoding, temporal context over a short
memory of past windows, a small transformer backbone with a CLS head, the
gate network and the predictive-coding head."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import sigma_delta as sd
from . import tensor as tt
from .controller import GateDecision, GateNet, aggregate_features
from .nn import MLP, CrossAttnBlock, LayerNorm, Linear, Module, TransformerBlock, param, sinusoidal_positions
from .tensor import Tensor


@dataclass
class ModelConfig:
    d_model: int = 256
    layers: int = 4
    heads: int = 8
    ff_dim: int = 1024
    history: int = 10
    gate_hidden: int = 256
    patch_size: int = 10
    dropout: float = 0.0
    gate_init_bias: float = 2.0
    # filled in from the dataset
    num_classes: int = 12
    modality_names: list[str] = field(default_factory=list)
    channels: list[int] = field(default_factory=list)
    window_samples: int = 100

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"model.d_model={self.d_model} not divisible by model.heads={self.heads}")
        if self.history < 0:
            raise ValueError("model.history must be >= 0")

    @property
    def num_modalities(self) -> int:
        return len(self.channels)

    @property
    def num_patches(self) -> int:
        if self.window_samples % self.patch_size:
            raise ValueError(f"window of {self.window_samples} samples not divisible by "
                             f"patch size {self.patch_size}")
        return self.window_samples // self.patch_size


@dataclass
class Switches:
    amc_on: bool = True
    sigma_delta_on: bool = True
    fusion_on: bool = True
    context_on: bool = True
    contrastive_on: bool = True
    predictive_on: bool = True


@dataclass
class WindowTrace:
    gates: np.ndarray  # [B, M] hard gates applied to this window
    active: np.ndarray  # [B, M, L] patches actually tokenized
    invocations: np.ndarray  # [M] tokenizer calls per modality


@dataclass
class WindowOutput:
    logits: Tensor  # [B, C]
    R: Tensor  # [B, M*L, D] backbone outputs without CLS
    h_cls: Tensor  # [B, D]
    modality_means: Tensor  # [B, M, D]
    context_mean: Tensor  # [B, D] token mean after temporal context
    trace: WindowTrace


class HistoryMemory:
    """Ring buffer of the last ``K`` mean-pooled window representations."""

    def __init__(self, K: int):
        self.K = K
        self.entries: deque[Tensor] = deque(maxlen=K if K > 0 else None)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, v: Tensor) -> None:
        if self.K > 0:
            self.entries.append(v)

    def stacked(self) -> Tensor:
        return tt.stack(list(self.entries), axis=1)  # [B, k, D]

    def detach(self) -> None:
        self.entries = deque((e.detach() for e in self.entries), maxlen=self.entries.maxlen)


class AMIModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, k_skip: int = 2,
                 theta_init: float = 0.1, learn_thresholds: bool = False, tau_theta: float = 0.1):
        self.cfg = cfg
        D, M, L = cfg.d_model, cfg.num_modalities, cfg.num_patches
        self.tokenizers = [param(rng.normal(0.0, (c * cfg.patch_size) ** -0.5, (D, c, cfg.patch_size)))
                           for c in cfg.channels]
        self.mask_embed = param(rng.normal(0.0, 0.02, (M, D)))
        self.sigma_delta = sd.SigmaDelta(M, k_skip, theta_init, learn_thresholds, tau_theta)
        self.fusion = CrossAttnBlock(D, cfg.heads, cfg.ff_dim, rng)
        self.context = CrossAttnBlock(D, cfg.heads, cfg.ff_dim, rng)
        self.cls = param(rng.normal(0.0, 0.02, D))
        self.blocks = [TransformerBlock(D, cfg.heads, cfg.ff_dim, rng) for _ in range(cfg.layers)]
        self.norm = LayerNorm(D)
        self.head = Linear(D, cfg.num_classes, rng)
        self.gate_net = GateNet(D, cfg.gate_hidden, M, rng, cfg.gate_init_bias)
        self.predictor = MLP(D, D, D, rng)
        self._positions = sinusoidal_positions(M * L, D)
        same = np.repeat(np.arange(M), L)
        self._fusion_mask = same[:, None] == same[None, :]

    # -- tokenization -----------------------------------------------------
    def _tokenizer(self, m: int):
        W = self.tokenizers[m]
        D, C, P = W.shape
        flat = tt.transpose(tt.reshape(W, (D, C * P)))

        def embed(patches: np.ndarray) -> Tensor:
            return tt.matmul(patches.reshape(len(patches), C * P), flat)

        return embed

    def tokenize_modality(self, m: int, x: np.ndarray, gate: Tensor | None, hard: np.ndarray | None,
                          switches: Switches) -> tuple[Tensor, np.ndarray, int]:
        """Tokens ``[B, L, D]`` for modality ``m`` given raw ``x`` of ``[B, C, T]``.

        Rows whose hard gate is 0 output the mask embedding. Outside training
        their input is never read (replaced by zeros). While gradients are
        recorded the real tokens are still computed: the hard gate multiplies
        them by exactly 0 in the forward pass, but the straight-through
        gradient needs them as the counterfactual of opening the gate.
        """
        cfg = self.cfg
        B = x.shape[0]
        L, P, D = cfg.num_patches, cfg.patch_size, cfg.d_model
        mask_tok = tt.broadcast_to(tt.reshape(self.mask_embed[m], (1, 1, D)), (B, L, D))
        open_rows = np.ones(B, dtype=bool) if hard is None else hard > 0.5
        counterfactual = gate is not None and gate.requires_grad and tt.is_grad_enabled()
        if not open_rows.any() and not counterfactual:
            return mask_tok, np.zeros((B, L), dtype=bool), 0

        if not counterfactual:
            x = np.where(open_rows[:, None, None], x, 0.0)
        patches = x.reshape(B, x.shape[1], L, P)
        delta = sd.patch_deltas(patches)
        if switches.sigma_delta_on:
            a = sd.activity_score(delta)
            theta = self.sigma_delta.theta_values()[m]
            amask = sd.skip_policy(a, theta, self.sigma_delta.k_skip)
            surrogate = None
            if self.sigma_delta.learn_thresholds and tt.is_grad_enabled():
                theta_t = self.sigma_delta.theta()[m]
                surrogate = sd.straight_through_mask(amask.active, a, theta_t, self.sigma_delta.tau_theta)
        else:
            amask = sd.ActivityMask(np.ones((B, L), dtype=bool), np.zeros((B, L)))
            surrogate = None
        tokens, _ = sd.tokenize_with_reuse(delta, amask, self._tokenizer(m), cfg.modality_names[m]
                                           if cfg.modality_names else str(m), surrogate)
        active = amask.active & open_rows[:, None]
        invocations = int(active.sum())
        if gate is None:
            return tokens, active, invocations
        g = tt.reshape(gate[:, m], (B, 1, 1))
        return tokens * g + mask_tok * (1.0 - g), active, invocations

    # -- fusion / context / backbone ---------------------------------------
    def cross_modal_fuse(self, tokens: list[Tensor], switches: Switches) -> Tensor:
        H = tt.concat(tokens, axis=1)
        if len(tokens) == 1 or not switches.fusion_on:
            return H
        # one block with a block-diagonal mask == every modality attending to all the others
        return self.fusion(H, H, self._fusion_mask)

    def temporal_context(self, H: Tensor, memory: HistoryMemory | None, switches: Switches) -> Tensor:
        if memory is None or len(memory) == 0 or not switches.context_on or self.cfg.history == 0:
            return H
        return self.context(H, memory.stacked())

    def backbone(self, H: Tensor, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, Tensor]:
        B, N, D = H.shape
        cls = tt.broadcast_to(tt.reshape(self.cls, (1, 1, D)), (B, 1, D))
        X = tt.concat([cls, H], axis=1)
        for blk in self.blocks:
            X = blk(X)
            X = tt.dropout(X, self.cfg.dropout, rng, self.training)
        X = self.norm(X)
        h_cls = X[:, 0, :]
        R = X[:, 1:, :]
        return self.head(h_cls), R, h_cls

    def forward_window(self, xs: list[np.ndarray], gates: GateDecision | None,
                       memory: HistoryMemory | None, switches: Switches | None = None,
                       rng: np.random.Generator | None = None) -> WindowOutput:
        switches = switches or Switches()
        cfg = self.cfg
        if len(xs) != cfg.num_modalities:
            raise ValueError(f"expected {cfg.num_modalities} modalities, got {len(xs)}")
        B = xs[0].shape[0]
        hard = None if gates is None else gates.p_hard
        gate_t = None if gates is None else gates.gate
        toks, actives, inv = [], [], []
        for m, x in enumerate(xs):
            t, act, n = self.tokenize_modality(m, np.asarray(x, dtype=np.float64), gate_t,
                                               None if hard is None else hard[:, m], switches)
            toks.append(t)
            actives.append(act)
            inv.append(n)
        H = self.cross_modal_fuse(toks, switches)
        H = H + self._positions
        H = self.temporal_context(H, memory, switches)
        ctx_mean = tt.mean(H, axis=1)
        if memory is not None:
            memory.push(ctx_mean)
        logits, R, h_cls = self.backbone(H, rng)
        trace = WindowTrace(np.ones((B, cfg.num_modalities)) if hard is None else hard.copy(),
                            np.stack(actives, axis=1), np.array(inv))
        return WindowOutput(logits, R, h_cls, aggregate_features(R, cfg.num_modalities), ctx_mean, trace)

    def gate_logits(self, R: Tensor) -> Tensor:
        return self.gate_net(R)
