"""Task, gating, contrastive and predictive losses and their weighted sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

log = logging.getLogger(__name__)

PART_NAMES = ("task", "gating", "contrastive", "predictive")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, part: str, value: float):
        self.part = part
        super().__init__(f"loss part '{part}' is not finite ({value})")


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.05
    lambda4: float = 0.2

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


class MemoryBank:
    """Fixed-capacity FIFO of detached embeddings used as extra negatives."""

    def __init__(self, capacity: int = 512, dim: int | None = None):
        self.capacity = capacity
        self._emb: np.ndarray | None = None if dim is None else np.zeros((0, dim))
        self._window: np.ndarray = np.zeros(0, dtype=np.int64)
        self._modality: np.ndarray = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return 0 if self._emb is None else len(self._emb)

    def push(self, emb, window_ids=None, modality_ids=None) -> None:
        e = np.array(emb.data if isinstance(emb, Tensor) else emb, dtype=np.float64).reshape(-1, np.shape(emb)[-1])
        n = len(e)
        w = np.zeros(n, dtype=np.int64) if window_ids is None else np.asarray(window_ids).reshape(-1)
        m = np.zeros(n, dtype=np.int64) if modality_ids is None else np.asarray(modality_ids).reshape(-1)
        if self._emb is None:
            self._emb = np.zeros((0, e.shape[1]))
        self._emb = np.concatenate([self._emb, e])[-self.capacity:]
        self._window = np.concatenate([self._window, w])[-self.capacity:]
        self._modality = np.concatenate([self._modality, m])[-self.capacity:]

    def embeddings(self) -> np.ndarray:
        return np.zeros((0, 0)) if self._emb is None else self._emb.copy()

    def snapshot(self) -> dict:
        return {"embeddings": self.embeddings(), "window": self._window.copy(),
                "modality": self._modality.copy()}

    def clear(self) -> None:
        self._emb = None
        self._window = np.zeros(0, dtype=np.int64)
        self._modality = np.zeros(0, dtype=np.int64)


def task_loss(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    logp = tt.log_softmax(logits, axis=-1)
    return -tt.mean(logp[np.arange(B), labels])


def gating_loss(p_soft: Tensor) -> Tensor:
    """Mean activation probability over batch and modalities."""
    return tt.mean(p_soft)


def info_nce(anchor: Tensor, candidates: Tensor, positive_mask: np.ndarray, tau: float,
             exclude_mask: np.ndarray | None = None) -> Tensor:
    """Mean over (anchor, positive) pairs of
    ``-log(exp(s_ap/tau) / sum_k exp(s_ak/tau))`` with cosine similarity ``s``.

    anchor: ``[A, D]``; candidates: ``[K, D]``; positive_mask: ``[A, K]``;
    exclude_mask marks candidates left out of the denominator (the anchor
    itself).
    """
    a = tt.l2_normalize(anchor)
    c = tt.l2_normalize(candidates)
    s = tt.matmul(a, tt.transpose(c)) * (1.0 / tau)
    if exclude_mask is not None:
        s = tt.masked_fill(s, exclude_mask, tt.MASK_VALUE)
    logp = tt.log_softmax(s, axis=-1)
    pos = np.asarray(positive_mask, dtype=bool)
    if not pos.any():
        return Tensor(0.0)
    return -tt.tsum(tt.where(pos, logp, 0.0)) * (1.0 / pos.sum())


def contrastive_loss(h: Tensor, bank: MemoryBank | None = None, tau: float = 0.1,
                     present: np.ndarray | None = None) -> Tensor:
    """InfoNCE over per-modality embeddings ``h`` of shape ``[B, M, D]``.

    Each (window, modality) embedding is an anchor; the other modalities of
    the same window are positives; other windows of the batch and memory
    bank entries are negatives.
    """
    B, M, D = h.shape
    bank_emb = None if bank is None or len(bank) == 0 else bank.embeddings()
    if M < 2:
        if bank_emb is None:
            log.info("contrastive loss skipped: single modality and empty memory bank")
        return Tensor(0.0)
    flat = tt.reshape(h, (B * M, D))
    win = np.repeat(np.arange(B), M)
    same = win[:, None] == win[None, :]
    eye = np.eye(B * M, dtype=bool)
    positive = same & ~eye
    if present is not None:
        p = np.asarray(present, dtype=bool).reshape(-1)
        positive &= p[:, None] & p[None, :]
    candidates = flat
    exclude = eye
    if bank_emb is not None:
        candidates = tt.concat([flat, Tensor(bank_emb)], axis=0)
        n = len(bank_emb)
        positive = np.concatenate([positive, np.zeros((B * M, n), dtype=bool)], axis=1)
        exclude = np.concatenate([eye, np.zeros((B * M, n), dtype=bool)], axis=1)
    return info_nce(flat, candidates, positive, tau, exclude)


def predictive_loss(h_t: Tensor, h_future: Tensor, predictor) -> Tensor:
    """Mean squared error between ``predictor(h_t)`` and the stop-gradient target."""
    target = h_future.detach()
    diff = predictor(h_t) - target
    return tt.mean(diff * diff)


def total_loss(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    for name in PART_NAMES:
        v = parts[name]
        val = float(v.data) if isinstance(v, Tensor) else float(v)
        if not np.isfinite(val):
            raise NonFiniteLoss(name, val)
    w = weights.as_tuple()
    out = Tensor(0.0)
    for lam, name in zip(w, PART_NAMES):
        out = out + tt.as_tensor(parts[name]) * lam
    return out
