"""Patch-wise Sigma-Delta sensing.

A window ``[C, T]`` is cut into ``L`` patches of ``P`` samples. Each patch is
compared with its predecessor (the first with a zero baseline); patches whose
mean absolute change falls below a threshold are skipped, at most ``k_skip``
in a row. Active patches are tokenized from their delta and the tokens are
accumulated, so a skipped patch simply repeats the running token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .nn import Module, param
from .tensor import Tensor
from .windows import ModalityWindow


@dataclass
class PatchSeries:
    modality: str
    patches: np.ndarray  # [C, L, P]
    baseline: np.ndarray  # [C, P], the single per-modality patch buffer

    @property
    def num_patches(self) -> int:
        return self.patches.shape[1]

    @property
    def patch_size(self) -> int:
        return self.patches.shape[2]


@dataclass
class ActivityMask:
    active: np.ndarray  # bool [..., L]
    activity: np.ndarray  # [..., L]
    skip_run: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def active_count(self) -> int:
        return int(self.active.sum())


@dataclass
class TokenStats:
    modality: str
    active_count: int
    L: int
    invocations: int

    @property
    def patch_rate(self) -> float:
        return self.active_count / self.L if self.L else 0.0


def partition_patches(window: ModalityWindow, P: int) -> PatchSeries:
    C, T = window.data.shape
    if P <= 0 or T % P:
        raise ValueError(f"{window.modality}: window length {T} not divisible by patch size {P}")
    L = T // P
    patches = window.data.reshape(C, L, P).copy()
    return PatchSeries(window.modality, patches, np.zeros((C, P)))


def patch_delta(series: PatchSeries) -> np.ndarray:
    return patch_deltas(series.patches, series.baseline)


def patch_deltas(patches: np.ndarray, baseline: np.ndarray | None = None) -> np.ndarray:
    """Deltas along the patch axis (axis -2) of ``[..., C, L, P]`` patches."""
    prev = np.zeros_like(patches[..., :1, :]) if baseline is None else baseline[..., None, :]
    prev = np.broadcast_to(prev, patches[..., :1, :].shape)
    return np.diff(patches, axis=-2, prepend=prev)


def activity_score(delta: np.ndarray) -> np.ndarray:
    """Mean absolute change per patch: ``[..., C, L, P] -> [..., L]``."""
    return np.abs(delta).mean(axis=(-3, -1))


def skip_policy(a: np.ndarray, theta, k_skip: int) -> ActivityMask:
    """Hard active/skip decision per patch.

    Patch 0 is always active. Patch ``l`` is skipped iff its activity is
    below ``theta`` and fewer than ``k_skip`` patches have been skipped in a
    row; any active patch resets the run. Works on ``[L]`` or ``[B, L]``.
    """
    if k_skip < 0:
        raise ValueError("k_skip must be >= 0")
    a = np.asarray(a, dtype=np.float64)
    squeeze = a.ndim == 1
    a2 = a[None] if squeeze else a
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), a2.shape[:-1])
    B, L = a2.shape
    active = np.ones((B, L), dtype=bool)
    run = np.zeros(B, dtype=np.int64)
    for l in range(1, L):
        skip = (a2[:, l] < theta) & (run < k_skip)
        active[:, l] = ~skip
        run = np.where(skip, run + 1, 0)
    if squeeze:
        return ActivityMask(active[0], a, run[0:1])
    return ActivityMask(active, a, run)


def accumulation_matrix(active: np.ndarray) -> np.ndarray:
    """Constant map from active-patch embeddings to running tokens.

    For ``active`` of shape ``[B, L]`` returns ``A`` of shape
    ``[B * L, n_active]`` with ``A[b*L + l, j] = 1`` when active patch ``j``
    belongs to row ``b`` and sits at a position ``<= l``.
    """
    B, L = active.shape
    rows, cols = np.nonzero(active)
    rb = np.repeat(np.arange(B), L)[:, None]
    rl = np.tile(np.arange(L), B)[:, None]
    return ((rb == rows[None]) & (rl >= cols[None])).astype(np.float64)


def tokenize_with_reuse(delta: np.ndarray, mask: ActivityMask, tokenizer, modality: str = "",
                        surrogate: Tensor | None = None) -> tuple[Tensor, TokenStats]:
    """Running tokens from patch deltas.

    ``delta`` is ``[C, L, P]`` or ``[B, C, L, P]``; ``tokenizer`` maps a
    ``[N, C, P]`` stack of delta patches to ``[N, D]`` embeddings. Without a
    ``surrogate`` only active patches reach the tokenizer. With one (a
    ``[B, L]`` tensor whose value is the hard mask), every patch is embedded
    so that the threshold receives a gradient through the mask.
    """
    squeeze = delta.ndim == 3
    d4 = delta[None] if squeeze else delta
    active = mask.active[None] if mask.active.ndim == 1 else mask.active
    B, C, L, P = d4.shape
    n_active = int(active.sum())
    if surrogate is None:
        b_idx, l_idx = np.nonzero(active)
        patches = d4[b_idx, :, l_idx, :]  # [n_active, C, P]
        emb = tokenizer(patches)
        tokens = tt.matmul(accumulation_matrix(active), emb)
        D = emb.shape[-1]
        tokens = tt.reshape(tokens, (B, L, D))
        invocations = n_active
    else:
        emb = tokenizer(np.transpose(d4, (0, 2, 1, 3)).reshape(B * L, C, P))
        D = emb.shape[-1]
        emb = tt.reshape(emb, (B, L, D)) * tt.reshape(surrogate, (B, L, 1))
        tokens = tt.matmul(np.tril(np.ones((L, L))), emb)
        invocations = B * L
    if squeeze:
        tokens = tt.reshape(tokens, (L, D))
    return tokens, TokenStats(modality, n_active, B * L, invocations)


def threshold_surrogate(a: np.ndarray, theta: Tensor, tau: float) -> Tensor:
    """sigma((a - theta) / tau), the smooth stand-in for the hard active test."""
    return tt.sigmoid((Tensor(a) - theta) * (1.0 / tau))


def straight_through_mask(active: np.ndarray, a: np.ndarray, theta: Tensor, tau: float) -> Tensor:
    s = threshold_surrogate(a, theta, tau)
    return tt.straight_through(active.astype(np.float64), s)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


class SigmaDelta(Module):
    """Per-modality thresholds (softplus of a free parameter) plus the skip horizon."""

    def __init__(self, num_modalities: int, k_skip: int = 2, theta_init: float = 0.1,
                 learn_thresholds: bool = False, tau_theta: float = 0.1):
        if k_skip < 0:
            raise ValueError("k_skip must be >= 0")
        self.theta_free = param(np.full(num_modalities, softplus_inverse(theta_init)))
        self.theta_free.requires_grad = learn_thresholds
        self.k_skip = int(k_skip)
        self.learn_thresholds = learn_thresholds
        self.tau_theta = tau_theta

    def theta(self) -> Tensor:
        return tt.softplus(self.theta_free)

    def theta_values(self) -> np.ndarray:
        return np.logaddexp(0.0, self.theta_free.data)
