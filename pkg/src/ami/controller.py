"""Modality controller: per-modality gate logits from the current representation,
Gumbel-Sigmoid sampling during training and a straight-through hard gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .nn import Linear, Module, param
from .tensor import Tensor

GUMBEL_EPS = 1e-10


@dataclass
class GateDecision:
    logits: Tensor  # [B, M]
    p_soft: Tensor  # [B, M]
    p_hard: np.ndarray  # [B, M] in {0, 1}
    tau: float
    gate: Tensor  # forward value p_hard, gradient of p_soft

    @property
    def hard(self) -> np.ndarray:
        return self.p_hard


def aggregate_features(R: Tensor, num_modalities: int) -> Tensor:
    """Mean over each modality's block of tokens: ``[B, M*L, D] -> [B, M, D]``."""
    B, N, D = R.shape
    if N % num_modalities:
        raise ValueError(f"token count {N} not divisible by modality count {num_modalities}")
    L = N // num_modalities
    return tt.mean(tt.reshape(R, (B, num_modalities, L, D)), axis=2)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def straight_through(p_soft: Tensor, p_hard: np.ndarray) -> Tensor:
    return tt.straight_through(p_hard, p_soft)


def gumbel_sigmoid_sample(logits: Tensor, tau: float, rng: np.random.Generator | None,
                          training: bool = True, noise: np.ndarray | None = None) -> GateDecision:
    """Relaxed Bernoulli gates.

    Training: ``p_soft = sigmoid((logits + g) / tau)`` with Gumbel noise ``g``.
    Inference: ``p_soft = sigmoid(logits)`` and no noise. In both modes the
    hard gate is ``p_soft > 0.5`` (a tie closes the gate).
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if training:
        g = gumbel_noise(logits.shape, rng) if noise is None else noise
        p_soft = tt.sigmoid((logits + g) * (1.0 / tau))
    else:
        p_soft = tt.sigmoid(logits)
    p_hard = (p_soft.data > 0.5).astype(np.float64)
    return GateDecision(logits, p_soft, p_hard, tau, straight_through(p_soft, p_hard))


def relaxed_decision(logits: Tensor, tau: float, noise: np.ndarray | None = None) -> GateDecision:
    """Soft-forward variant used for gradient checks.

    There is no hard threshold: every modality is read and its tokens are
    weighted by ``p_soft``, so the loss is a smooth function of the logits
    whether or not gradients are being recorded.
    """
    z = logits if noise is None else logits + noise
    p_soft = tt.sigmoid(z * (1.0 / tau))
    return GateDecision(logits, p_soft, np.ones(p_soft.shape), tau, p_soft)


def open_gates(batch: int, num_modalities: int) -> GateDecision:
    ones = np.ones((batch, num_modalities))
    t = Tensor(ones)
    return GateDecision(Tensor(np.full_like(ones, np.inf)), t, ones, 1.0, t)


def fixed_gates(hard: np.ndarray) -> GateDecision:
    hard = np.asarray(hard, dtype=np.float64)
    t = Tensor(hard)
    return GateDecision(Tensor(np.where(hard > 0, np.inf, -np.inf)), t, hard, 1.0, t)


class GateNet(Module):
    """Shared ``D -> hidden`` layer applied to each modality mean, followed by a
    per-modality ``hidden -> 1`` readout.

    The readout weights and biases are modality specific so that the logit of
    one modality can move without dragging the others along.
    """

    def __init__(self, d: int, hidden: int, num_modalities: int, rng: np.random.Generator,
                 init_bias: float = 2.0):
        self.fc = Linear(d, hidden, rng)
        self.readout = param(rng.normal(0.0, hidden ** -0.5, (num_modalities, hidden)))
        self.modality_bias = param(np.full(num_modalities, init_bias))
        self.num_modalities = num_modalities

    def __call__(self, R: Tensor) -> Tensor:
        feats = aggregate_features(R, self.num_modalities)
        h = tt.gelu(self.fc(feats))  # [B, M, H]
        return tt.tsum(h * self.readout, axis=-1) + self.modality_bias


def temperature_at(step: int, total_steps: int, tau_start: float, tau_end: float) -> float:
    """Linear anneal from ``tau_start`` to ``tau_end``."""
    if total_steps <= 1:
        return tau_end
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return tau_start + (tau_end - tau_start) * frac
