from __future__ import annotations

import logging
import math

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if total_steps <= 0:
        return base_lr
    frac = min(max(step / total_steps, 0.0), 1.0)
    return min_lr + 0.5 * (1.0 + math.cos(math.pi * frac)) * (base_lr - min_lr)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class TooManyBadSteps(RuntimeError):
    pass


class AdamW:
    """Adam with decoupled weight decay and a cosine learning-rate schedule."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-3, total_steps: int = 0, grad_clip: float = 1.0,
                 max_bad_steps: int = 10):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.grad_clip = grad_clip
        self.max_bad_steps = max_bad_steps
        self.step_count = 0
        self.bad_steps = 0
        self.skipped_total = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def current_lr(self) -> float:
        return cosine_lr(self.step_count, self.total_steps, self.lr) if self.total_steps else self.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        """Apply one update from ``p.grad``. Returns False if the step was skipped."""
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in self.params]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.bad_steps += 1
            self.skipped_total += 1
            log.warning("non-finite gradient, skipping step (%d consecutive)", self.bad_steps)
            if self.bad_steps >= self.max_bad_steps:
                raise TooManyBadSteps(f"{self.bad_steps} consecutive non-finite gradients")
            return False
        self.bad_steps = 0
        if self.grad_clip:
            clip_grad_norm(grads, self.grad_clip)
        lr = self.current_lr()
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"m.{i}"], dtype=np.float64)
            self.v[i] = np.array(arrays[f"v.{i}"], dtype=np.float64)
        self.step_count = step_count
