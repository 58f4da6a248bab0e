"""Small layer library on top of :mod:`ami.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.trainable_parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, d_in ** -0.5, (d_in, d_out))
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = tt.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def __call__(self, x) -> Tensor:
        return tt.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d, d_ff, rng)
        self.fc2 = Linear(d_ff, d, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(tt.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    # no key bias: it shifts every score of a query equally and has zero gradient
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"embed dim {d} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng, bias=False)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        return tt.transpose(tt.reshape(x, (B, L, self.heads, D // self.heads)), (0, 2, 1, 3))

    def __call__(self, xq, xkv, mask=None) -> Tensor:
        B, Lq, D = xq.shape
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        out = tt.scaled_dot_product_attention(q, k, v, mask)
        out = tt.reshape(tt.transpose(out, (0, 2, 1, 3)), (B, Lq, D))
        return self.o(out)


class CrossAttnBlock(Module):
    """Pre-norm cross-attention followed by a feed-forward block, both residual."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.norm_q = LayerNorm(d)
        self.norm_kv = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)

    def __call__(self, x, kv, mask=None) -> Tensor:
        h = x + self.attn(self.norm_q(x), self.norm_kv(kv), mask)
        return h + self.ff(self.norm_ff(h))


class TransformerBlock(Module):
    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.norm_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)

    def __call__(self, x, mask=None) -> Tensor:
        n = self.norm_attn(x)
        h = x + self.attn(n, n, mask)
        return h + self.ff(self.norm_ff(h))


class MLP(Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(tt.gelu(self.fc1(x)))


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
