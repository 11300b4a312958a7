"""Shared transformer plumbing: layer-norm wrappers, multi-head
attention, position-wise feed-forward, and sinusoidal positions."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamRegistry
from .rng import StepRng
from .tensor import Tensor

_MASK_NEG = -1e9  # additive attention mask; underflows to exactly 0 after softmax


class LayerNormParams:
    """Learnable gain/bias pair applied through ``tensor.layer_norm``."""

    def __init__(self, reg: ParamRegistry, prefix: str, d: int, eps: float = 1e-5):
        self.gain = reg.ones(f"{prefix}.gain", (d,))
        self.bias = reg.zeros(f"{prefix}.bias", (d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention:
    def __init__(self, reg: ParamRegistry, prefix: str, d: int, n_heads: int):
        if d % n_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.wq = reg.xavier_uniform(f"{prefix}.wq", (d, d))
        self.bq = reg.zeros(f"{prefix}.bq", (d,))
        self.wk = reg.xavier_uniform(f"{prefix}.wk", (d, d))
        self.bk = reg.zeros(f"{prefix}.bk", (d,))
        self.wv = reg.xavier_uniform(f"{prefix}.wv", (d, d))
        self.bv = reg.zeros(f"{prefix}.bv", (d,))
        self.wo = reg.xavier_uniform(f"{prefix}.wo", (d, d))
        self.bo = reg.zeros(f"{prefix}.bo", (d,))

    def _heads(self, x: Tensor, length: int) -> Tensor:
        return T.transpose(T.reshape(x, (length, self.n_heads, self.head_dim)), (1, 0, 2))

    def __call__(self, query_input: Tensor, kv_input: Tensor, causal: bool = False) -> Tensor:
        tq = query_input.shape[0]
        tk = kv_input.shape[0]
        q = T.add(T.matmul(query_input, self.wq), self.bq)
        k = T.add(T.matmul(kv_input, self.wk), self.bk)
        v = T.add(T.matmul(kv_input, self.wv), self.bv)
        qh = self._heads(q, tq)                                   # [h, Tq, dh]
        kh = T.transpose(T.reshape(k, (tk, self.n_heads, self.head_dim)), (1, 2, 0))
        scores = T.scale(T.matmul(qh, kh), 1.0 / np.sqrt(self.head_dim))
        if causal:
            if tq != tk:
                raise ValueError("causal attention needs query and key lengths to match")
            mask = np.triu(np.full((tq, tq), _MASK_NEG, dtype=query_input.dtype), k=1)
            scores = T.add(scores, T.const(mask))
        weights = T.softmax(scores)
        ctx = T.matmul(weights, self._heads(v, tk))               # [h, Tq, dh]
        ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (tq, self.d))
        return T.add(T.matmul(ctx, self.wo), self.bo)


class FeedForward:
    def __init__(self, reg: ParamRegistry, prefix: str, d: int, d_ff: int):
        self.w1 = reg.xavier_uniform(f"{prefix}.w1", (d, d_ff))
        self.b1 = reg.zeros(f"{prefix}.b1", (d_ff,))
        self.w2 = reg.xavier_uniform(f"{prefix}.w2", (d_ff, d))
        self.b2 = reg.zeros(f"{prefix}.b2", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)


def sinusoidal_positions(length: int, d: int, dtype) -> Tensor:
    """Parameter-free additive positional table [length, d]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / d)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return T.const(table.astype(dtype))


def maybe_dropout(x: Tensor, p: float, train: bool, active: bool, rng: StepRng | None) -> Tensor:
    """Block-input dropout, skipped entirely for frozen blocks."""
    if not train or not active or p == 0.0:
        return x
    return T.dropout(x, p, True, rng.next())
