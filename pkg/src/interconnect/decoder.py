"""Transformer decoder with causal self-attention, cross-attention over
the adapted encoder memory, and a shared embedding/output projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNormParams, MultiHeadAttention, maybe_dropout, sinusoidal_positions
from .errors import ConfigurationError, ContractError
from .params import ParamRegistry
from .rng import StepRng
from .tensor import Tensor


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int
    d_model: int
    d_ff: int
    n_heads: int
    vocab_size: int
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.vocab_size < 1 or self.num_layers < 1:
            raise ConfigurationError("decoder needs at least one layer and one token")


class TransformerDecoderBlock:
    def __init__(self, reg: ParamRegistry, prefix: str, cfg: DecoderConfig):
        self.ln_self = LayerNormParams(reg, f"{prefix}.ln_self", cfg.d_model)
        self.self_attn = MultiHeadAttention(reg, f"{prefix}.self_attn", cfg.d_model, cfg.n_heads)
        self.ln_cross = LayerNormParams(reg, f"{prefix}.ln_cross", cfg.d_model)
        self.cross_attn = MultiHeadAttention(reg, f"{prefix}.cross_attn", cfg.d_model, cfg.n_heads)
        self.ln_ffn = LayerNormParams(reg, f"{prefix}.ln_ffn", cfg.d_model)
        self.ffn = FeedForward(reg, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
        self.dropout_p = cfg.dropout
        self.dropout_active = True

    def __call__(
        self,
        x: Tensor,
        memory: Tensor | None,
        train: bool = False,
        rng: StepRng | None = None,
        use_cross_attention: bool = True,
    ) -> Tensor:
        x = maybe_dropout(x, self.dropout_p, train, self.dropout_active, rng)
        normed = self.ln_self(x)
        x = T.add(x, self.self_attn(normed, normed, causal=True))
        if use_cross_attention:
            x = T.add(x, self.cross_attn(self.ln_cross(x), memory))
        x = T.add(x, self.ffn(self.ln_ffn(x)))
        return x


class TextDecoder:
    """Pre-LN decoder stack; the embedding table doubles as the output
    projection so the vocabulary costs a single [V, d] block."""

    def __init__(self, reg: ParamRegistry, prefix: str, cfg: DecoderConfig):
        self.cfg = cfg
        self.dtype = reg.dtype
        self.embedding = reg.normal(f"{prefix}.embedding", (cfg.vocab_size, cfg.d_model), std=0.02)
        self.blocks = [
            TransformerDecoderBlock(reg, f"{prefix}.blocks.{i}", cfg)
            for i in range(cfg.num_layers)
        ]
        self.final_ln = LayerNormParams(reg, f"{prefix}.final_ln", cfg.d_model)

    def decode_train(
        self,
        target_ids,
        memory: Tensor | None,
        train: bool = False,
        rng: StepRng | None = None,
        use_cross_attention: bool = True,
    ) -> Tensor:
        """Teacher-forced logits [len, vocab] for an input token sequence."""
        ids = np.asarray(target_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 1:
            raise ContractError(f"decoder input must be a non-empty 1-d id sequence, got {ids.shape}")
        x = T.embedding(self.embedding, ids)
        x = T.add(x, sinusoidal_positions(ids.size, self.cfg.d_model, self.dtype))
        for block in self.blocks:
            x = block(x, memory, train=train, rng=rng, use_cross_attention=use_cross_attention)
        x = self.final_ln(x)
        return T.matmul(x, T.transpose(self.embedding, (1, 0)))

    # -- generation ----------------------------------------------------

    def generate(
        self,
        memory: Tensor,
        prefix_ids,
        max_len: int,
        eos_id: int,
        beam_width: int = 1,
    ) -> list[int]:
        """Generate up to ``max_len`` tokens after ``prefix_ids``.

        Greedy when ``beam_width == 1``; otherwise a minimal beam search
        scored by summed log-probability, length-normalized when picking
        the final hypothesis.  Returns only the generated tokens
        (including the terminating EOS when produced).
        """
        if max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {max_len}")
        if beam_width < 1:
            raise ContractError(f"beam width must be >= 1, got {beam_width}")
        prefix = [int(i) for i in prefix_ids]
        if beam_width == 1:
            return self._greedy(memory, prefix, max_len, eos_id)
        return self._beam(memory, prefix, max_len, eos_id, beam_width)

    def _step_logprobs(self, ids: list[int], memory: Tensor) -> np.ndarray:
        logits = self.decode_train(ids, memory, train=False)
        lp = T.log_softmax(logits)
        return lp.data[-1]

    def _greedy(self, memory, prefix, max_len, eos_id):
        ids = list(prefix)
        generated: list[int] = []
        for _ in range(max_len):
            nxt = int(np.argmax(self._step_logprobs(ids, memory)))
            ids.append(nxt)
            generated.append(nxt)
            if nxt == eos_id:
                break
        return generated

    def _beam(self, memory, prefix, max_len, eos_id, width):
        # hypotheses: (ids, score, n_generated, finished)
        live = [(list(prefix), 0.0, 0, False)]
        finished: list[tuple[list[int], float, int]] = []
        for _ in range(max_len):
            candidates = []
            for ids, score, n, done in live:
                if done:
                    continue
                logprobs = self._step_logprobs(ids, memory)
                top = np.argsort(-logprobs, kind="stable")[:width]
                for tok in top:
                    tok = int(tok)
                    candidates.append((ids + [tok], score + float(logprobs[tok]), n + 1, tok == eos_id))
            if not candidates:
                break
            candidates.sort(key=lambda c: -c[1])
            live = []
            for cand in candidates[:width]:
                if cand[3]:
                    finished.append((cand[0], cand[1], cand[2]))
                else:
                    live.append(cand)
            if not live:
                break
        for ids, score, n, _done in live:
            if n:
                finished.append((ids, score, n))
        if not finished:
            return []
        best = max(finished, key=lambda c: c[1] / c[2])
        return best[0][len(prefix):]
