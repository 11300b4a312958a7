"""Speech-style encoder: strided convolutional downsampler followed by a
pre-LN transformer stack that exposes every layer's hidden state, plus
span masking over the downsampled features.

The downsampler turns a raw waveform into frames, projects them to the
model dimension, and layer-normalizes.  ``encode`` then runs the
transformer blocks and returns *all* of their outputs: layers 1..L-1 as
raw residual-stream states, layer L after the stack's final layer norm
(the pre-LN convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNormParams, MultiHeadAttention, maybe_dropout, sinusoidal_positions
from .errors import ConfigurationError, LengthError
from .params import ParamRegistry
from .rng import StepRng
from .tensor import Tensor


@dataclass(frozen=True)
class DownsamplerSpec:
    """Per-layer (channels, kernel, stride) description of the conv stack."""

    channels: tuple[int, ...]
    kernels: tuple[int, ...]
    strides: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.channels) == len(self.kernels) == len(self.strides)):
            raise ConfigurationError(
                "downsampler channels/kernels/strides must have equal lengths"
            )
        if not self.kernels or min(self.kernels) < 1 or min(self.strides) < 1 or min(self.channels) < 1:
            raise ConfigurationError("downsampler layer sizes must be positive")

    @property
    def cumulative_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def receptive_field(self) -> int:
        """Minimum number of samples producing one output frame."""
        n = 1
        for k, s in zip(reversed(self.kernels), reversed(self.strides)):
            n = (n - 1) * s + k
        return n

    def output_length(self, n_samples: int) -> int:
        if n_samples < self.receptive_field:
            raise LengthError(
                f"waveform of {n_samples} samples is below the downsampler's "
                f"receptive field of {self.receptive_field}"
            )
        t = n_samples
        for k, s in zip(self.kernels, self.strides):
            t = (t - k) // s + 1
        return t


PAPER_DOWNSAMPLER = DownsamplerSpec(
    channels=(512,) * 7,
    kernels=(10, 3, 3, 3, 3, 2, 2),
    strides=(5, 2, 2, 2, 2, 2, 2),
)

DESK_DOWNSAMPLER = DownsamplerSpec(channels=(32, 32), kernels=(4, 2), strides=(2, 2))


def encoder_output_length(n_samples: int, spec: DownsamplerSpec) -> int:
    """Closed-form frame count of ``downsample`` for an N-sample waveform."""
    return spec.output_length(n_samples)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    d_model: int
    d_ff: int
    n_heads: int
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.num_layers < 0:
            raise ConfigurationError("num_layers must be non-negative")


DESK_ENCODER = EncoderConfig(num_layers=4, d_model=64, d_ff=256, n_heads=4)
PAPER_ENCODER = EncoderConfig(num_layers=24, d_model=1024, d_ff=4096, n_heads=16)


@dataclass(frozen=True)
class MaskingSpec:
    """Span masking over downsampled features (time and channel axes).

    Each index is a span start with probability ``prob / span_len`` so
    the expected masked fraction is roughly ``prob``; spans may overlap.
    A probability of exactly 1 saturates: everything is masked.
    """

    time_span_len: int = 10
    time_prob: float = 0.2
    channel_span_len: int = 20
    channel_prob: float = 0.1

    def __post_init__(self):
        if self.time_span_len < 1 or self.channel_span_len < 1:
            raise ConfigurationError("mask span lengths must be positive")
        for p in (self.time_prob, self.channel_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"mask probability {p} outside [0, 1]")


@dataclass
class EncoderOutput:
    """Downsampled features plus the ordered per-layer hidden states."""

    downsampler_output: Tensor
    layer_outputs: list[Tensor] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layer_outputs)


def sample_span_mask(n: int, span_len: int, prob: float, gen: np.random.Generator) -> np.ndarray:
    """Boolean mask of length ``n`` built from randomly started spans."""
    mask = np.zeros(n, dtype=bool)
    if prob <= 0.0 or n == 0:
        return mask
    if prob >= 1.0:
        mask[:] = True
        return mask
    starts = np.flatnonzero(gen.random(n) < prob / span_len)
    for s in starts:
        mask[s : s + span_len] = True
    return mask


class TransformerEncoderBlock:
    def __init__(self, reg: ParamRegistry, prefix: str, cfg: EncoderConfig):
        self.ln_attn = LayerNormParams(reg, f"{prefix}.ln_attn", cfg.d_model)
        self.attn = MultiHeadAttention(reg, f"{prefix}.attn", cfg.d_model, cfg.n_heads)
        self.ln_ffn = LayerNormParams(reg, f"{prefix}.ln_ffn", cfg.d_model)
        self.ffn = FeedForward(reg, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
        self.dropout_p = cfg.dropout
        self.dropout_active = True  # cleared for fully frozen blocks

    def __call__(self, x: Tensor, train: bool = False, rng: StepRng | None = None) -> Tensor:
        x = maybe_dropout(x, self.dropout_p, train, self.dropout_active, rng)
        normed = self.ln_attn(x)
        x = T.add(x, self.attn(normed, normed, causal=False))
        x = T.add(x, self.ffn(self.ln_ffn(x)))
        return x


class SpeechEncoder:
    """Downsampler + transformer stack exposing every layer's output."""

    def __init__(
        self,
        reg: ParamRegistry,
        prefix: str,
        downsampler: DownsamplerSpec,
        cfg: EncoderConfig,
    ):
        self.spec = downsampler
        self.cfg = cfg
        self.dtype = reg.dtype
        self.convs = []
        c_in = 1
        for i, (c_out, k, _s) in enumerate(zip(downsampler.channels, downsampler.kernels, downsampler.strides)):
            kern = reg.xavier_uniform(f"{prefix}.downsampler.conv{i}.kernel", (c_out, c_in, k))
            bias = reg.zeros(f"{prefix}.downsampler.conv{i}.bias", (c_out,))
            self.convs.append((kern, bias))
            c_in = c_out
        self.proj_w = reg.xavier_uniform(f"{prefix}.downsampler.proj.weight", (c_in, cfg.d_model))
        self.proj_b = reg.zeros(f"{prefix}.downsampler.proj.bias", (cfg.d_model,))
        self.ds_ln = LayerNormParams(reg, f"{prefix}.downsampler.ln", cfg.d_model)
        self.mask_embedding = reg.normal(f"{prefix}.mask_embedding", (cfg.d_model,), std=0.1)
        self.blocks = [
            TransformerEncoderBlock(reg, f"{prefix}.blocks.{i}", cfg)
            for i in range(cfg.num_layers)
        ]
        self.final_ln = LayerNormParams(reg, f"{prefix}.final_ln", cfg.d_model) if cfg.num_layers else None

    # -- downsampling ------------------------------------------------

    def output_length(self, n_samples: int) -> int:
        return self.spec.output_length(n_samples)

    def downsample(self, wave: Tensor) -> Tensor:
        """Waveform [N] -> frames [T, d]; raises LengthError below the
        receptive field."""
        if wave.ndim != 1:
            raise LengthError(f"downsample expects a 1-d waveform, got shape {wave.shape}")
        self.spec.output_length(wave.shape[0])  # validates minimum length
        h = T.reshape(wave, (1, wave.shape[0]))
        for (kern, bias), stride in zip(self.convs, self.spec.strides):
            h = T.conv1d(h, kern, bias, stride=stride, padding=0)
            h = T.relu(h)
        h = T.transpose(h, (1, 0))
        h = T.add(T.matmul(h, self.proj_w), self.proj_b)
        return self.ds_ln(h)

    # -- masking -----------------------------------------------------

    def apply_feature_masking(
        self, features: Tensor, spec: MaskingSpec, rng: StepRng
    ) -> Tensor:
        """Replace masked time spans with the learned embedding and zero
        masked channel spans.  Train mode only."""
        t, d = features.shape
        time_mask = sample_span_mask(t, spec.time_span_len, spec.time_prob, rng.next())
        chan_mask = sample_span_mask(d, spec.channel_span_len, spec.channel_prob, rng.next())
        return self.mask_features(features, time_mask, chan_mask)

    def mask_features(self, features: Tensor, time_mask: np.ndarray, chan_mask: np.ndarray) -> Tensor:
        if time_mask.any():
            features = T.masked_fill_rows(features, time_mask, self.mask_embedding)
        if chan_mask.any():
            keep = (~chan_mask).astype(self.dtype)
            features = T.mul(features, T.const(keep))
        return features

    # -- transformer stack -------------------------------------------

    def encode(
        self,
        features: Tensor,
        train: bool = False,
        rng: StepRng | None = None,
        masking: MaskingSpec | None = None,
    ) -> EncoderOutput:
        if features.shape[-1] != self.cfg.d_model:
            raise ConfigurationError(
                f"feature dim {features.shape[-1]} does not match model dim {self.cfg.d_model}"
            )
        x = features
        if train and masking is not None:
            x = self.apply_feature_masking(x, masking, rng)
        x = T.add(x, sinusoidal_positions(x.shape[0], self.cfg.d_model, self.dtype))
        outputs: list[Tensor] = []
        for block in self.blocks:
            x = block(x, train=train, rng=rng)
            outputs.append(x)
        if outputs:
            outputs[-1] = self.final_ln(outputs[-1])
        return EncoderOutput(downsampler_output=features, layer_outputs=outputs)

    def forward(
        self,
        wave: Tensor,
        train: bool = False,
        rng: StepRng | None = None,
        masking: MaskingSpec | None = None,
    ) -> EncoderOutput:
        return self.encode(self.downsample(wave), train=train, rng=rng, masking=masking)
