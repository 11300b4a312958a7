"""Bridging the encoder stack to the decoder.

Two connection modes: the final-layer baseline hands the last hidden
state straight through, while the inter-connection aggregates *all*
layer outputs with learnable scalar weights and layer-normalizes the
sum.  A strided convolutional length adaptor with GLU activations then
shortens the frame sequence toward token granularity.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .encoder import EncoderOutput
from .errors import ConfigurationError, LengthError
from .params import ParamRegistry
from .rng import StepRng
from .tensor import Tensor


class ConnectorMode(str, Enum):
    FINAL_LAYER = "final"
    INTER_CONNECTION = "inter"


class LayerWeights:
    """The aggregation parameters: one scalar per encoder layer plus the
    post-sum layer-norm affine.  Exactly ``num_layers + 2*d`` scalars."""

    def __init__(self, reg: ParamRegistry, prefix: str, num_layers: int, d_model: int):
        if num_layers < 1:
            raise ConfigurationError("layer weights need at least one layer")
        self.weights = reg.constant(f"{prefix}.weights", (num_layers,), 1.0 / num_layers)
        self.ln_gain = reg.ones(f"{prefix}.ln.gain", (d_model,))
        self.ln_bias = reg.zeros(f"{prefix}.ln.bias", (d_model,))

    @property
    def num_layers(self) -> int:
        return self.weights.shape[0]


def weighted_sum(layer_outputs: list[Tensor], weights: Tensor) -> Tensor:
    """Linear mix sum_l H_l * w_l (before any normalization)."""
    if len(layer_outputs) != weights.shape[0]:
        raise ConfigurationError(
            f"{len(layer_outputs)} layer outputs but {weights.shape[0]} weights"
        )
    total = None
    for l, h in enumerate(layer_outputs):
        term = T.mul(h, T.take_index(weights, l))
        total = term if total is None else T.add(total, term)
    return total


def aggregate(
    enc: EncoderOutput,
    params: LayerWeights | None,
    mode: ConnectorMode,
    include_downsampler_output: bool = False,
    normalize_weights: bool = False,
    eps: float = 1e-5,
) -> Tensor:
    """Connector output [T, d] for either mode.

    FINAL_LAYER returns the last layer untouched (the encoder's own final
    layer norm already applied).  INTER_CONNECTION layer-normalizes the
    weighted sum of all layer outputs, optionally prefixed by the
    downsampler output as an extra "layer 0".
    """
    if not enc.layer_outputs:
        raise ConfigurationError("encoder produced no layer outputs to aggregate")
    if mode == ConnectorMode.FINAL_LAYER:
        return enc.layer_outputs[-1]
    if params is None:
        raise ConfigurationError("inter-connection mode needs LayerWeights parameters")
    tensors = list(enc.layer_outputs)
    if include_downsampler_output:
        tensors = [enc.downsampler_output] + tensors
    if len(tensors) != params.num_layers:
        raise ConfigurationError(
            f"{len(tensors)} layer outputs but {params.num_layers} weights configured"
        )
    w = T.softmax(params.weights) if normalize_weights else params.weights
    return T.layer_norm(weighted_sum(tensors, w), params.ln_gain, params.ln_bias, eps)


def interconnect_param_count(num_layers: int, d_model: int) -> int:
    """Parameters the inter-connection adds over the final-layer baseline."""
    if num_layers < 1 or d_model < 1:
        raise ConfigurationError("num_layers and d_model must be positive")
    return num_layers + 2 * d_model


def report_weights(params: LayerWeights, normalized: bool = False) -> np.ndarray:
    """Raw layer weights, or weights rescaled so |w| sums to one."""
    w = params.weights.data.copy()
    if normalized:
        denom = np.abs(w).sum()
        if denom == 0.0:
            raise ConfigurationError("cannot normalize all-zero layer weights")
        w = w / denom
    return w


@dataclass(frozen=True)
class AdaptorConfig:
    num_layers: int = 3
    kernel: int = 3
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        if self.num_layers < 1 or self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigurationError("invalid adaptor geometry")


DEFAULT_ADAPTOR = AdaptorConfig()


def adapted_length(t: int, cfg: AdaptorConfig = DEFAULT_ADAPTOR) -> int:
    """Closed-form output length of ``LengthAdaptor`` for input length t."""
    if t < 1:
        raise LengthError(f"adaptor input length must be >= 1, got {t}")
    for _ in range(cfg.num_layers):
        if t + 2 * cfg.padding < cfg.kernel:
            raise LengthError(f"sequence collapsed below kernel size at length {t}")
        t = (t + 2 * cfg.padding - cfg.kernel) // cfg.stride + 1
        if t < 1:
            raise LengthError("adaptor collapsed the sequence to length 0")
    return t


class LengthAdaptor:
    """Stack of (strided conv -> GLU) stages; each conv emits 2d channels
    so the gated output keeps the model dimension."""

    def __init__(self, reg: ParamRegistry, prefix: str, d_model: int, cfg: AdaptorConfig, dropout: float = 0.1):
        self.cfg = cfg
        self.d_model = d_model
        self.dropout_p = dropout
        self.dropout_active = True
        self.convs = []
        for i in range(cfg.num_layers):
            kern = reg.xavier_uniform(f"{prefix}.conv{i}.kernel", (2 * d_model, d_model, cfg.kernel))
            bias = reg.zeros(f"{prefix}.conv{i}.bias", (2 * d_model,))
            self.convs.append((kern, bias))

    def __call__(self, x: Tensor, train: bool = False, rng: StepRng | None = None) -> Tensor:
        adapted_length(x.shape[0], self.cfg)  # validates it will survive
        h = T.transpose(x, (1, 0))  # [d, T]
        for kern, bias in self.convs:
            if train and self.dropout_active and self.dropout_p > 0.0:
                h = T.dropout(h, self.dropout_p, True, rng.next())
            h = T.conv1d(h, kern, bias, stride=self.cfg.stride, padding=self.cfg.padding)
            h = T.glu(h)
        return T.transpose(h, (1, 0))
