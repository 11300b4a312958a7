"""Assembly of the full pipeline: downsampler -> encoder stack ->
connector -> length adaptor -> decoder, with a single registry naming
every parameter."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .connector import (
    AdaptorConfig,
    ConnectorMode,
    LayerWeights,
    LengthAdaptor,
    aggregate,
)
from .decoder import DecoderConfig, TextDecoder
from .encoder import (
    DESK_DOWNSAMPLER,
    DESK_ENCODER,
    PAPER_DOWNSAMPLER,
    PAPER_ENCODER,
    DownsamplerSpec,
    EncoderConfig,
    MaskingSpec,
    SpeechEncoder,
)
from .errors import ConfigurationError
from .params import ParamRegistry
from .rng import StepRng
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    downsampler: DownsamplerSpec
    encoder: EncoderConfig
    decoder: DecoderConfig
    adaptor: AdaptorConfig
    masking: MaskingSpec
    mode: ConnectorMode
    include_downsampler_output: bool = False
    normalize_layer_weights: bool = False

    def __post_init__(self):
        if self.encoder.d_model != self.decoder.d_model:
            raise ConfigurationError("encoder and decoder dims must match")

    def to_dict(self) -> dict:
        return {
            "downsampler": {
                "channels": list(self.downsampler.channels),
                "kernels": list(self.downsampler.kernels),
                "strides": list(self.downsampler.strides),
            },
            "encoder": {
                "num_layers": self.encoder.num_layers,
                "d_model": self.encoder.d_model,
                "d_ff": self.encoder.d_ff,
                "n_heads": self.encoder.n_heads,
                "dropout": self.encoder.dropout,
            },
            "decoder": {
                "num_layers": self.decoder.num_layers,
                "d_model": self.decoder.d_model,
                "d_ff": self.decoder.d_ff,
                "n_heads": self.decoder.n_heads,
                "vocab_size": self.decoder.vocab_size,
                "dropout": self.decoder.dropout,
            },
            "adaptor": {
                "num_layers": self.adaptor.num_layers,
                "kernel": self.adaptor.kernel,
                "stride": self.adaptor.stride,
                "padding": self.adaptor.padding,
            },
            "masking": {
                "time_span_len": self.masking.time_span_len,
                "time_prob": self.masking.time_prob,
                "channel_span_len": self.masking.channel_span_len,
                "channel_prob": self.masking.channel_prob,
            },
            "mode": self.mode.value,
            "include_downsampler_output": self.include_downsampler_output,
            "normalize_layer_weights": self.normalize_layer_weights,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            downsampler=DownsamplerSpec(
                channels=tuple(d["downsampler"]["channels"]),
                kernels=tuple(d["downsampler"]["kernels"]),
                strides=tuple(d["downsampler"]["strides"]),
            ),
            encoder=EncoderConfig(**d["encoder"]),
            decoder=DecoderConfig(**d["decoder"]),
            adaptor=AdaptorConfig(**d["adaptor"]),
            masking=MaskingSpec(**d["masking"]),
            mode=ConnectorMode(d["mode"]),
            include_downsampler_output=d.get("include_downsampler_output", False),
            normalize_layer_weights=d.get("normalize_layer_weights", False),
        )


def desk_config(
    vocab_size: int,
    mode: ConnectorMode = ConnectorMode.INTER_CONNECTION,
    dropout: float = 0.1,
    decoder_layers: int = 2,
) -> ModelConfig:
    """Small geometry: finite-difference checks run in seconds."""
    return ModelConfig(
        downsampler=DESK_DOWNSAMPLER,
        encoder=EncoderConfig(
            num_layers=DESK_ENCODER.num_layers,
            d_model=DESK_ENCODER.d_model,
            d_ff=DESK_ENCODER.d_ff,
            n_heads=DESK_ENCODER.n_heads,
            dropout=dropout,
        ),
        decoder=DecoderConfig(
            num_layers=decoder_layers,
            d_model=DESK_ENCODER.d_model,
            d_ff=DESK_ENCODER.d_ff,
            n_heads=DESK_ENCODER.n_heads,
            vocab_size=vocab_size,
            dropout=dropout,
        ),
        adaptor=AdaptorConfig(),
        masking=MaskingSpec(),
        mode=mode,
    )


def paper_shape_config(mode: ConnectorMode = ConnectorMode.INTER_CONNECTION) -> ModelConfig:
    """Full-size geometry, used for parameter accounting only."""
    return ModelConfig(
        downsampler=PAPER_DOWNSAMPLER,
        encoder=PAPER_ENCODER,
        decoder=DecoderConfig(
            num_layers=12,
            d_model=1024,
            d_ff=4096,
            n_heads=16,
            vocab_size=250_000,
        ),
        adaptor=AdaptorConfig(),
        masking=MaskingSpec(),
        mode=mode,
    )


class SpeechTranslator:
    """End-to-end model instance.  ``seed=None`` builds zero-filled
    parameters (geometry-only, for counting)."""

    def __init__(self, config: ModelConfig, dtype=np.float32, seed: int | None = 0):
        self.config = config
        self.dtype = np.dtype(dtype)
        reg = ParamRegistry(dtype=dtype, seed=seed)
        self.encoder = SpeechEncoder(reg, "encoder", config.downsampler, config.encoder)
        if config.mode == ConnectorMode.INTER_CONNECTION:
            n_mix = config.encoder.num_layers + (1 if config.include_downsampler_output else 0)
            self.connector: LayerWeights | None = LayerWeights(
                reg, "connector", n_mix, config.encoder.d_model
            )
        else:
            self.connector = None
        self.adaptor = LengthAdaptor(
            reg, "adaptor", config.encoder.d_model, config.adaptor, dropout=config.decoder.dropout
        )
        self.decoder = TextDecoder(reg, "decoder", config.decoder)
        self._params = reg.params

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self._params)

    def dropout_units(self) -> list[tuple[str, object]]:
        """(prefix, module) pairs whose block-input dropout follows the
        freezing partition."""
        units: list[tuple[str, object]] = [
            (f"encoder.blocks.{i}", b) for i, b in enumerate(self.encoder.blocks)
        ]
        units.append(("adaptor", self.adaptor))
        units.extend((f"decoder.blocks.{i}", b) for i, b in enumerate(self.decoder.blocks))
        return units

    # -- forward paths -------------------------------------------------

    def encode_memory(self, wave: Tensor, train: bool = False, rng: StepRng | None = None) -> Tensor:
        feats = self.encoder.downsample(wave)
        enc = self.encoder.encode(
            feats, train=train, rng=rng, masking=self.config.masking if train else None
        )
        agg = aggregate(
            enc,
            self.connector,
            self.config.mode,
            include_downsampler_output=self.config.include_downsampler_output,
            normalize_weights=self.config.normalize_layer_weights,
        )
        return self.adaptor(agg, train=train, rng=rng)

    def sentence_logits(
        self, wave: Tensor, decoder_input_ids, train: bool = False, rng: StepRng | None = None
    ) -> Tensor:
        memory = self.encode_memory(wave, train=train, rng=rng)
        return self.decoder.decode_train(decoder_input_ids, memory, train=train, rng=rng)

    def translate(self, wave: Tensor, prefix_ids, max_len: int, eos_id: int, beam_width: int = 1) -> list[int]:
        memory = self.encode_memory(wave, train=False)
        return self.decoder.generate(memory, prefix_ids, max_len, eos_id, beam_width=beam_width)
