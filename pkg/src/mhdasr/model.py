"""Full encoder-decoder model: construction, forward passes, loss.

A model owns its parameters and is a pure function of them during inference;
distinct decoding streams keep their own head states and may run
concurrently over shared read-only parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .attention import AttentionKind
from .decoder import (
    DecoderConfig,
    DecoderMode,
    DecoderParams,
    HeadState,
    PreparedEncoding,
    VocabSpec,
    decoder_step,
    init_decoder_params,
    initial_states,
    prepare_encoding,
)
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder_params, subsampled_length
from .tensor import RngState, Tensor, add, log_softmax, neg, pick


@dataclass
class ModelConfig:
    feature_dim: int
    vocab: VocabSpec
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    att_dim: int | None = None
    loc_filters: int = 4
    loc_width: int = 11
    dtype: str = "float64"

    def validate(self) -> None:
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        self.encoder.validate()
        self.decoder.validate()
        if self.loc_width % 2 == 0:
            raise ValueError("location filter width must be odd")

    def to_flat_dict(self) -> dict[str, str]:
        return {
            "feature_dim": str(self.feature_dim),
            "symbols": self.vocab.symbols,
            "enc_layers": str(self.encoder.layers),
            "enc_units": str(self.encoder.units),
            "enc_proj": str(self.encoder.projection),
            "enc_subsample": ",".join(str(i) for i in sorted(self.encoder.subsample)),
            "dec_mode": self.decoder.mode.value,
            "heads": str(self.decoder.heads),
            "kinds": ",".join(k.value for k in self.decoder.kinds),
            "dec_units": str(self.decoder.units),
            "dec_layers": str(self.decoder.layers),
            "value_projection": str(int(self.decoder.value_projection)),
            "att_dim": str(self.att_dim or self.decoder.units),
            "loc_filters": str(self.loc_filters),
            "loc_width": str(self.loc_width),
            "dtype": self.dtype,
        }

    @staticmethod
    def from_flat_dict(d: dict[str, str]) -> "ModelConfig":
        enc = EncoderConfig(
            layers=int(d["enc_layers"]),
            units=int(d["enc_units"]),
            projection=int(d["enc_proj"]),
            subsample=frozenset(int(i) for i in d["enc_subsample"].split(",") if i),
        )
        dec = DecoderConfig(
            mode=DecoderMode(d["dec_mode"]),
            heads=int(d["heads"]),
            kinds=tuple(AttentionKind.parse(k) for k in d["kinds"].split(",")),
            units=int(d["dec_units"]),
            layers=int(d["dec_layers"]),
            value_projection=bool(int(d["value_projection"])),
        )
        return ModelConfig(
            feature_dim=int(d["feature_dim"]),
            vocab=VocabSpec.from_symbols(d["symbols"]),
            encoder=enc,
            decoder=dec,
            att_dim=int(d["att_dim"]),
            loc_filters=int(d["loc_filters"]),
            loc_width=int(d["loc_width"]),
            dtype=d["dtype"],
        )


class Seq2SeqModel:
    """Encoder plus decoder with named, checkpointable parameters."""

    def __init__(self, config: ModelConfig, rng: RngState):
        config.validate()
        tt.set_default_dtype(config.dtype)
        self.config = config
        self.encoder_params: EncoderParams = init_encoder_params(
            config.encoder, config.feature_dim, rng
        )
        self.decoder_params: DecoderParams = init_decoder_params(
            config.decoder,
            config.encoder.projection,
            config.vocab,
            rng,
            att_dim=config.att_dim,
            loc_filters=config.loc_filters,
            loc_width=config.loc_width,
        )

    @property
    def vocab(self) -> VocabSpec:
        return self.config.vocab

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"enc.{n}", t) for n, t in self.encoder_params.tensors()]
        out += [(f"dec.{n}", t) for n, t in self.decoder_params.tensors()]
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def encode(self, features) -> Tensor:
        if not isinstance(features, Tensor):
            features = Tensor(features)
        return encode(features, self.config.encoder, self.encoder_params)

    def output_frames(self, input_frames: int) -> int:
        return subsampled_length(input_frames, self.config.encoder)

    def prepare(self, h_all: Tensor, mask=None) -> PreparedEncoding:
        return prepare_encoding(self.decoder_params, h_all, mask)

    def initial_states(self, prepared: PreparedEncoding) -> list[HeadState]:
        return initial_states(self.decoder_params, prepared)

    def step(self, token: int, states: list[HeadState], prepared: PreparedEncoding):
        return decoder_step(token, states, prepared, self.decoder_params)


def teacher_forced_loss(model: Seq2SeqModel, features, targets) -> Tensor:
    """Sum over steps of -log p(target | ground-truth history, input).

    ``targets`` is the reference token sequence and must end with eos; the
    true previous character is fed at every step.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("empty target sequence")
    if targets[-1] != model.vocab.eos:
        raise ValueError("target sequence must end with eos")
    h_all = model.encode(features)
    prepared = model.prepare(h_all)
    states = model.initial_states(prepared)
    prev = model.vocab.sos
    loss = None
    for target in targets:
        states, logits = model.step(prev, states, prepared)
        nll = neg(pick(log_softmax(logits), target))
        loss = nll if loss is None else add(loss, nll)
        prev = target
    return loss
