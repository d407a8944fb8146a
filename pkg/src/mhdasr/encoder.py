"""Bidirectional LSTM encoder with projection and frame subsampling.

Stacks BLSTMP layers: each layer runs a forward and a backward LSTM over the
frame sequence, concatenates the two state sequences, applies a bias-free
linear projection, and optionally drops every other frame. Two subsampled
layers shorten a T-frame utterance to ceil(ceil(T/2)/2), about T/4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    LSTMParams,
    RngState,
    Tensor,
    concat,
    init_lstm_params,
    lstm_cell_from_gates,
    matmul,
    row,
    stack_rows,
    take_rows,
    transpose,
    uniform_init,
)


@dataclass
class EncoderConfig:
    """Layer stack shape.

    :param layers: number of BLSTMP layers
    :param units: LSTM units per direction
    :param projection: output width of each layer's linear projection
    :param subsample: 1-based indices of layers that halve the frame rate
    """

    layers: int = 6
    units: int = 320
    projection: int = 320
    subsample: frozenset[int] = field(default_factory=lambda: frozenset({2, 3}))

    def validate(self) -> None:
        if self.layers < 1 or self.units < 1 or self.projection < 1:
            raise ValueError("layers, units and projection must be positive")
        bad = set(self.subsample) - set(range(1, self.layers + 1))
        if bad:
            raise ValueError(f"subsample indices {sorted(bad)} outside 1..{self.layers}")


def desk_encoder_config(units: int = 32) -> EncoderConfig:
    """Two subsampled layers: keeps the ~T/4 output rate at desk scale."""
    return EncoderConfig(layers=2, units=units, projection=units, subsample=frozenset({1, 2}))


@dataclass
class BLSTMPLayerParams:
    fwd: LSTMParams
    bwd: LSTMParams
    proj: Tensor  # (projection, 2*units), bias-free

    def tensors(self):
        out = [(f"fwd.{n}", t) for n, t in self.fwd.tensors()]
        out += [(f"bwd.{n}", t) for n, t in self.bwd.tensors()]
        out.append(("proj", self.proj))
        return out


@dataclass
class EncoderParams:
    layers: list[BLSTMPLayerParams]

    def tensors(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"layer{i}.{n}", t) for n, t in layer.tensors()]
        return out


def init_encoder_params(config: EncoderConfig, feature_dim: int, rng: RngState) -> EncoderParams:
    config.validate()
    layers = []
    in_dim = feature_dim
    for _ in range(config.layers):
        layers.append(
            BLSTMPLayerParams(
                fwd=init_lstm_params(in_dim, config.units, rng),
                bwd=init_lstm_params(in_dim, config.units, rng),
                proj=uniform_init((config.projection, 2 * config.units), -0.1, 0.1, rng),
            )
        )
        in_dim = config.projection
    return EncoderParams(layers)


def _run_direction(seq: Tensor, params: LSTMParams, reverse: bool) -> list[Tensor]:
    """LSTM state sequence over the frames, indexed by original frame order."""
    n = seq.data.shape[0]
    units = params.units
    # all input projections in one product; per-step work is recurrent only
    gates = matmul(seq, transpose(params.w_x)) + params.b
    h = Tensor(np.zeros(units, dtype=seq.data.dtype))
    c = Tensor(np.zeros(units, dtype=seq.data.dtype))
    order = range(n - 1, -1, -1) if reverse else range(n)
    states: list[Tensor | None] = [None] * n
    for t in order:
        h, c = lstm_cell_from_gates(row(gates, t), h, c, params.w_h)
        states[t] = h
    return states


def blstmp_layer(seq: Tensor, params: BLSTMPLayerParams, subsample: bool) -> Tensor:
    """One bidirectional layer with projection.

    :param seq: (L, in_dim) frame sequence
    :param subsample: keep even-indexed frames (0-based) after projection,
        output length ceil(L/2)
    :return: (L', projection) sequence
    """
    if seq.data.shape[0] < 1:
        raise ValueError("empty input sequence")
    fwd_states = _run_direction(seq, params.fwd, reverse=False)
    bwd_states = _run_direction(seq, params.bwd, reverse=True)
    both = concat([stack_rows(fwd_states), stack_rows(bwd_states)], axis=1)
    projected = matmul(both, transpose(params.proj))
    if subsample:
        projected = take_rows(projected, range(0, projected.data.shape[0], 2))
    return projected


def subsampled_length(frames: int, config: EncoderConfig) -> int:
    n = frames
    for i in range(1, config.layers + 1):
        if i in config.subsample:
            n = -(-n // 2)
    return n


def encode(features: Tensor, config: EncoderConfig, params: EncoderParams) -> Tensor:
    """Feature sequence (T, D) to hidden-state sequence (T', projection).

    Requires T >= 4 so the default two subsamplings leave at least one frame.
    """
    config.validate()
    if features.data.ndim != 2:
        raise ValueError(f"features must be (T, D), got shape {features.data.shape}")
    if features.data.shape[0] < 4:
        raise ValueError(f"input too short: {features.data.shape[0]} frames, need >= 4")
    seq = features
    for i, layer in enumerate(params.layers, start=1):
        seq = blstmp_layer(seq, layer, subsample=i in config.subsample)
    return seq
