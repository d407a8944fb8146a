"""Soft alignment between decoder state and encoder frames.

Four interchangeable energy functions produce a score per encoder frame;
softmax turns scores into a weight vector and the context vector is the
weight-averaged sum of encoder states:

    dot:      e_t = q^T W_a h_t
    additive: e_t = g^T tanh(W_q q + W_h h_t + b)
    location: adds W_f f_t to the tanh argument, where the rows f_t come from
              convolving the previous step's weights with trainable filters
    coverage: adds w_v * v_t, where v_t is the running sum of all previous
              weights at frame t

The location and coverage terms are injected into the shared additive form,
so zeroing W_f or w_v reproduces additive attention exactly. Energies are
never rescaled before the softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import (
    RngState,
    Tensor,
    add,
    conv1d,
    matmul,
    reshape,
    softmax,
    tanh,
    transpose,
    uniform_init,
)


class AttentionKind(Enum):
    DOT = "dot"
    ADDITIVE = "add"
    LOCATION = "loc"
    COVERAGE = "cov"

    @classmethod
    def parse(cls, name: str) -> "AttentionKind":
        table = {k.value: k for k in cls}
        table.update({"dot": cls.DOT, "add": cls.ADDITIVE, "loc": cls.LOCATION, "cov": cls.COVERAGE})
        key = name.strip().lower()
        if key not in table:
            raise ValueError(f"unknown attention kind {name!r}")
        return table[key]


@dataclass
class DotParams:
    w_a: Tensor  # (query_dim, key_dim)

    def tensors(self):
        return [("w_a", self.w_a)]


@dataclass
class AdditiveParams:
    w_q: Tensor  # (att_dim, query_dim)
    w_h: Tensor  # (att_dim, key_dim)
    g: Tensor  # (att_dim,)
    b: Tensor  # (att_dim,)

    def tensors(self):
        return [("w_q", self.w_q), ("w_h", self.w_h), ("g", self.g), ("b", self.b)]


@dataclass
class LocationParams(AdditiveParams):
    k: Tensor  # (filters, width), width odd
    w_f: Tensor  # (att_dim, filters)

    def tensors(self):
        return super().tensors() + [("k", self.k), ("w_f", self.w_f)]


@dataclass
class CoverageParams(AdditiveParams):
    w_v: Tensor  # (att_dim,)

    def tensors(self):
        return super().tensors() + [("w_v", self.w_v)]


def init_attention_params(
    kind: AttentionKind,
    query_dim: int,
    key_dim: int,
    att_dim: int,
    rng: RngState,
    loc_filters: int = 4,
    loc_width: int = 11,
):
    if kind is AttentionKind.DOT:
        return DotParams(w_a=uniform_init((query_dim, key_dim), -0.1, 0.1, rng))
    base = dict(
        w_q=uniform_init((att_dim, query_dim), -0.1, 0.1, rng),
        w_h=uniform_init((att_dim, key_dim), -0.1, 0.1, rng),
        g=uniform_init((att_dim,), -0.1, 0.1, rng),
        b=uniform_init((att_dim,), -0.1, 0.1, rng),
    )
    if kind is AttentionKind.ADDITIVE:
        return AdditiveParams(**base)
    if kind is AttentionKind.LOCATION:
        if loc_width % 2 == 0:
            raise ValueError(f"location filter width must be odd, got {loc_width}")
        return LocationParams(
            **base,
            k=uniform_init((loc_filters, loc_width), -0.1, 0.1, rng),
            w_f=uniform_init((att_dim, loc_filters), -0.1, 0.1, rng),
        )
    if kind is AttentionKind.COVERAGE:
        return CoverageParams(**base, w_v=uniform_init((att_dim,), -0.1, 0.1, rng))
    raise ValueError(f"unknown kind {kind}")


@dataclass
class AttentionHistory:
    """Per-stream alignment memory: last weights, their running sum, step index.

    ``accumulated`` is the elementwise sum of every weight vector emitted so
    far, so its total equals step-1.
    """

    previous: Tensor | None
    accumulated: Tensor
    step: int

    @staticmethod
    def initial(num_frames: int) -> "AttentionHistory":
        return AttentionHistory(previous=None, accumulated=Tensor(np.zeros(num_frames)), step=1)


def uniform_weights(num_frames: int, mask: np.ndarray | None = None) -> Tensor:
    """Constant uniform weight vector; with a mask, uniform over valid frames."""
    if mask is None:
        return Tensor(np.full(num_frames, 1.0 / num_frames))
    mask = np.asarray(mask, dtype=bool)
    w = np.zeros(num_frames)
    w[mask] = 1.0 / mask.sum()
    return Tensor(w)


def dot_energy(q: Tensor, keys: Tensor, params: DotParams) -> Tensor:
    """Bilinear score per frame: e_t = q^T W_a h_t."""
    return matmul(keys, matmul(q, params.w_a))


def _additive_core(q: Tensor, keys: Tensor, extras: list[Tensor], params: AdditiveParams) -> Tensor:
    """Shared tanh form; extras join the sum before the bias so ablations are exact."""
    s = add(matmul(keys, transpose(params.w_h)), matmul(params.w_q, q))
    for term in extras:
        s = add(s, term)
    s = add(s, params.b)
    return matmul(tanh(s), params.g)


def additive_energy(q: Tensor, keys: Tensor, params: AdditiveParams) -> Tensor:
    return _additive_core(q, keys, [], params)


def location_energy(
    q: Tensor,
    keys: Tensor,
    history: AttentionHistory,
    params: LocationParams,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Additive form plus convolved features of the previous step's weights.

    At the first step the previous weights default to a uniform vector; at
    later steps missing history is a caller error.
    """
    prev = history.previous
    if prev is None:
        if history.step > 1:
            raise ValueError(f"location attention at step {history.step} requires previous weights")
        prev = uniform_weights(keys.data.shape[0], mask)
    feats = conv1d(params.k, prev)
    return _additive_core(q, keys, [matmul(feats, transpose(params.w_f))], params)


def coverage_energy(
    q: Tensor, keys: Tensor, history: AttentionHistory, params: CoverageParams
) -> Tensor:
    """Additive form plus w_v scaled by each frame's accumulated past weight."""
    n = keys.data.shape[0]
    cov = matmul(reshape(history.accumulated, (n, 1)), reshape(params.w_v, (1, params.w_v.data.shape[0])))
    return _additive_core(q, keys, [cov], params)


def attend(
    kind: AttentionKind,
    params,
    q: Tensor,
    keys: Tensor,
    history: AttentionHistory,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, AttentionHistory]:
    """Weight vector over frames plus the history advanced by this step."""
    if kind is AttentionKind.DOT:
        e = dot_energy(q, keys, params)
    elif kind is AttentionKind.ADDITIVE:
        e = additive_energy(q, keys, params)
    elif kind is AttentionKind.LOCATION:
        e = location_energy(q, keys, history, params, mask)
    elif kind is AttentionKind.COVERAGE:
        e = coverage_energy(q, keys, history, params)
    else:
        raise ValueError(f"unknown kind {kind}")
    weights = softmax(e, mask=mask)
    new_history = AttentionHistory(
        previous=weights,
        accumulated=add(history.accumulated, weights),
        step=history.step + 1,
    )
    return weights, new_history


def context_vector(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted sum of encoder states: r = sum_t a_t h_t."""
    if weights.data.shape[0] != values.data.shape[0]:
        raise ValueError(
            f"weights length {weights.data.shape[0]} != frames {values.data.shape[0]}"
        )
    return matmul(weights, values)
