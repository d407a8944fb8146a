"""Character-level autoregressive decoders over encoder states.

Three wirings share one step interface:

* single: one attention, one LSTM, affine readout
* multi-head attention (MHA): per-head projected queries/keys/values, head
  contexts fused by one linear map, then a single LSTM
* multi-head decoder (MHD): each head keeps its own LSTM and its own
  attention driven by that LSTM's state; head outputs are fused at the
  logit level by summing per-head readouts

A heterogeneous MHD (HMHD) is an MHD whose heads use different attention
functions. The previous character is embedded and concatenated with the
context vector to form each LSTM input; hidden and cell states start at
zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .attention import (
    AttentionHistory,
    AttentionKind,
    attend,
    context_vector,
    init_attention_params,
)
from .tensor import (
    LSTMParams,
    RngState,
    Tensor,
    add,
    concat,
    init_lstm_params,
    matmul,
    row,
    transpose,
    uniform_init,
)


@dataclass(frozen=True)
class VocabSpec:
    """Symbol inventory including the start and end markers.

    Content symbols occupy ids 0..len(symbols)-1 in order; sos and eos take
    the two ids above them.
    """

    symbols: str
    size: int
    sos: int
    eos: int

    @staticmethod
    def from_symbols(symbols: str) -> "VocabSpec":
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate content symbols")
        n = len(symbols)
        if n < 1:
            raise ValueError("need at least one content symbol")
        return VocabSpec(symbols=symbols, size=n + 2, sos=n, eos=n + 1)

    def __post_init__(self):
        if self.sos == self.eos:
            raise ValueError("sos and eos must differ")
        if not (0 <= self.sos < self.size and 0 <= self.eos < self.size):
            raise ValueError("sos/eos ids out of range")

    def encode(self, text: str) -> list[int]:
        return [self.symbols.index(ch) for ch in text]

    def decode(self, ids) -> str:
        return "".join(self.symbols[i] for i in ids if i < len(self.symbols))

    @property
    def content_ids(self) -> range:
        return range(len(self.symbols))


class DecoderMode(Enum):
    SINGLE = "single"
    MHA = "mha"
    MHD = "mhd"
    HMHD = "hmhd"


@dataclass
class DecoderConfig:
    mode: DecoderMode = DecoderMode.SINGLE
    heads: int = 1
    kinds: tuple[AttentionKind, ...] = (AttentionKind.ADDITIVE,)
    units: int = 320
    layers: int = 1
    value_projection: bool = True  # MHD: keep the per-head value map W_V

    def validate(self) -> None:
        if self.heads < 1:
            raise ValueError("need at least one head")
        if self.mode is DecoderMode.SINGLE and self.heads != 1:
            raise ValueError("single-head decoder requires heads == 1")
        if len(self.kinds) != self.heads:
            raise ValueError(f"{self.heads} heads but {len(self.kinds)} attention kinds")
        if self.mode in (DecoderMode.MHA, DecoderMode.MHD) and len(set(self.kinds)) > 1:
            raise ValueError(f"{self.mode.value} replicates one attention kind across heads")
        if self.layers != 1:
            raise ValueError("only single-layer decoders are supported")


def hmhd_configure(kinds, units: int = 320) -> DecoderConfig:
    """MHD whose head n runs kinds[n]; covers the four-way and 2+2 presets."""
    kinds = tuple(AttentionKind.parse(k) if isinstance(k, str) else k for k in kinds)
    if not kinds:
        raise ValueError("need at least one attention kind")
    mode = DecoderMode.HMHD if len(set(kinds)) > 1 else DecoderMode.MHD
    cfg = DecoderConfig(mode=mode, heads=len(kinds), kinds=kinds, units=units)
    cfg.validate()
    return cfg


@dataclass
class HeadParams:
    """One attention head: optional query/key/value maps plus energy weights."""

    kind: AttentionKind
    att: object
    w_q: Tensor | None = None
    w_k: Tensor | None = None
    w_v: Tensor | None = None

    def tensors(self):
        out = [(f"att.{n}", t) for n, t in self.att.tensors()]
        for name in ("w_q", "w_k", "w_v"):
            t = getattr(self, name)
            if t is not None:
                out.append((name, t))
        return out


@dataclass
class DecoderParams:
    config: DecoderConfig
    embedding: Tensor  # (V, units)
    heads: list[HeadParams]
    lstms: list[LSTMParams]  # one, or one per head for MHD
    readouts: list[Tensor]  # (V, units); one, or one per head for MHD
    b_out: Tensor  # (V,)
    w_o: Tensor | None = None  # MHA head fusion

    def tensors(self):
        out = [("embedding", self.embedding)]
        for n, head in enumerate(self.heads):
            out += [(f"head{n}.{k}", t) for k, t in head.tensors()]
        if self.w_o is not None:
            out.append(("w_o", self.w_o))
        for n, lstm in enumerate(self.lstms):
            out += [(f"lstm{n}.{k}", t) for k, t in lstm.tensors()]
        for n, r in enumerate(self.readouts):
            out.append((f"readout{n}", r))
        out.append(("b_out", self.b_out))
        return out


def init_decoder_params(
    config: DecoderConfig,
    enc_dim: int,
    vocab: VocabSpec,
    rng: RngState,
    att_dim: int | None = None,
    loc_filters: int = 4,
    loc_width: int = 11,
) -> DecoderParams:
    config.validate()
    units = config.units
    att_dim = att_dim or units
    multi = config.mode is not DecoderMode.SINGLE
    heads = []
    for kind in config.kinds:
        qdim, kdim = units, enc_dim
        head = HeadParams(
            kind=kind,
            att=init_attention_params(kind, qdim, kdim, att_dim, rng, loc_filters, loc_width),
        )
        if multi:
            head.w_q = uniform_init((units, units), -0.1, 0.1, rng)
            head.w_k = uniform_init((enc_dim, enc_dim), -0.1, 0.1, rng)
            if config.mode is DecoderMode.MHA or config.value_projection:
                head.w_v = uniform_init((enc_dim, enc_dim), -0.1, 0.1, rng)
        heads.append(head)
    w_o = None
    if config.mode is DecoderMode.MHA:
        w_o = uniform_init((enc_dim, config.heads * enc_dim), -0.1, 0.1, rng)
    n_lstms = config.heads if config.mode in (DecoderMode.MHD, DecoderMode.HMHD) else 1
    lstm_in = units + enc_dim  # embedded character next to the context vector
    lstms = [init_lstm_params(lstm_in, units, rng) for _ in range(n_lstms)]
    n_readouts = n_lstms
    readouts = [uniform_init((vocab.size, units), -0.1, 0.1, rng) for _ in range(n_readouts)]
    return DecoderParams(
        config=config,
        embedding=uniform_init((vocab.size, units), -0.1, 0.1, rng),
        heads=heads,
        lstms=lstms,
        readouts=readouts,
        b_out=uniform_init((vocab.size,), -0.1, 0.1, rng),
        w_o=w_o,
    )


@dataclass
class HeadState:
    """Decoder hidden/cell state and attention history of one head."""

    hidden: Tensor
    cell: Tensor
    history: AttentionHistory


@dataclass
class PreparedEncoding:
    """Per-utterance key/value sequences, fixed across decoding steps."""

    keys: list[Tensor]
    values: list[Tensor]
    frames: int
    mask: np.ndarray | None = None


def prepare_encoding(params: DecoderParams, h_all: Tensor, mask=None) -> PreparedEncoding:
    keys, values = [], []
    for head in params.heads:
        keys.append(matmul(h_all, transpose(head.w_k)) if head.w_k is not None else h_all)
        values.append(matmul(h_all, transpose(head.w_v)) if head.w_v is not None else h_all)
    return PreparedEncoding(keys=keys, values=values, frames=h_all.data.shape[0], mask=mask)


def initial_states(params: DecoderParams, prepared: PreparedEncoding) -> list[HeadState]:
    units = params.config.units
    dtype = params.embedding.data.dtype
    states = []
    for _ in params.heads:
        states.append(
            HeadState(
                hidden=Tensor(np.zeros(units, dtype=dtype)),
                cell=Tensor(np.zeros(units, dtype=dtype)),
                history=AttentionHistory.initial(prepared.frames),
            )
        )
    return states


def embed_input(params: DecoderParams, token: int) -> Tensor:
    """Trainable embedding row of the previous character."""
    if not 0 <= token < params.embedding.data.shape[0]:
        raise ValueError(f"token id {token} out of range")
    return row(params.embedding, token)


def single_step(token: int, state: HeadState, prepared: PreparedEncoding, params: DecoderParams):
    """Attend, build the context, advance the LSTM, produce logits.

    The caller applies softmax; returns (new state, logits).
    """
    head = params.heads[0]
    emb = embed_input(params, token)
    weights, hist = attend(head.kind, head.att, state.hidden, prepared.keys[0], state.history, prepared.mask)
    r = context_vector(weights, prepared.values[0])
    h2, c2 = _lstm(concat([emb, r]), state, params.lstms[0])
    logits = add(matmul(params.readouts[0], h2), params.b_out)
    return HeadState(hidden=h2, cell=c2, history=hist), logits


def _lstm(x: Tensor, state: HeadState, lstm: LSTMParams):
    from .tensor import lstm_cell

    return lstm_cell(x, state.hidden, state.cell, lstm)


def mha_step(token: int, states: list[HeadState], prepared: PreparedEncoding, params: DecoderParams):
    """Per-head attention on projected queries/keys, contexts fused linearly,
    then one shared LSTM; all heads share the resulting hidden state."""
    emb = embed_input(params, token)
    q = states[0].hidden
    contexts, hists = [], []
    for n, head in enumerate(params.heads):
        q_n = matmul(head.w_q, q)
        weights, hist = attend(head.kind, head.att, q_n, prepared.keys[n], states[n].history, prepared.mask)
        contexts.append(context_vector(weights, prepared.values[n]))
        hists.append(hist)
    r = matmul(params.w_o, concat(contexts))
    h2, c2 = _lstm(concat([emb, r]), states[0], params.lstms[0])
    logits = add(matmul(params.readouts[0], h2), params.b_out)
    return [HeadState(hidden=h2, cell=c2, history=h) for h in hists], logits


def mhd_step(token: int, states: list[HeadState], prepared: PreparedEncoding, params: DecoderParams):
    """Each head attends with its own LSTM state and advances its own LSTM;
    logits are the sum of per-head readouts plus a shared bias."""
    if len(states) != len(params.heads):
        raise ValueError(f"{len(params.heads)} heads but {len(states)} states")
    emb = embed_input(params, token)
    new_states = []
    logits = None
    for n, head in enumerate(params.heads):
        q_n = matmul(head.w_q, states[n].hidden)
        weights, hist = attend(head.kind, head.att, q_n, prepared.keys[n], states[n].history, prepared.mask)
        r_n = context_vector(weights, prepared.values[n])
        h2, c2 = _lstm(concat([emb, r_n]), states[n], params.lstms[n])
        new_states.append(HeadState(hidden=h2, cell=c2, history=hist))
        term = matmul(params.readouts[n], h2)
        logits = term if logits is None else add(logits, term)
    logits = add(logits, params.b_out)
    return new_states, logits


def decoder_step(token: int, states: list[HeadState], prepared: PreparedEncoding, params: DecoderParams):
    mode = params.config.mode
    if mode is DecoderMode.SINGLE:
        state, logits = single_step(token, states[0], prepared, params)
        return [state], logits
    if mode is DecoderMode.MHA:
        return mha_step(token, states, prepared, params)
    return mhd_step(token, states, prepared, params)
