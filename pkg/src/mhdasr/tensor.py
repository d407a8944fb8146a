"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays, float64 by default (float32 selectable for speed,
but gradient checks need 64-bit). Differentiable operations append a node to
the active :class:`ComputationTape`; replaying the tape in reverse visits
nodes in reverse topological order exactly once, because every operand tensor
is created before the operation that consumes it.

With no active tape (inference, finite-difference probing) the same
operations run without recording anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64


def set_default_dtype(name: str) -> None:
    """Select the precision new tensors are created with ("float64"/"float32")."""
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}, expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype():
    return _default_dtype


class Tensor:
    """A dense array plus an optional accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            # own the buffer: g may alias another tensor's gradient
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class ComputationTape:
    """Ordered record of differentiable operations for backward traversal.

    Each node is ``(outputs, backward_fn)``. Nodes are appended in execution
    order, so iterating the record backwards is a reverse topological order.
    Used as a context manager around a forward pass.
    """

    _active: "ComputationTape | None" = None

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], callable]] = []

    def __enter__(self):
        self._outer = ComputationTape._active
        ComputationTape._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        ComputationTape._active = self._outer
        return False


def _record(backward, *outputs: Tensor):
    tape = ComputationTape._active
    if tape is not None:
        tape.nodes.append((outputs, backward))


def _taping(*inputs: Tensor) -> bool:
    if ComputationTape._active is None:
        return False
    return any(t.requires_grad for t in inputs)


def backward(loss: Tensor, tape: ComputationTape, params: Sequence[Tensor] = ()) -> None:
    """Propagate gradients from a scalar loss back through the tape.

    Every trainable tensor reachable from the loss accumulates its gradient;
    tensors in ``params`` that the loss does not depend on are given an exact
    zero gradient instead of None.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    for outputs, bwd in reversed(tape.nodes):
        if all(o.grad is None for o in outputs):
            continue
        grads = tuple(
            o.grad if o.grad is not None else np.zeros_like(o.data) for o in outputs
        )
        bwd(*grads)
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# random source


class RngState:
    """Deterministic random source backed by the counter-based Philox engine.

    Identical seeds produce identical draw sequences on every platform.
    Distinct named streams derived from one seed stay independent, and the
    full engine state round-trips through ``state_dict`` for checkpointing.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._bitgen = np.random.Philox(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        )
        self._gen = np.random.Generator(self._bitgen)

    def derive(self, stream: int) -> "RngState":
        return RngState(self.seed, stream)

    def uniform(self, lo: float, hi: float, shape=None) -> np.ndarray:
        return self._gen.uniform(lo, hi, shape).astype(_default_dtype)

    def normal(self, scale: float, shape=None) -> np.ndarray:
        return (self._gen.standard_normal(shape) * scale).astype(_default_dtype)

    def integers(self, lo: int, hi: int, shape=None):
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def state_dict(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def load_state_dict(self, d: dict) -> None:
        self.seed = int(d["seed"])
        self.stream = int(d["stream"])
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(d["counter"], dtype=np.uint64),
                "key": np.array(d["key"], dtype=np.uint64),
            },
            "buffer": np.array(d["buffer"], dtype=np.uint64),
            "buffer_pos": int(d["buffer_pos"]),
            "has_uint32": int(d["has_uint32"]),
            "uinteger": int(d["uinteger"]),
        }


def uniform_init(shape, lo: float, hi: float, rng: RngState) -> Tensor:
    """Trainable tensor with every element drawn uniformly from [lo, hi)."""
    if not shape:
        raise ValueError("empty shape")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi})")
    return Tensor(rng.uniform(lo, hi, tuple(shape)), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise and linear algebra primitives


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if _taping(a, b):
        out.requires_grad = True

        def bwd(g):
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(_unbroadcast(g, b.data.shape))

        _record(bwd, out)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    if _taping(a, b):
        out.requires_grad = True

        def bwd(g):
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(-_unbroadcast(g, b.data.shape))

        _record(bwd, out)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(-g), out)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if _taping(a, b):
        out.requires_grad = True

        def bwd(g):
            a._accum(_unbroadcast(g * b.data, a.data.shape))
            b._accum(_unbroadcast(g * a.data, b.data.shape))

        _record(bwd, out)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g * s), out)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy matmul semantics."""
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if _taping(a, b):
        out.requires_grad = True
        a_is_vec = a.data.ndim == 1
        b_is_vec = b.data.ndim == 1

        def bwd(g):
            ga = g[:, None] if (b_is_vec and not a_is_vec) else g
            if a_is_vec and b_is_vec:  # inner product, g is scalar
                a._accum(g * b.data)
                b._accum(g * a.data)
                return
            if a_is_vec:  # (k,) @ (k,n) -> (n,)
                a._accum(b.data @ g)
                b._accum(np.outer(a.data, g))
            elif b_is_vec:  # (m,k) @ (k,) -> (m,)
                a._accum(np.outer(g, b.data))
                b._accum(a.data.T @ g)
            else:
                a._accum(ga @ b.data.T)
                b._accum(a.data.T @ ga)

        _record(bwd, out)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g * (1.0 - y * y)), out)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = Tensor(y)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g * y * (1.0 - y)), out)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluate through exp of a non-positive argument only
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g * y), out)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g / a.data), out)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(np.broadcast_to(g, a.data.shape)), out)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Normalize along the last axis with max-subtraction for overflow safety.

    ``mask`` is a boolean array marking valid positions; invalid positions get
    exactly zero weight and are excluded from the normalizer. Non-finite
    inputs are rejected.
    """
    x = a.data
    if not np.isfinite(x).all():
        raise ValueError("softmax input must be finite")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=-1).all():
            raise ValueError("softmax mask leaves no valid position")
        m = np.max(np.where(mask, x, -np.inf), axis=-1, keepdims=True)
        e = np.where(mask, np.exp(x - m), 0.0)
    else:
        m = np.max(x, axis=-1, keepdims=True)
        e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    if _taping(a):
        out.requires_grad = True

        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            a._accum(y * (g - dot))

        _record(bwd, out)
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Log of the softmax along the last axis, computed stably."""
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    shifted = x - m
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(ls)
    if _taping(a):
        out.requires_grad = True
        sm = np.exp(ls)

        def bwd(g):
            a._accum(g - sm * g.sum(axis=-1, keepdims=True))

        _record(bwd, out)
    return out


# ---------------------------------------------------------------------------
# indexing, shaping, assembly


def pick(a: Tensor, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    out = Tensor(a.data[index])
    if _taping(a):
        out.requires_grad = True

        def bwd(g):
            buf = np.zeros_like(a.data)
            buf[index] = g
            a._accum(buf)

        _record(bwd, out)
    return out


def row(a: Tensor, index: int) -> Tensor:
    """Row ``index`` of a 2-D tensor as a 1-D tensor."""
    out = Tensor(a.data[index])
    if _taping(a):
        out.requires_grad = True

        def bwd(g):
            buf = np.zeros_like(a.data)
            buf[index] = g
            a._accum(buf)

        _record(bwd, out)
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])
    if _taping(a):
        out.requires_grad = True

        def bwd(g):
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accum(buf)

        _record(bwd, out)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    if _taping(*parts):
        out.requires_grad = True
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def bwd(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

        _record(bwd, out)
    return out


def stack_rows(rows_: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.stack([r.data for r in rows_]))
    if _taping(*rows_):
        out.requires_grad = True

        def bwd(g):
            for i, r in enumerate(rows_):
                r._accum(g[i])

        _record(bwd, out)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g.reshape(a.data.shape)), out)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)
    if _taping(a):
        out.requires_grad = True
        _record(lambda g: a._accum(g.T), out)
    return out


# ---------------------------------------------------------------------------
# convolution


def conv1d(kernels: Tensor, signal: Tensor) -> Tensor:
    """Same-length correlation of a 1-D signal with a bank of odd-width kernels.

    ``kernels`` is (channels, width) with odd width; the signal is zero padded
    by (width-1)/2 on both sides so output position t aligns with input
    position t. Output is (len(signal), channels).
    """
    k = kernels.data
    x = signal.data
    if k.ndim != 2:
        raise ValueError(f"kernels must be 2-D (channels, width), got {k.shape}")
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("signal must be a nonempty 1-D tensor")
    width = k.shape[1]
    if width % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {width}")
    pad = (width - 1) // 2
    xp = np.pad(x, pad)
    y = np.stack([np.correlate(xp, k[c], mode="valid") for c in range(k.shape[0])], axis=1)
    out = Tensor(y)
    if _taping(kernels, signal):
        out.requires_grad = True
        n = x.shape[0]

        def bwd(g):
            if signal.requires_grad:
                gx = np.zeros_like(x)
                for c in range(k.shape[0]):
                    gp = np.pad(g[:, c], pad)
                    gx += np.correlate(gp, k[c][::-1], mode="valid")
                signal._accum(gx)
            if kernels.requires_grad:
                gk = np.empty_like(k)
                for c in range(k.shape[0]):
                    for j in range(width):
                        gk[c, j] = g[:, c] @ xp[j : j + n]
                kernels._accum(gk)

        _record(bwd, out)
    return out


# ---------------------------------------------------------------------------
# fused LSTM step


@dataclass
class LSTMParams:
    """Weights of one LSTM: input map (4u, in), recurrent map (4u, u), bias (4u,).

    Rows are blocked by gate in the order [input, forget, candidate, output].
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def units(self) -> int:
        return self.w_h.data.shape[1]

    def tensors(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("b", self.b)]


def init_lstm_params(in_dim: int, units: int, rng: RngState, lo=-0.1, hi=0.1) -> LSTMParams:
    return LSTMParams(
        w_x=uniform_init((4 * units, in_dim), lo, hi, rng),
        w_h=uniform_init((4 * units, units), lo, hi, rng),
        b=uniform_init((4 * units,), lo, hi, rng),
    )


def _lstm_core(z: np.ndarray, c_prev: np.ndarray, units: int):
    i = _sigmoid(z[:units])
    f = _sigmoid(z[units : 2 * units])
    g = np.tanh(z[2 * units : 3 * units])
    o = _sigmoid(z[3 * units :])
    c_new = f * c_prev + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return i, f, g, o, c_new, tc, h_new


def _lstm_gate_grads(gh, gc, i, f, g, o, tc, c_prev):
    dc = gc + gh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    do = gh * tc
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)]
    )
    return dz, dc * f


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams):
    """One LSTM step: gates from input and recurrent maps, peephole-free.

        z = w_x x + w_h h + b
        i, f, o = sigmoid of the respective gate blocks of z
        g = tanh of the candidate block
        c' = f * c + i * g
        h' = o * tanh(c')

    Returns (h', c'), both differentiable w.r.t. x, h, c and the weights.
    """
    units = params.units
    z = params.w_x.data @ x.data + params.w_h.data @ h.data + params.b.data
    i, f, g, o, c_new, tc, h_new = _lstm_core(z, c.data, units)
    out_h, out_c = Tensor(h_new), Tensor(c_new)
    if _taping(x, h, c, params.w_x, params.w_h, params.b):
        out_h.requires_grad = True
        out_c.requires_grad = True

        def bwd(gh, gc):
            dz, dc_prev = _lstm_gate_grads(gh, gc, i, f, g, o, tc, c.data)
            x._accum(params.w_x.data.T @ dz)
            h._accum(params.w_h.data.T @ dz)
            c._accum(dc_prev)
            params.w_x._accum(np.outer(dz, x.data))
            params.w_h._accum(np.outer(dz, h.data))
            params.b._accum(dz)

        _record(bwd, out_h, out_c)
    return out_h, out_c


def lstm_cell_from_gates(x_gates: Tensor, h: Tensor, c: Tensor, w_h: Tensor):
    """LSTM step with the input contribution ``w_x x + b`` precomputed.

    Lets a sequence precompute all input projections in one matrix product;
    gate math and layout match :func:`lstm_cell`.
    """
    units = w_h.data.shape[1]
    z = x_gates.data + w_h.data @ h.data
    i, f, g, o, c_new, tc, h_new = _lstm_core(z, c.data, units)
    out_h, out_c = Tensor(h_new), Tensor(c_new)
    if _taping(x_gates, h, c, w_h):
        out_h.requires_grad = True
        out_c.requires_grad = True

        def bwd(gh, gc):
            dz, dc_prev = _lstm_gate_grads(gh, gc, i, f, g, o, tc, c.data)
            x_gates._accum(dz)
            h._accum(w_h.data.T @ dz)
            c._accum(dc_prev)
            w_h._accum(np.outer(dz, h.data))

        _record(bwd, out_h, out_c)
    return out_h, out_c


# ---------------------------------------------------------------------------
# gradient utilities


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale a gradient set in place so its global L2 norm is at most max_norm.

    Returns the pre-clip global norm. Direction is preserved: when the norm
    exceeds the bound every array is scaled by the same factor.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    flat = np.concatenate([np.ravel(g) for g in grads])
    norm = float(np.sqrt((flat * flat).sum()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm
