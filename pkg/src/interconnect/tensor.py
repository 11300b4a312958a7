"""Dense tensors with tape-based reverse-mode differentiation.

Exactly the primitives the translation stack needs, nothing more:
matmul (plain and head-batched), layer norm, softmax/log-softmax,
strided 1-d convolution, GLU, dropout, embedding lookup, and the usual
elementwise glue.  float32 is the training dtype; float64 exists so
gradients can be verified against central finite differences.

Gradients are recorded on an explicit tape: while a :class:`Tape` is
active, every op whose output requires a gradient appends one node, and
``backward`` walks the node list once in reverse - the list is already a
topological order because it mirrors forward execution.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DtypeError, LengthError, ShapeError

DEFAULT_DTYPE = np.dtype(np.float32)
_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# When True, every op asserts its output is finite.  Debug aid; off by
# default because it touches every buffer.
DEBUG_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    global DEBUG_FINITE
    DEBUG_FINITE = bool(enabled)


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, dtype=None, requires_grad=False, name=None):
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype in _ALLOWED_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in _ALLOWED_DTYPES:
            raise DtypeError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        if DEBUG_FINITE and not np.all(np.isfinite(self.data)):
            raise ContractError(f"non-finite values in tensor {name or '<anonymous>'}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


def param(data, dtype=None, name=None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True, name=name)


def const(data, dtype=None, name=None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=False, name=name)


# --------------------------------------------------------------------
# Tape machinery
# --------------------------------------------------------------------

class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_TAPES: list["Tape"] = []


class Tape:
    """Records forward ops while active; replays them in reverse."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted")

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every tensor that contributed to ``loss``.

    Gradients accumulate additively, both across multiple uses of a
    tensor within one tape and across repeated ``backward`` calls, so
    callers own zeroing between optimizer steps.
    """
    if tape is None:
        if not _TAPES:
            raise ContractError("backward() requires an active or explicit tape")
        tape = _TAPES[-1]
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not tape.nodes:
        raise ContractError("tape is empty; no differentiable ops were recorded")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        node.backward_fn(out_grad)


def _record(op, inputs, out, backward_fn) -> Tensor:
    if DEBUG_FINITE and not np.all(np.isfinite(out.data)):
        raise ContractError(f"non-finite output of op {op!r}")
    if _TAPES and out.requires_grad:
        _TAPES[-1].nodes.append(TapeNode(op, inputs, out, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DtypeError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")


# --------------------------------------------------------------------
# Elementwise glue
# --------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record("mul", (a, b), out, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    out = Tensor(x.data * c, requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, g * c)

    return _record("scale", (x,), out, bwd)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    out = Tensor(np.where(keep, x.data, x.dtype.type(0)), requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, g * keep)

    return _record("relu", (x,), out, bwd)


# --------------------------------------------------------------------
# Reductions and indexing
# --------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _record("sum_all", (x,), out, bwd)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), requires_grad=x.requires_grad)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape))

    return _record("sum_axis", (x,), out, bwd)


def take_index(x: Tensor, i: int) -> Tensor:
    """Scalar element ``x[i]`` of a 1-d tensor."""
    if x.ndim != 1:
        raise ShapeError(f"take_index expects a 1-d tensor, got shape {x.shape}")
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"index {i} out of range for length {x.shape[0]}")
    out = Tensor(x.data[i], requires_grad=x.requires_grad)

    def bwd(g):
        d = np.zeros_like(x.data)
        d[i] = g[()] if isinstance(g, np.ndarray) else g
        _accum(x, d)

    return _record("take_index", (x,), out, bwd)


def take_rows(x: Tensor, ids) -> Tensor:
    """``out[i] = x[i, ids[i]]`` for a 2-d tensor."""
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim != 2 or ids.ndim != 1 or ids.shape[0] != x.shape[0]:
        raise ShapeError(f"take_rows: got x {x.shape}, ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[1]):
        raise IndexError(f"column id out of range [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, ids], requires_grad=x.requires_grad)

    def bwd(g):
        d = np.zeros_like(x.data)
        np.add.at(d, (rows, ids), g)
        _accum(x, d)

    return _record("take_rows", (x,), out, bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; backward scatters into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"token id out of vocabulary range [0, {table.shape[0]})"
        )
    out = Tensor(table.data[ids], requires_grad=table.requires_grad)

    def bwd(g):
        d = np.zeros_like(table.data)
        np.add.at(d, ids, g)
        _accum(table, d)

    return _record("embedding", (table,), out, bwd)


def masked_fill_rows(x: Tensor, row_mask, fill: Tensor) -> Tensor:
    """Replace rows of ``x`` where ``row_mask`` is True with ``fill``."""
    _same_dtype(x, fill)
    row_mask = np.asarray(row_mask, dtype=bool)
    if x.ndim != 2 or row_mask.shape != (x.shape[0],) or fill.shape != (x.shape[1],):
        raise ShapeError(
            f"masked_fill_rows: got x {x.shape}, mask {row_mask.shape}, fill {fill.shape}"
        )
    out_data = np.where(row_mask[:, None], fill.data, x.data)
    out = Tensor(out_data, requires_grad=x.requires_grad or fill.requires_grad)

    def bwd(g):
        _accum(x, g * ~row_mask[:, None])
        _accum(fill, g[row_mask].sum(axis=0))

    return _record("masked_fill_rows", (x, fill), out, bwd)


# --------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _record("reshape", (x,), out, bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(x.data, axes), requires_grad=x.requires_grad)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accum(x, np.transpose(g, inverse))

    return _record("transpose", (x,), out, bwd)


# --------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked (batched) when both operands are >2-d."""
    _same_dtype(a, b)
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _record("matmul", (a, b), out, bwd)


# --------------------------------------------------------------------
# Normalization and attention nonlinearities
# --------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _record("softmax", (x,), out, bwd)


def log_softmax(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor(y, requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _record("log_softmax", (x,), out, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Mean-0/variance-1 over the last axis, then affine gain and bias.

    ``eps`` keeps zero-variance positions finite: a constant row comes
    out as plain ``bias``.
    """
    _same_dtype(x, gain, bias)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gain.shape}/{bias.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centered * inv
    out_data = gain.data * xhat + bias.data
    out = Tensor(
        out_data,
        requires_grad=x.requires_grad or gain.requires_grad or bias.requires_grad,
    )

    def bwd(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _record("layer_norm", (x, gain, bias), out, bwd)


# --------------------------------------------------------------------
# Convolution and gating
# --------------------------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided cross-correlation of ``x`` [C_in, T] with [C_out, C_in, K] kernels.

    Output length is ``(T + 2*padding - K) // stride + 1``.
    """
    _same_dtype(x, kernels, bias)
    if x.ndim != 2 or kernels.ndim != 3 or bias.ndim != 1:
        raise ShapeError(
            f"conv1d: expected x [C_in,T], kernels [C_out,C_in,K], bias [C_out]; "
            f"got {x.shape}, {kernels.shape}, {bias.shape}"
        )
    c_out, c_in, k = kernels.shape
    if x.shape[0] != c_in or bias.shape[0] != c_out:
        raise ShapeError(
            f"conv1d: channel mismatch x {x.shape} vs kernels {kernels.shape}"
        )
    if stride < 1 or padding < 0:
        raise ContractError(f"conv1d: bad stride {stride} or padding {padding}")
    t = x.shape[1]
    if t + 2 * padding < k:
        raise LengthError(
            f"conv1d: input length {t} + 2*{padding} padding is shorter than kernel {k}"
        )
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    t_out = (t + 2 * padding - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    # windows: [C_in, T_out, K]
    out_data = np.einsum("oik,itk->ot", kernels.data, windows) + bias.data[:, None]
    out_data = np.ascontiguousarray(out_data, dtype=x.dtype)
    out = Tensor(
        out_data,
        requires_grad=x.requires_grad or kernels.requires_grad or bias.requires_grad,
    )

    def bwd(g):
        if kernels.requires_grad:
            _accum(kernels, np.einsum("ot,itk->oik", g, windows))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=1))
        if x.requires_grad:
            dwin = np.einsum("ot,oik->itk", g, kernels.data)
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[:, kk : kk + stride * t_out : stride] += dwin[:, :, kk]
            _accum(x, dxp[:, padding : padding + t] if padding else dxp)

    return _record("conv1d", (x, kernels, bias), out, bwd)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the channel axis: split [2c, T] -> a * sigmoid(b)."""
    if x.ndim != 2 or x.shape[0] % 2 != 0:
        raise ShapeError(f"glu needs an even channel count, got shape {x.shape}")
    c = x.shape[0] // 2
    a = x.data[:c]
    gate = 1.0 / (1.0 + np.exp(-x.data[c:]))
    out = Tensor(a * gate, requires_grad=x.requires_grad)

    def bwd(g):
        da = g * gate
        db = g * a * gate * (1.0 - gate)
        _accum(x, np.concatenate([da, db], axis=0))

    return _record("glu", (x,), out, bwd)


def dropout(x: Tensor, p: float, train: bool, gen: np.random.Generator | None = None) -> Tensor:
    """Zero elements with probability ``p`` and rescale survivors by 1/(1-p).

    In eval mode (or at p=0) this is the identity map, bit-exact.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if gen is None:
        raise ContractError("train-mode dropout needs a random generator")
    keep = (gen.random(x.shape) >= p).astype(x.dtype.type) / x.dtype.type(1.0 - p)
    out = Tensor(x.data * keep, requires_grad=x.requires_grad)

    def bwd(g):
        _accum(x, g * keep)

    return _record("dropout", (x,), out, bwd)
