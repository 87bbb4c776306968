"""Dense float64 tensors with tape-based reverse-mode differentiation.

Primitives record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient; outside a tape they are plain numpy
computations, which is what inference and validation use.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = total(mul(x, x))
    >>> backward(tape, loss)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

CHECKPOINT_VERSION = 1
LN_EPS = 1e-12


class ShapeError(ValueError):
    pass


class GradCheckFailure(FloatingPointError):
    def __init__(self, message, component):
        super().__init__(message)
        self.component = component


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    primitive: str
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered record of primitive applications.

    Used as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.entries)


_ACTIVE: list[Tape] = []


def _emit(primitive, inputs, data, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].entries.append(TapeEntry(primitive, tuple(inputs), out, backward_fn))
    return out


def _mismatch(primitive, a, b):
    return ShapeError(f"{primitive}: incompatible shapes {tuple(a)} and {tuple(b)}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# elementwise and arithmetic

def _bias_axes(a_shape, b_shape):
    if a_shape == b_shape:
        return None
    if len(b_shape) < len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape:
        return tuple(range(len(a_shape) - len(b_shape)))
    return False


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias matching trailing dims of ``a``."""
    axes = _bias_axes(a.shape, b.shape)
    if axes is False:
        raise _mismatch("add", a.shape, b.shape)

    def back(g):
        return g, (g if axes is None else g.sum(axis=axes))

    return _emit("add", (a, b), a.data + b.data, back)


def sub(a, b):
    axes = _bias_axes(a.shape, b.shape)
    if axes is False:
        raise _mismatch("sub", a.shape, b.shape)

    def back(g):
        return g, (-g if axes is None else -g.sum(axis=axes))

    return _emit("sub", (a, b), a.data - b.data, back)


def mul(a, b):
    if a.shape != b.shape:
        raise _mismatch("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a, c):
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def minimum(a, b):
    if a.shape != b.shape:
        raise _mismatch("minimum", a.shape, b.shape)
    pick_a = a.data <= b.data
    return _emit("minimum", (a, b), np.where(pick_a, a.data, b.data),
                 lambda g: (g * pick_a, g * ~pick_a))


def tanh(x):
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = expit(x.data)
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def exp(x):
    y = np.exp(x.data)
    return _emit("exp", (x,), y, lambda g: (g * y,))


def log(x):
    xd = x.data
    with np.errstate(divide="ignore"):
        y = np.log(xd)
    return _emit("log", (x,), y, lambda g: (g / xd,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """Tanh approximation of GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _emit("gelu", (x,), y, back)


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (x,), y, back)


def log_softmax(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def back(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", (x,), y, back)


# --------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across the leading axes of ``a``) or has the
    same leading batch axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _mismatch("matmul", a.shape, b.shape)
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise _mismatch("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if shared:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _emit("matmul", (a, b), np.matmul(ad, bd), back)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored as (in, out)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise _mismatch("linear", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[1],):
        raise _mismatch("linear", weight.shape, bias.shape)
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is not None:
        y = y + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("linear", inputs, y, back)


def layer_norm(x, gain, bias, eps=LN_EPS):
    if gain.shape != (x.shape[-1],) or bias.shape != gain.shape:
        raise _mismatch("layer_norm", x.shape, gain.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", (x, gain, bias), xhat * gd + bias.data, back)


def lstm_cell(x, state, weight, bias):
    """One fused LSTM step.

    ``state`` packs ``[h | c]`` along the last axis; the result has the same
    packing. ``weight`` is (in + hidden, 4 * hidden) with gate blocks ordered
    input, forget, candidate, output.
    """
    hidden = state.shape[-1] // 2
    if (state.shape[-1] != 2 * hidden or x.shape[:-1] != state.shape[:-1]
            or weight.shape != (x.shape[-1] + hidden, 4 * hidden)
            or bias.shape != (4 * hidden,)):
        raise ShapeError(
            f"lstm_cell: incompatible shapes x{x.shape}, state{state.shape}, "
            f"weight{weight.shape}, bias{bias.shape}")
    h, c = state.data[..., :hidden], state.data[..., hidden:]
    xh = np.concatenate([x.data, h], axis=-1)
    z = xh @ weight.data + bias.data
    i = expit(z[..., :hidden])
    f = expit(z[..., hidden:2 * hidden])
    cand = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = expit(z[..., 3 * hidden:])
    c_new = f * c + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc
    wd = weight.data
    n_in = x.shape[-1]

    def back(g):
        gh, gc = g[..., :hidden], g[..., hidden:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * cand * i * (1.0 - i),
            dc * c * f * (1.0 - f),
            dc * i * (1.0 - cand * cand),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        dxh = dz @ wd.T
        dz2 = dz.reshape(-1, dz.shape[-1])
        dw = xh.reshape(-1, xh.shape[-1]).T @ dz2
        dstate = np.concatenate([dxh[..., n_in:], dc * f], axis=-1)
        return dxh[..., :n_in], dstate, dw, dz2.sum(axis=0)

    return _emit("lstm_cell", (x, state, weight, bias),
                 np.concatenate([h_new, c_new], axis=-1), back)


# --------------------------------------------------------------------------
# structural

def concat(tensors: Sequence[Tensor], axis=-1):
    tensors = list(tensors)
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise _mismatch("concat", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), back)


def slice_last(x, start, stop):
    """``x[..., start:stop]``."""
    width = x.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice_last: range [{start}, {stop}) outside last axis of {x.shape}")

    def back(g):
        full = np.zeros(x.shape)
        full[..., start:stop] = g
        return (full,)

    return _emit("slice", (x,), x.data[..., start:stop], back)


def reshape(x, shape):
    shape = tuple(shape)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise _mismatch("reshape", old, shape) from None
    return _emit("reshape", (x,), y, lambda g: (g.reshape(old),))


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inverse),))


def expand(x, axis, n):
    """Insert a new axis at ``axis`` and repeat ``x`` ``n`` times along it."""
    y = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _emit("expand", (x,), y, lambda g: (g.sum(axis=axis),))


def total(x):
    """Sum of all elements, as a 0-d tensor."""
    shape = x.shape
    return _emit("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, g),))


def sum_last(x):
    shape = x.shape
    return _emit("sum_last", (x,), x.data.sum(axis=-1),
                 lambda g: (np.broadcast_to(g[..., None], shape).copy(),))


def embedding_lookup(table, ids):
    """Rows of ``table`` selected by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: ids outside table of shape {table.shape}")
    rows, dim = table.shape

    def back(g):
        gt = np.zeros((rows, dim))
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, dim))
        return (gt,)

    return _emit("embedding_lookup", (table,), table.data[ids], back)


take_rows = embedding_lookup


def pick(x, ids):
    """``x[..., ids]`` per row: one entry of the last axis for every leading index."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise _mismatch("pick", x.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[-1]):
        raise ShapeError(f"pick: ids outside last axis of size {x.shape[-1]}")
    idx = ids[..., None]
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return _emit("pick", (x,), np.take_along_axis(x.data, idx, axis=-1)[..., 0], back)


def pointer_mix(p_vocab, attn, p_gen, src_ext_ids, extended_size):
    """Mix generation and copy distributions over an extended vocabulary.

    ``p_vocab`` (B, V), ``attn`` (B, S), ``p_gen`` (B, 1), ``src_ext_ids``
    (B, S) integer ids into the extended vocabulary of size ``extended_size``.
    """
    src_ext_ids = np.asarray(src_ext_ids, dtype=np.int64)
    b, v = p_vocab.shape
    if (attn.ndim != 2 or attn.shape[0] != b or p_gen.shape != (b, 1)
            or src_ext_ids.shape != attn.shape):
        raise ShapeError(
            f"pointer_mix: incompatible shapes p_vocab{p_vocab.shape}, attn{attn.shape}, "
            f"p_gen{p_gen.shape}, src{src_ext_ids.shape}")
    if extended_size < v:
        raise ShapeError(f"pointer_mix: extended size {extended_size} below vocab size {v}")
    if src_ext_ids.size and (src_ext_ids.min() < 0 or src_ext_ids.max() >= extended_size):
        bad = int(src_ext_ids[(src_ext_ids < 0) | (src_ext_ids >= extended_size)][0])
        raise ShapeError(f"pointer_mix: source id {bad} outside extended vocabulary of {extended_size}")
    pg = p_gen.data
    pv = p_vocab.data
    ad = attn.data
    rows = np.repeat(np.arange(b)[:, None], attn.shape[1], axis=1)
    out = np.zeros((b, extended_size))
    out[:, :v] = pg * pv
    np.add.at(out, (rows, src_ext_ids), (1.0 - pg) * ad)

    def back(g):
        g_copy = g[rows, src_ext_ids]
        g_gen = g[:, :v]
        g_pg = (g_gen * pv).sum(axis=1, keepdims=True) - (g_copy * ad).sum(axis=1, keepdims=True)
        return pg * g_gen, (1.0 - pg) * g_copy, g_pg

    return _emit("pointer_mix", (p_vocab, attn, p_gen), out, back)


_PRIMITIVES = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "scale": scale,
    "minimum": minimum, "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log,
    "gelu": gelu, "softmax": softmax, "log_softmax": log_softmax, "concat": concat,
    "embedding_lookup": embedding_lookup, "layer_norm": layer_norm,
    "lstm_cell": lstm_cell, "linear": linear, "reshape": reshape,
    "transpose": transpose, "expand": expand, "sum": total, "sum_last": sum_last,
    "slice": slice_last, "pick": pick, "pointer_mix": pointer_mix,
}


def forward(primitive, inputs, **attrs):
    """Apply a primitive by name; ``attrs`` carries non-tensor arguments."""
    try:
        fn = _PRIMITIVES[primitive]
    except KeyError:
        raise ValueError(f"unknown primitive {primitive!r}") from None
    if primitive == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)


# --------------------------------------------------------------------------
# differentiation

def backward(tape, loss):
    """Populate ``.grad`` on every grad-requiring leaf reachable on ``tape``.

    Gradients are assigned, not accumulated.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    produced = {id(e.output) for e in tape.entries}
    if id(loss) not in produced and not loss.requires_grad:
        raise ValueError("backward: loss was not produced on this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for entry in tape.entries:
        for t in entry.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    if id(loss) not in produced:
        loss.grad = np.ones_like(loss.data)


def gradient_pairs(f, x, eps=1e-5, components=None, rng=None):
    """Analytic and central-difference gradients of scalar ``f(x)`` at checked entries of ``x``.

    With ``components`` set, only that many randomly chosen entries are
    checked. Returns (indices, analytic, numeric).
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    was = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            out = f(x)
        if not np.isfinite(out.data).all():
            raise GradCheckFailure("non-finite loss at the base point", None)
        backward(tape, out)
        analytic = x.grad.reshape(-1).copy()
    finally:
        x.requires_grad = was
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if components is not None and components < flat.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=components, replace=False))
    numeric = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo) and np.isfinite(analytic[i])):
            raise GradCheckFailure(f"non-finite value at component {int(i)}", int(i))
        numeric[k] = (hi - lo) / (2 * eps)
    return idx, analytic[idx], numeric


def grad_check(f, x, eps=1e-5, components=None, rng=None):
    """Largest elementwise relative error |a - n| / (|n| + 1e-8) between analytic and numeric gradients."""
    _, analytic, numeric = gradient_pairs(f, x, eps, components, rng)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8), initial=0.0))


def vector_relative_error(analytic, numeric, floor=1e-12):
    """||a - n|| / (||a|| + ||n||); below ``floor`` total magnitude both count as zero."""
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


# --------------------------------------------------------------------------
# parameters and checkpoints

def uniform_param(rng, shape, limit=0.1, name=None):
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def normal_param(rng, shape, fan_in, name=None):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True, name=name)


def constant_param(shape, value, name=None):
    return Tensor(np.full(shape, float(value)), requires_grad=True, name=name)


def save_checkpoint(path, params):
    """Write named arrays: version, count, then (name, shape, <f8 values) records."""
    chunks = [struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    version, count = struct.unpack_from("<II", buf, 0)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after {count} records")
    return out
