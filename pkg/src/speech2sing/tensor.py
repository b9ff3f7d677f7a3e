"""A small reverse-mode automatic differentiation engine on top of numpy.

Tensors are dense, row-major arrays.  Every op that touches a tensor with
``requires_grad`` records a backward closure; :meth:`Tensor.backward` walks
the recorded graph once in reverse topological order and accumulates
gradients into the leaves.  Elementwise ops accept equal shapes or a scalar
operand; there is no other broadcasting.

Production runs use float32.  Gradient checks switch the default dtype to
float64 with :func:`default_dtype`.
"""
from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ContractError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextmanager
def no_grad():
    """Disable graph recording, e.g. for inference."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- construction helpers ------------------------------------------------
    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- autodiff -------------------------------------------------------------
    def backward(self):
        backward(self)


def _wrap(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every grad-tracking leaf, then free the graph."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != {parent.shape}")
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
        node._parents = ()
        node._backward = None


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def _check_pair(a: Tensor, b: Tensor, op):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_pair(a, b, "add")
    return Tensor._result(
        a.data + b.data, (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_pair(a, b, "sub")
    return Tensor._result(
        a.data - b.data, (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a if isinstance(a, Tensor) else None)
    _check_pair(a, b, "mul")
    return Tensor._result(
        a.data * b.data, (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)), "mul",
    )


def square(x: Tensor) -> Tensor:
    return Tensor._result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y,), "exp")


# --------------------------------------------------------------------------
# Reductions and shape manipulation
# --------------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.asarray(y), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(
        np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "transpose",
    )


def getitem(x: Tensor, index) -> Tensor:
    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._result(np.array(x.data[index]), (x,), back, "getitem")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: {t.shape} incompatible with {ref} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back, "concat")


def pad(x: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows :func:`numpy.pad`."""
    pad_width = [tuple(p) for p in pad_width]
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return Tensor._result(np.pad(x.data, pad_width), (x,), lambda g: (g[crop].copy(),), "pad")


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands, or a batch of ``(..., m, k)`` against ``(k, n)``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor._result(y, (a, b), back, "matmul")


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Per-row ``-l[c] + log(sum(exp(l)))`` for ``logits`` of shape (N, K).

    Uses the max-shifted log-sum-exp.  Returns an (N,) tensor.
    """
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != classes.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {classes.shape[0]} labels")
    n, k = logits.shape
    if np.any(classes < 0) or np.any(classes >= k):
        raise IndexError(f"class index outside [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = (m[:, 0] + np.log(s[:, 0])) - z[rows, classes]

    def back(g):
        p = e / s
        p[rows, classes] -= 1.0
        return (g[:, None] * p,)

    return Tensor._result(loss, (logits,), back, "cross_entropy")


# --------------------------------------------------------------------------
# Convolutions
# --------------------------------------------------------------------------

def _batched(x: Tensor):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (C, L) or (N, C, L), got {x.shape}")
    return x, False


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """1-D cross-correlation.  ``x``: (N, C_in, L) or (C_in, L); ``weight``: (C_out, C_in, K)."""
    x, squeeze = _batched(x)
    n, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, weight expects {w_in}")
    lp = length + 2 * padding
    if k > lp:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {lp}")
    l_out = (lp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :l_out]
    cols = win.transpose(0, 2, 1, 3).reshape(n * l_out, c_in * k)
    wmat = weight.data.reshape(c_out, c_in * k)
    y = (cols @ wmat.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    if bias is not None:
        y = y + bias.data[None, :, None]
    y = np.ascontiguousarray(y)

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(n * l_out, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ wmat).reshape(n, l_out, c_in, k)
        gxp = np.zeros_like(xp)
        span = stride * (l_out - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, padding : padding + length]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    out = Tensor._result(y, parents, back if bias is not None else (lambda g: back(g)[:2]), "conv1d")
    return reshape(out, out.shape[1:]) if squeeze else out


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed 1-D convolution; ``weight``: (C_in, C_out, K).

    Output length is ``(L - 1) * stride - 2 * padding + K``.  With bias off
    this is exactly the input-gradient of :func:`conv1d` using the same
    weight array.
    """
    x, squeeze = _batched(x)
    n, c_in, length = x.shape
    w_in, c_out, k = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv_transpose1d: input has {c_in} channels, weight expects {w_in}")
    full = (length - 1) * stride + k
    l_out = full - 2 * padding
    if l_out <= 0:
        raise ShapeError("conv_transpose1d: padding consumes the whole output")
    x2 = x.data.transpose(0, 2, 1).reshape(n * length, c_in)
    wmat = weight.data.reshape(c_in, c_out * k)
    cols = (x2 @ wmat).reshape(n, length, c_out, k)
    y = np.zeros((n, c_out, full), dtype=np.result_type(x.data, weight.data))
    span = stride * (length - 1) + 1
    for j in range(k):
        y[:, :, j : j + span : stride] += cols[:, :, :, j].transpose(0, 2, 1)
    y = y[:, :, padding : padding + l_out]
    if bias is not None:
        y = y + bias.data[None, :, None]
    y = np.ascontiguousarray(y)

    def back(g):
        gf = np.pad(g, ((0, 0), (0, 0), (padding, padding)))
        dcols = np.empty((n, length, c_out, k), dtype=g.dtype)
        for j in range(k):
            dcols[:, :, :, j] = gf[:, :, j : j + span : stride].transpose(0, 2, 1)
        d2 = dcols.reshape(n * length, c_out * k)
        gw = (x2.T @ d2).reshape(weight.shape)
        gx = np.ascontiguousarray((d2 @ wmat.T).reshape(n, length, c_in).transpose(0, 2, 1))
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    out = Tensor._result(y, parents, back if bias is not None else (lambda g: back(g)[:2]), "conv_transpose1d")
    return reshape(out, out.shape[1:]) if squeeze else out


# --------------------------------------------------------------------------
# Recurrent and normalisation layers
# --------------------------------------------------------------------------

def gru(x: Tensor, w_in: Tensor, w_hid: Tensor, bias: Tensor, h0: Tensor | None = None) -> Tensor:
    """Run a GRU over ``x`` of shape (N, T, C) or (T, C); returns every hidden state.

    Gate blocks in ``w_in`` (C, 3H), ``w_hid`` (H, 3H) and ``bias`` (3H) are
    ordered update, reset, candidate::

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_n + (r * h) U_n + b_n)
        h' = (1 - z) * h + z * n

    ``h0`` may be (H,), shared by the batch, or (N, H).  Gradients are
    computed by backpropagation through time.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"gru: expected (N, T, C), got {x.shape}")
    n, steps, c = xd.shape
    hidden = w_hid.shape[0]
    if w_in.shape != (c, 3 * hidden) or w_hid.shape != (hidden, 3 * hidden) or bias.shape != (3 * hidden,):
        raise ShapeError(f"gru: weights {w_in.shape}, {w_hid.shape}, {bias.shape} for input {c}, hidden {hidden}")
    dtype = np.result_type(xd, w_in.data)
    if h0 is None:
        h = np.zeros((n, hidden), dtype=dtype)
    else:
        if h0.shape not in ((hidden,), (n, hidden)):
            raise ShapeError(f"gru: initial state {h0.shape}")
        h = np.broadcast_to(h0.data, (n, hidden)).astype(dtype)

    H = hidden
    wx = (xd.reshape(n * steps, c) @ w_in.data + bias.data).reshape(n, steps, 3 * H)
    u_zr, u_n = w_hid.data[:, : 2 * H], w_hid.data[:, 2 * H :]
    out = np.empty((n, steps, H), dtype=dtype)
    cache = []
    for t in range(steps):
        a = wx[:, t]
        zr = _sigmoid(a[:, : 2 * H] + h @ u_zr)
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        cand = np.tanh(a[:, 2 * H :] + rh @ u_n)
        cache.append((z, r, cand, h, rh))
        h = (1.0 - z) * h + z * cand
        out[:, t] = h

    def back(g):
        if squeeze:
            g = g[None]
        g_wx = np.empty((n, steps, 3 * H), dtype=dtype)
        g_u = np.zeros_like(w_hid.data)
        dh = np.zeros((n, H), dtype=dtype)
        for t in reversed(range(steps)):
            z, r, cand, hp, rh = cache[t]
            dh = dh + g[:, t]
            dcand = dh * z * (1.0 - cand * cand)
            dz = dh * (cand - hp) * z * (1.0 - z)
            dhp = dh * (1.0 - z)
            drh = dcand @ u_n.T
            g_u[:, 2 * H :] += rh.T @ dcand
            dr = drh * hp * r * (1.0 - r)
            dhp += drh * r
            dzr = np.concatenate([dz, dr], axis=1)
            g_u[:, : 2 * H] += hp.T @ dzr
            dhp += dzr @ u_zr.T
            g_wx[:, t, : 2 * H] = dzr
            g_wx[:, t, 2 * H :] = dcand
            dh = dhp
        flat = g_wx.reshape(n * steps, 3 * H)
        g_x = (flat @ w_in.data.T).reshape(xd.shape)
        g_win = xd.reshape(n * steps, c).T @ flat
        g_b = flat.sum(axis=0)
        grads = [g_x[0] if squeeze else g_x, g_win, g_u, g_b]
        if h0 is not None:
            grads.append(dh.sum(axis=0) if h0.shape == (H,) else dh)
        return tuple(grads)

    parents = (x, w_in, w_hid, bias) + ((h0,) if h0 is not None else ())
    return Tensor._result(out[0] if squeeze else out, parents, back, "gru")


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    """Normalise each (instance, channel) row of ``x`` (N, C, T) over time."""
    x, squeeze = _batched(x)
    n, c, steps = x.shape
    if steps < 2:
        raise ContractError("instance_norm needs at least two time steps")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm: affine params {gamma.shape}/{beta.shape} for {c} channels")
    mu = x.data.mean(axis=2, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=2, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def back(g):
        dxhat = g * gamma.data[None, :, None]
        gx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=2, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    out = Tensor._result(y, (x, gamma, beta), back, "instance_norm")
    return reshape(out, out.shape[1:]) if squeeze else out


# --------------------------------------------------------------------------
# Checkpoint files
# --------------------------------------------------------------------------

CKPT_MAGIC = b"S2SCKPT\x00"
CKPT_VERSION = 1


def save_tensors(path, tensors: dict, header: dict | None = None) -> None:
    """Write named arrays as little-endian float32 after a JSON header.

    Layout: magic, u32 version, u32 header length, header JSON, u32 count,
    then per tensor: u16 name length, name, u8 ndim, u32 dims, raw data.
    """
    head = json.dumps(header or {}, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(head)), head, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns ``(header, {name: ndarray})``."""
    blob = Path(path).read_bytes()
    if not blob.startswith(CKPT_MAGIC):
        raise ContractError(f"{path}: not a checkpoint file")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != CKPT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(blob[pos : pos + hlen])
    pos += hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + klen].decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        nbytes = 4 * int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
        pos += nbytes
    return header, arrays
