"""Parameterised layers and the down/up/recurrent blocks of the encoder-decoder.

Feature maps are (batch, channels, freq, time).  A block that works along
one axis folds the other axis into the batch and runs a 1-D op, so a
frequency block sees sequences of length F and a time block sequences of
length T.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

TIME, FREQ = "time", "freq"


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        unexpected = set(arrays) - set(own)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in own.items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)


def _uniform(rng, bound, shape):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.weight = _uniform(rng, np.sqrt(6.0 / (c_in * kernel)), (c_out, c_in, kernel))
        self.bias = _zeros(c_out)

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        fan_in = max(1, c_in * kernel // stride)
        self.weight = _uniform(rng, np.sqrt(6.0 / fan_in), (c_in, c_out, kernel))
        self.bias = _zeros(c_out)

    def __call__(self, x):
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)


class GRU(Module):
    """Single-layer GRU over (N, T, C) sequences, zero initial state."""

    def __init__(self, c_in, hidden, rng=None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        self.w_in = _uniform(rng, bound, (c_in, 3 * hidden))
        self.w_hid = _uniform(rng, bound, (hidden, 3 * hidden))
        self.bias = _zeros(3 * hidden)

    def __call__(self, x):
        return T.gru(x, self.w_in, self.w_hid, self.bias)


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = _zeros(channels)

    def __call__(self, x):
        return T.instance_norm(x, self.gamma, self.beta, self.eps)


# --------------------------------------------------------------------------
# Axis folding
# --------------------------------------------------------------------------

def fold(x: Tensor, axis: str) -> Tensor:
    """(B, C, F, T) -> (B*T, C, F) for ``freq`` or (B*F, C, T) for ``time``."""
    b, c, f, t = x.shape
    if axis == TIME:
        return x.transpose(0, 2, 1, 3).reshape(b * f, c, t)
    if axis == FREQ:
        return x.transpose(0, 3, 1, 2).reshape(b * t, c, f)
    raise ValueError(f"unknown axis {axis!r}")


def unfold(y: Tensor, axis: str, batch: int, other: int) -> Tensor:
    """Inverse of :func:`fold`; ``other`` is the extent of the folded axis."""
    _, c, length = y.shape
    if axis == TIME:
        return y.reshape(batch, other, c, length).transpose(0, 2, 1, 3)
    return y.reshape(batch, other, c, length).transpose(0, 2, 3, 1)


def apply_along(x: Tensor, axis: str, fn) -> Tensor:
    b, _, f, t = x.shape
    return unfold(fn(fold(x, axis)), axis, b, t if axis == FREQ else f)


def time_norm(x: Tensor, norm: InstanceNorm) -> Tensor:
    """Instance normalisation over time for every (instance, channel, freq) row."""
    return apply_along(x, TIME, norm)


# --------------------------------------------------------------------------
# Blocks
# --------------------------------------------------------------------------

class DownBlock(Module):
    """Stride-2 convolution (kernel 4, padding 1) along one axis, then ReLU."""

    def __init__(self, axis, c_in, c_out, pre_norm=False, rng=None):
        self.axis = axis
        self.conv = Conv1d(c_in, c_out, 4, stride=2, padding=1, rng=rng)
        self.norm = InstanceNorm(c_in) if pre_norm else None

    def __call__(self, x):
        extent = x.shape[2] if self.axis == FREQ else x.shape[3]
        if extent < 2:
            raise ShapeError(f"down block along {self.axis} needs extent >= 2, got {extent}")
        if self.norm is not None:
            x = time_norm(x, self.norm)
        return apply_along(x, self.axis, lambda y: T.relu(self.conv(y)))


class UpBlock(Module):
    """Stride-2 transposed convolution along one axis, ReLU, then skip concatenation.

    The upsampled map is cropped to the skip's extent (at most one extra
    sample is tolerated) and the skip is appended on the channel axis.
    """

    def __init__(self, axis, c_in, c_out, pre_norm=False, rng=None):
        self.axis = axis
        self.tconv = ConvTranspose1d(c_in, c_out, 4, stride=2, padding=1, rng=rng)
        self.norm = InstanceNorm(c_in) if pre_norm else None

    def __call__(self, x, skip=None):
        if self.norm is not None:
            x = time_norm(x, self.norm)
        y = apply_along(x, self.axis, lambda v: T.relu(self.tconv(v)))
        if skip is None:
            return y
        dim = 2 if self.axis == FREQ else 3
        excess = y.shape[dim] - skip.shape[dim]
        if excess not in (0, 1) or y.shape[0] != skip.shape[0] or y.shape[5 - dim] != skip.shape[5 - dim]:
            raise ShapeError(f"skip {skip.shape} does not match upsampled {y.shape}")
        if excess:
            y = y[:, :, : skip.shape[2], :] if dim == 2 else y[:, :, :, : skip.shape[3]]
        return T.concat([y, skip], axis=1)


class NormGRUBlock(Module):
    """Optional instance norm over time, then a GRU along time per frequency row.

    The GRU hidden size equals the channel count, so shapes are preserved.
    """

    def __init__(self, channels, use_norm=True, rng=None):
        self.norm = InstanceNorm(channels) if use_norm else None
        self.gru = GRU(channels, channels, rng=rng)

    def __call__(self, x):
        def run(seq):  # (N, C, T)
            if self.norm is not None:
                seq = self.norm(seq)
            return self.gru(seq.transpose(0, 2, 1)).transpose(0, 2, 1)

        return apply_along(x, TIME, run)
