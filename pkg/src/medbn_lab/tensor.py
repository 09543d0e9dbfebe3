"""Minimal immutable dense tensor and the channel-grouped reductions.

Tensors are float64, rank 1 to 4, stored row-major. The canonical layouts
are (B, C, H, W) for image-shaped activations and (B, C) for vector data;
rank-2 inputs are treated as (B, C, 1, 1) by all normalization code.
"""

import numpy as np

_OPS = {"+", "-", "*", "/"}


class Tensor:
    """Immutable float64 array of rank 1..4 with positive extents."""

    __slots__ = ("data",)

    def __init__(self, data):
        # always copy: freezing an aliased input would mutate caller state
        arr = np.array(data, dtype=np.float64, order="C", ndmin=1)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ValueError(f"rank must be 1..4, got {arr.ndim}")
        if any(e <= 0 for e in arr.shape):
            raise ValueError(f"extents must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self):
        return self.data.shape

    @property
    def rank(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other):
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


def channel_slices(arr):
    """Reshape a rank-2/4 array to (C, B*H*W), grouping each channel's values."""
    if arr.ndim == 2:
        return np.ascontiguousarray(arr.T)
    if arr.ndim == 4:
        c = arr.shape[1]
        return np.ascontiguousarray(np.moveaxis(arr, 1, 0).reshape(c, -1))
    raise ValueError(f"expected rank 2 or 4, got rank {arr.ndim}")


def from_channel_slices(cs, shape):
    """Inverse of channel_slices for the given original shape."""
    if len(shape) == 2:
        return np.ascontiguousarray(cs.T)
    b, c, h, w = shape
    return np.ascontiguousarray(np.moveaxis(cs.reshape(c, b, h, w), 0, 1))


def reduce_over_bhw(t, reducer):
    """Apply ``reducer`` to each channel's multiset of B*H*W values.

    ``t`` must have rank 4, or rank 2 which is treated as H = W = 1.
    Returns a float64 vector of length C.
    """
    if not isinstance(t, Tensor):
        raise TypeError("expected a Tensor")
    if t.rank not in (2, 4):
        raise ValueError(f"expected rank 2 or 4, got rank {t.rank}")
    cs = channel_slices(t.data)
    if cs.shape[1] == 0:
        raise ValueError("empty reduction group")
    return np.array([float(reducer(cs[c])) for c in range(cs.shape[0])])


def _broadcast_operand(a, b):
    if np.isscalar(b) or (isinstance(b, np.ndarray) and b.ndim == 0):
        return np.float64(b)
    arr = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if arr.shape == a.shape:
        return arr
    # a length-C vector broadcast across (B, H, W)
    if arr.ndim == 1 and a.ndim >= 2 and arr.shape[0] == a.shape[1]:
        extra = (1,) * (a.ndim - 2)
        return arr.reshape((1, arr.shape[0]) + extra)
    raise ValueError("broadcast incompatible")


def elementwise(a, b, op):
    """Elementwise {+,-,*,/} with broadcast over the channel axis only."""
    if op not in _OPS:
        raise ValueError(f"op must be one of {sorted(_OPS)}, got {op!r}")
    if not isinstance(a, Tensor):
        raise TypeError("expected a Tensor")
    rhs = _broadcast_operand(a.data, b)
    if op == "+":
        out = a.data + rhs
    elif op == "-":
        out = a.data - rhs
    elif op == "*":
        out = a.data * rhs
    else:
        if np.any(rhs == 0.0):
            raise ZeroDivisionError("division by zero")
        out = a.data / rhs
    if not np.isfinite(out).all():
        raise ValueError("elementwise result is not finite")
    return Tensor(out)
