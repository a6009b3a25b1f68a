"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A ``Tape`` records every primitive application in creation order; ``backward``
replays the records in reverse and accumulates vector-Jacobian products into
the requested leaf tensors. Tensors are immutable once created and confined,
together with their tape, to a single thread.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when primitive inputs do not conform to the primitive's contract."""


class Tensor:
    """A node on a tape: a float64 ndarray plus links to its parents."""

    __slots__ = ("data", "tape", "tid", "parents", "vjp", "leaf", "name")

    def __init__(self, data, tape, tid, parents=(), vjp=None, leaf=False, name=None):
        self.data = data
        self.tape = tape
        self.tid = tid
        self.parents = parents
        self.vjp = vjp
        self.leaf = leaf
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = self.name if self.name else f"t{self.tid}"
        return f"Tensor({tag}, shape={self.data.shape}, leaf={self.leaf})"


class Tape:
    """Append-only record of primitive applications; owns all tensors it creates."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, data, parents=(), vjp=None, leaf=False, name=None):
        data = np.asarray(data, dtype=np.float64)
        t = Tensor(data, self, len(self._nodes), parents, vjp, leaf, name)
        self._nodes.append(t)
        return t

    def leaf(self, data, name=None):
        """Create a leaf tensor (parameter or input); gradients can target it."""
        return self._record(data, leaf=True, name=name)

    def constant(self, data, name=None):
        """Create a non-leaf constant; it never receives a gradient."""
        return self._record(data, name=name)

    def backward(self, output, targets):
        """Accumulate d(output)/d(leaf) for every leaf in ``targets``.

        ``output`` must be a single-element tensor on this tape. Returns a dict
        mapping leaf id to a gradient array shaped like the leaf; leaves with no
        path to the output get zeros.
        """
        if output.tape is not self:
            raise ValueError("output tensor does not live on this tape")
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.data.shape}")
        targets = list(targets)
        for t in targets:
            if isinstance(t, Tensor) and not t.leaf:
                raise ValueError(f"backward target {t!r} is not a leaf")
        target_ids = {t.tid if isinstance(t, Tensor) else int(t) for t in targets}
        for tid in target_ids:
            if not self._nodes[tid].leaf:
                raise ValueError(f"backward target id {tid} is not a leaf")

        grads = {output.tid: np.ones_like(output.data)}
        for node in reversed(self._nodes[: output.tid + 1]):
            g = grads.pop(node.tid, None)
            if g is None:
                continue
            if node.tid in target_ids:
                grads[node.tid] = g  # keep; targets are leaves, nothing to propagate
                continue
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                acc = grads.get(parent.tid)
                grads[parent.tid] = pg if acc is None else acc + pg

        out = {}
        for tid in target_ids:
            g = grads.get(tid)
            out[tid] = g if g is not None else np.zeros_like(self._nodes[tid].data)
        return out


def _same_tape(*tensors):
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("all inputs must live on the same tape")
    return tape


def _swap(a):
    return np.swapaxes(a, -1, -2)


def matmul(a, b, transpose_a=False, transpose_b=False):
    """Matrix product; 2-D operands, stacked 3-D operands, or 3-D against shared 2-D."""
    tape = _same_tape(a, b)
    A = _swap(a.data) if transpose_a else a.data
    B = _swap(b.data) if transpose_b else b.data
    if A.ndim not in (2, 3) or B.ndim not in (2, 3) or B.ndim > A.ndim:
        raise ShapeError(f"matmul unsupported ranks {a.data.shape} @ {b.data.shape}")
    if A.shape[-1] != B.shape[-2] or (A.ndim == 3 and B.ndim == 3 and A.shape[0] != B.shape[0]):
        raise ShapeError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    out = A @ B

    def vjp(g):
        dA = g @ _swap(B)
        dB = _swap(A) @ g
        if B.ndim < dB.ndim:
            dB = dB.sum(axis=0)
        da = _swap(dA) if transpose_a else dA
        db = _swap(dB) if transpose_b else dB
        return da, db

    return tape._record(out, (a, b), vjp)


def add(a, b):
    """Elementwise sum; the only broadcast allowed is a bias vector over rows."""
    tape = _same_tape(a, b)
    if a.data.shape == b.data.shape:
        return tape._record(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim >= 2 and a.data.shape[-1] == b.data.shape[0]:
        lead = tuple(range(a.data.ndim - 1))
        return tape._record(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=lead)))
    raise ShapeError(f"add shape mismatch {a.data.shape} + {b.data.shape}")


def mul(a, b):
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shape mismatch {a.data.shape} * {b.data.shape}")
    return tape._record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    return a.tape._record(a.data * c, (a,), lambda g: (g * c,))


def concat(tensors, axis):
    tape = _same_tape(*tensors)
    shapes = [t.data.shape for t in tensors]
    ref = list(shapes[0])
    for s in shapes[1:]:
        probe = list(s)
        if len(probe) != len(ref) or any(
            i != (axis % len(ref)) and probe[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(f"concat shape mismatch along axis {axis}: {shapes}")
    widths = [s[axis] for s in shapes]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def slice_axis(x, axis, start, stop):
    """Contiguous slice [start, stop) along one axis."""
    extent = x.data.shape[axis]
    if not (0 <= start < stop <= extent):
        raise ShapeError(f"slice [{start}:{stop}) out of range for axis {axis} of {x.data.shape}")
    idx = [np.s_[:]] * x.data.ndim
    idx[axis] = np.s_[start:stop]
    idx = tuple(idx)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return x.tape._record(x.data[idx], (x,), vjp)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape {x.data.shape} -> {shape} changes element count")
    return x.tape._record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))
    return x.tape._record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return x.tape._record(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x):
    keep = x.data > 0
    return x.tape._record(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def log(x):
    return x.tape._record(np.log(x.data), (x,), lambda g: (g / x.data,))


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return x.tape._record(out, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    tape = _same_tape(x, gain, bias)
    width = x.data.shape[-1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} do not match width {width}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    norm = (x.data - mu) * inv
    lead = tuple(range(x.data.ndim - 1))

    def vjp(g):
        gq = g * gain.data
        dx = inv * (gq - gq.mean(axis=-1, keepdims=True)
                    - norm * (gq * norm).mean(axis=-1, keepdims=True))
        return dx, (g * norm).sum(axis=lead), g.sum(axis=lead)

    return tape._record(norm * gain.data + bias.data, (x, gain, bias), vjp)


def dropout_with_mask(x, mask):
    """Multiply by a pre-sampled mask array; eval mode passes all-ones."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.data.shape:
        raise ShapeError(f"dropout mask shape {mask.shape} does not match input {x.data.shape}")
    return x.tape._record(x.data * mask, (x,), lambda g: (g * mask,))


def mean(x, axis=None):
    if axis is None:
        n = x.data.size
        return x.tape._record(x.data.mean(), (x,), lambda g: (np.full_like(x.data, g / n),))
    n = x.data.shape[axis]
    return x.tape._record(
        x.data.mean(axis=axis), (x,), lambda g: (np.expand_dims(g, axis).repeat(n, axis) / n,)
    )


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    if axis is None:
        return x.tape._record(x.data.sum(), (x,), lambda g: (np.full_like(x.data, g),))
    n = x.data.shape[axis]
    return x.tape._record(
        x.data.sum(axis=axis), (x,), lambda g: (np.expand_dims(g, axis).repeat(n, axis),)
    )


def gather(x, indices, axis=0):
    """Select slices along an axis by integer index (np.take semantics)."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= x.data.shape[axis]):
        raise ShapeError(f"gather indices out of range for axis {axis} of {x.data.shape}")

    def vjp(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return x.tape._record(np.take(x.data, indices, axis=axis), (x,), vjp)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "concat": concat,
    "slice": slice_axis,
    "reshape": reshape,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "log": log,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "dropout_with_mask": dropout_with_mask,
    "mean": mean,
    "sum": sum,
    "gather": gather,
}


def primitive_forward(op, *inputs, **kwargs):
    """Apply a named primitive; the result is recorded on the inputs' tape."""
    if op not in PRIMITIVES:
        raise KeyError(f"unknown primitive {op!r}")
    return PRIMITIVES[op](*inputs, **kwargs)
