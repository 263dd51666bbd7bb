"""Dense float64 tensors with a reverse-mode gradient tape.

This is deliberately minimal: only the operations the sensor-attention
encoder needs, all on numpy float64 arrays. Every operation validates its
output for NaN/Inf (non-finite values are treated as an error state, not a
value). Tensors without a tape are plain immutable values; attaching a tape
records operations for one backward pass.

Reductions that run across the token axis (softmax normalization, the
attention-weighted value sum, mean pooling) accumulate their addends in
value-sorted order. Sorting canonicalizes the floating-point summation
order, which is what makes the pooled logits bitwise invariant under token
permutations (a contract the model module relies on).
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.special import erf

PARAMS_MAGIC = "FREQHAR-PARAMS-v1"

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class DegenerateMaskError(ValueError):
    """A softmax row has no admissible entries."""


class LabelError(ValueError):
    """A class label lies outside [0, K)."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """The tape was used after its single backward pass."""


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")


class Tensor:
    """A float64 array plus the tape (if any) that is recording it."""

    __slots__ = ("data", "tape")

    def __init__(self, data, tape=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={self.tape is not None})"


class Tape:
    """Ordered record of operations; replayed once, in reverse, by backward.

    Gradients are accumulated per tensor identity and always have the same
    shape as the tensor's values.
    """

    def __init__(self):
        self._ops = []  # (output Tensor, backward fn)
        self._grads = {}  # id(Tensor) -> ndarray
        self._spent = False

    def watch(self, *tensors):
        for t in tensors:
            t.tape = self

    def _record(self, out, backward):
        self._ops.append((out, backward))

    def backward(self, root):
        """Run the reverse pass seeded with d(root)/d(root) = 1."""
        if self._spent:
            raise TapeError("backward already ran on this tape; re-run the forward pass")
        self._spent = True
        self._grads[id(root)] = np.ones_like(root.data)
        for out, backward in reversed(self._ops):
            g = self._grads.get(id(out))
            if g is None:
                continue
            backward(g)

    def grad(self, t):
        """Accumulated gradient of the backward root w.r.t. t, or None."""
        return self._grads.get(id(t))

    def _accumulate(self, t, g):
        key = id(t)
        if key in self._grads:
            self._grads[key] = self._grads[key] + g
        else:
            self._grads[key] = np.array(g, dtype=np.float64, copy=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _swap(arr):
    return np.swapaxes(arr, -1, -2)


def add(a, b):
    """Elementwise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, tape=_tape_of(a, b))
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, _unbroadcast(g, a.shape))
            tape._accumulate(b, _unbroadcast(g, b.shape))
        tape._record(out, backward)
    return out


def scale(a, c):
    """Multiply by a python float constant."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, tape=a.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, g * c)
        tape._record(out, backward)
    return out


def _require_matmul_shapes(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")


def matmul(a, b):
    """Matrix product; leading axes broadcast.

    Gradients follow dL/da = g.b^T and dL/db = a^T.g (batch axes summed
    back down where broadcast).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _require_matmul_shapes(a, b)
    out = Tensor(a.data @ b.data, tape=_tape_of(a, b))
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, _unbroadcast(g @ _swap(b.data), a.shape))
            tape._accumulate(b, _unbroadcast(_swap(a.data) @ g, b.shape))
        tape._record(out, backward)
    return out


def sorted_matmul(a, b):
    """Matrix product whose inner sums accumulate addends in value order.

    Numerically this is matmul (same gradient rules), but each output entry
    sums its k products after sorting them, so the result does not depend
    on how the contracted axis was ordered. Used where a token permutation
    must reproduce bitwise-identical numbers. Materializes the (..., m, k, n)
    product tensor; keep it to short contraction axes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _require_matmul_shapes(a, b)
    prod = a.data[..., :, :, None] * b.data[..., None, :, :]
    val = np.sort(prod, axis=-2).sum(axis=-2)
    out = Tensor(val, tape=_tape_of(a, b))
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, _unbroadcast(g @ _swap(b.data), a.shape))
            tape._accumulate(b, _unbroadcast(_swap(a.data) @ g, b.shape))
        tape._record(out, backward)
    return out


def transpose_last2(a):
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose_last2 needs a >=2-D tensor")
    out = Tensor(_swap(a.data), tape=a.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, _swap(g))
        tape._record(out, backward)
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), tape=a.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, g.reshape(a.shape))
        tape._record(out, backward)
    return out


def gelu(a):
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * phi, tape=a.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            dens = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            tape._accumulate(a, g * (phi + x * dens))
        tape._record(out, backward)
    return out


def masked_softmax_rows(a, mask):
    """Row softmax restricted to admissible entries.

    Inadmissible entries receive exactly zero weight; each row is stabilized
    by subtracting its admissible maximum; admissible weights of a row sum
    to 1. mask is a boolean array broadcastable to a's shape; a row with no
    admissible entry is an error.
    """
    a = _as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not mask.any(axis=-1).all():
        raise DegenerateMaskError("softmax row with every entry masked")
    neg_inf = np.where(mask, a.data, -np.inf)
    rowmax = neg_inf.max(axis=-1, keepdims=True)
    w = np.exp(neg_inf - rowmax)  # masked entries: exp(-inf) == 0 exactly
    denom = np.sort(w, axis=-1).sum(axis=-1, keepdims=True)
    out = Tensor(w / denom, tape=a.tape)
    tape = out.tape
    if tape is not None:
        y = out.data
        def backward(g):
            inner = (g * y).sum(axis=-1, keepdims=True)
            tape._accumulate(a, y * (g - inner))
        tape._record(out, backward)
    return out


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize each row over its last axis, then apply learned gain/bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs rows of length >= 2")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = Tensor(gain.data * xhat + bias.data, tape=_tape_of(a, gain, bias))
    tape = out.tape
    if tape is not None:
        def backward(g):
            lead = tuple(range(g.ndim - 1))
            tape._accumulate(gain, _unbroadcast((g * xhat).sum(axis=lead), gain.shape))
            tape._accumulate(bias, _unbroadcast(g.sum(axis=lead), bias.shape))
            dxhat = g * gain.data
            da = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            tape._accumulate(a, da)
        tape._record(out, backward)
    return out


def mean_over_rows(a):
    """Average over the second-to-last axis, addends in value order."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("mean_over_rows needs a >=2-D tensor")
    m = a.shape[-2]
    val = np.sort(a.data, axis=-2).sum(axis=-2) / m
    out = Tensor(val, tape=a.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            tape._accumulate(a, np.broadcast_to(np.expand_dims(g / m, -2), a.shape))
        tape._record(out, backward)
    return out


def softmax_rows(a):
    """Plain row softmax (all entries admissible)."""
    return masked_softmax_rows(a, np.ones(a.shape[-1], dtype=bool))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under row softmax.

    Gradient is (softmax - onehot) / batch.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects b x K logits, got {logits.shape}")
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise LabelError(f"expected {b} labels, got shape {labels.shape}")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must be integers in [0, {k})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -logp[np.arange(b), labels].mean()
    out = Tensor(loss, tape=logits.tape)
    tape = out.tape
    if tape is not None:
        def backward(g):
            p = np.exp(logp)
            p[np.arange(b), labels] -= 1.0
            tape._accumulate(logits, g * p / b)
        tape._record(out, backward)
    return out


class ParamSet:
    """Named parameter tensors with per-tensor Adam moment slots.

    Names are unique; iteration is always lexicographic so that update and
    serialization order is deterministic.
    """

    def __init__(self):
        self._params = {}
        self._moments = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = _as_tensor(value)
        self._params[name] = t
        self._moments[name] = (np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def watch(self, tape):
        for _, t in self.items():
            t.tape = tape

    def n_scalars(self):
        return sum(t.data.size for _, t in self.items())

    def copy(self):
        other = ParamSet()
        for name, t in self.items():
            other.add(name, t.data.copy())
        other.step_count = self.step_count
        for name in self.names():
            m, v = self._moments[name]
            other._moments[name] = (m.copy(), v.copy())
        return other

    def to_doc(self):
        return {
            "magic": PARAMS_MAGIC,
            "params": {
                name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
                for name, t in self.items()
            },
        }

    @classmethod
    def from_doc(cls, doc):
        if doc.get("magic") != PARAMS_MAGIC:
            raise ValueError(f"not a {PARAMS_MAGIC} document")
        ps = cls()
        for name in sorted(doc["params"]):
            entry = doc["params"][name]
            ps.add(name, np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]))
        return ps

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_doc(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_doc(json.load(fh))


def adam_step(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias-corrected moments.

    grads maps parameter name to a gradient array; parameters without a
    gradient are left untouched (their moments do not advance either).
    """
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = params._moments[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        params._moments[name] = (m, v)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        _check_finite(p.data)
