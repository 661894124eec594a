"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that records
its parent tensors and a backward closure; the implicit tape is this
graph.  Calling ``backward()`` on a scalar walks the graph once in
reverse topological order and accumulates gradients into ``.grad`` of
every reachable tensor created with ``requires_grad=True``.

Conventions:

* All data is float64.  Finite-difference gradient checks are only
  trustworthy at that precision, and the desk-scale workloads here do
  not need float32 throughput.
* Tensors are treated as immutable once created.  The one sanctioned
  exception is :class:`Adam`, which rewrites parameter buffers between
  graphs (never during a forward pass).
* The graph stays alive as long as its tensors do; ``backward()`` may be
  called again, but gradients accumulate, so callers must zero grads
  between passes (``Adam.zero_grad`` or ``t.grad = None``).
* Nothing here touches global RNG state: dropout takes an explicit
  ``numpy.random.Generator``.  Independent training runs in separate
  threads each own their tensors, graph and generator, so they do not
  interact.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DivergedError

CHECKPOINT_FORMAT_VERSION = 1


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A dense n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    # ------------------------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every tracked tensor this scalar depends on.

        Raises ``ValueError`` if the tensor is not a scalar (size 1) or is
        detached from any tracked input.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor with requires_grad")

        # Iterative postorder DFS: parents first, loss last.  Reversing it
        # guarantees every node's consumers run before the node itself.
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def backward(loss):
    """Functional alias for :meth:`Tensor.backward`."""
    loss.backward()


# ----------------------------------------------------------------------
# elementwise / binary ops
# ----------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor._result(data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return Tensor._result(data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(data, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._result(data, (a, b), bw)


def neg(a):
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, -g)

    return Tensor._result(-a.data, (a,), bw)


# ----------------------------------------------------------------------
# shape ops
# ----------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product with the standard backward rules."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul requires 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor._result(data, (a, b), bw)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {a.data.shape}")

    def bw(g):
        _accumulate(a, g.T)

    return Tensor._result(a.data.T, (a,), bw)


def reshape(a, shape):
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))

    return Tensor._result(data, (a,), bw)


def getitem(a, key):
    a = _as_tensor(a)
    data = a.data[key]

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, g)
        _accumulate(a, buf)

    return Tensor._result(data, (a,), bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return Tensor._result(data, tuple(tensors), bw)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------

def _expand_reduced(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        _accumulate(a, _expand_reduced(g, axis, keepdims, a.data.shape))

    return Tensor._result(np.asarray(data), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(data.size, 1)

    def bw(g):
        _accumulate(a, _expand_reduced(g, axis, keepdims, a.data.shape) / count)

    return Tensor._result(np.asarray(data), (a,), bw)


# ----------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------

def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * data)

    return Tensor._result(data, (a,), bw)


def log(a):
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, g / a.data)

    return Tensor._result(np.log(a.data), (a,), bw)


def sqrt(a):
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / data)

    return Tensor._result(data, (a,), bw)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - data * data))

    return Tensor._result(data, (a,), bw)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    # exp evaluated on the non-positive branch only, so no overflow
    pos = x >= 0
    data = np.empty_like(x)
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accumulate(a, g * data * (1.0 - data))

    return Tensor._result(data, (a,), bw)


def arccos(a):
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, -g / np.sqrt(1.0 - a.data * a.data))

    return Tensor._result(np.arccos(a.data), (a,), bw)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient is zero outside the open interval."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    passthrough = (a.data > lo) & (a.data < hi)

    def bw(g):
        _accumulate(a, g * passthrough)

    return Tensor._result(data, (a,), bw)


def leaky_relu(a, negative_slope=1e-3):
    """x for x >= 0, negative_slope * x otherwise."""
    a = _as_tensor(a)
    factor = np.where(a.data >= 0, 1.0, negative_slope)

    def bw(g):
        _accumulate(a, g * factor)

    return Tensor._result(a.data * factor, (a,), bw)


def softmax(a, axis=-1):
    """Probability distribution along ``axis``, stabilised by max-subtraction.

    Rows containing -inf entries are supported (they get zero mass) as
    long as at least one entry per row is finite.
    """
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ValueError("softmax along an empty axis")
    shift = a.data.max(axis=axis, keepdims=True)  # constant w.r.t. gradients
    e = exp(sub(a, Tensor(shift)))
    return div(e, tsum(e, axis=axis, keepdims=True))


def layer_norm(a, gain, bias, eps=1e-5):
    """Zero-mean/unit-variance normalisation over the last axis, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    mu = tmean(a, axis=-1, keepdims=True)
    centred = sub(a, mu)
    var = tmean(mul(centred, centred), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(centred, inv), gain), bias)


def dropout(a, p, training, rng=None):
    """Zero elements with probability ``p`` and rescale survivors by 1/(1-p).

    Identity (the same tensor object) when not training or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    a = _as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout requires an explicit rng")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(mask))


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

class Adam:
    """Bias-corrected ADAM over a named parameter dict.

    Rewrites ``param.data`` in place between graphs; the step counter and
    per-parameter moment buffers round-trip through ``state_dict``.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergedError(f"non-finite gradient for parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        for name in self.params:
            out[f"m.{name}"] = self._m[name].copy()
            out[f"v.{name}"] = self._v[name].copy()
        return out

    def load_state_dict(self, state):
        self.step_count = int(state["step"][0])
        for name in self.params:
            self._m[name] = state[f"m.{name}"].copy()
            self._v[name] = state[f"v.{name}"].copy()


# ----------------------------------------------------------------------
# flat array checkpoint files
# ----------------------------------------------------------------------

_RESERVED_KEYS = ("__format_version__", "__meta__")


def save_arrays(path, arrays, meta=None):
    """Write a key -> array map plus a JSON meta block, with a version header."""
    for key in arrays:
        if key in _RESERVED_KEYS:
            raise ValueError(f"array key '{key}' is reserved")
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__format_version__"] = np.array([CHECKPOINT_FORMAT_VERSION])
    payload["__meta__"] = np.array(json.dumps(meta or {}))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path):
    """Inverse of :func:`save_arrays`; returns ``(arrays, meta)``."""
    with np.load(path, allow_pickle=False) as npz:
        version = int(npz["__format_version__"][0])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {version} "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        meta = json.loads(str(npz["__meta__"]))
        arrays = {k: npz[k] for k in npz.files if k not in _RESERVED_KEYS}
    return arrays, meta
