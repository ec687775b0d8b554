"""Reverse-mode differentiation on float64 numpy arrays.

Just enough machinery for an attention encoder and its losses: dense
matmul, guarded softmax (full and top-k), elementwise maps, row surgery,
and a fused cross-entropy. Graphs are dynamic: each op links its output
tensor to its inputs, and `backward` replays the record in reverse.
No broadcasting beyond what the encoder needs, no GPU, no fusion.
"""

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer.

    Leaves built with ``trainable=True`` carry a grad buffer from the
    start and accumulate into it across backward passes until
    `zero_grad`. Intermediates allocate their buffer lazily while a
    backward sweep runs through them.
    """

    __slots__ = ("values", "grad", "trainable", "_parents", "_backward")

    def __init__(self, values, trainable=False, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.trainable = trainable
        self.grad = np.zeros_like(self.values) if trainable else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        """Copy of the values with no graph attached."""
        return Tensor(self.values.copy())

    def __repr__(self):
        tag = " trainable" if self.trainable else ""
        return f"Tensor(shape={self.values.shape}{tag})"

    # light operator sugar; the named functions below are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _tracked(t):
    """True when gradients must flow to or through this tensor."""
    return t.trainable or t._parents


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


class Graph:
    """Execution-ordered record of the ops behind a tensor.

    ``ops`` holds every non-leaf tensor reachable from the root, in
    topological order: each entry's parents are leaves or appear
    earlier. One reverse sweep therefore propagates gradients to every
    trainable leaf the root depends on; leaves it does not reach keep
    whatever is in their buffer (zeros after `zero_grad`).
    """

    def __init__(self, ops):
        self.ops = ops

    @classmethod
    def trace(cls, root):
        """Collect the op record for `root` by iterative post-order walk."""
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node._parents:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        return cls(order)


def backward(loss, graph=None):
    """Run one reverse sweep from a scalar loss.

    Populates ``grad`` on every trainable leaf the loss depends on.
    The graph defaults to a fresh trace from the loss; pass one in to
    reuse a trace.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad += 1.0
    if graph is None:
        graph = Graph.trace(loss)
    for t in reversed(graph.ops):
        if t.grad is not None and t._backward is not None:
            t._backward(t.grad)


def _binary_same_shape(a, b, name):
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{name}: shapes {a.values.shape} and {b.values.shape} differ")


def add(a, b):
    _binary_same_shape(a, b, "add")
    if not (_tracked(a) or _tracked(b)):
        return Tensor(a.values + b.values)
    out = Tensor(a.values + b.values, _parents=(a, b))

    def _bw(g):
        if _tracked(a):
            _accum(a, g)
        if _tracked(b):
            _accum(b, g)

    out._backward = _bw
    return out


def sub(a, b):
    _binary_same_shape(a, b, "sub")
    if not (_tracked(a) or _tracked(b)):
        return Tensor(a.values - b.values)
    out = Tensor(a.values - b.values, _parents=(a, b))

    def _bw(g):
        if _tracked(a):
            _accum(a, g)
        if _tracked(b):
            _accum(b, -g)

    out._backward = _bw
    return out


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    _binary_same_shape(a, b, "mul")
    if not (_tracked(a) or _tracked(b)):
        return Tensor(a.values * b.values)
    out = Tensor(a.values * b.values, _parents=(a, b))

    def _bw(g):
        if _tracked(a):
            _accum(a, g * b.values)
        if _tracked(b):
            _accum(b, g * a.values)

    out._backward = _bw
    return out


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    if not _tracked(a):
        return Tensor(a.values * c)
    out = Tensor(a.values * c, _parents=(a,))

    def _bw(g):
        _accum(a, g * c)

    out._backward = _bw
    return out


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: shapes {a.values.shape} and {b.values.shape} do not chain")
    if not (_tracked(a) or _tracked(b)):
        return Tensor(a.values @ b.values)
    out = Tensor(a.values @ b.values, _parents=(a, b))

    def _bw(g):
        if _tracked(a):
            _accum(a, g @ b.values.T)
        if _tracked(b):
            _accum(b, a.values.T @ g)

    out._backward = _bw
    return out


def transpose(a):
    if not _tracked(a):
        return Tensor(a.values.T.copy())
    out = Tensor(a.values.T.copy(), _parents=(a,))

    def _bw(g):
        _accum(a, g.T)

    out._backward = _bw
    return out


def tanh(a):
    vals = np.tanh(a.values)
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        _accum(a, g * (1.0 - vals * vals))

    out._backward = _bw
    return out


def log(a):
    """Natural log with inputs floored at LOG_FLOOR.

    Entries at or below the floor get zero gradient (the floored branch
    is constant there).
    """
    vals = np.log(np.maximum(a.values, LOG_FLOOR))
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        _accum(a, np.where(a.values > LOG_FLOOR, g / np.maximum(a.values, LOG_FLOOR), 0.0))

    out._backward = _bw
    return out


def softmax_values(x, axis):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_backward(s, g, axis):
    return s * (g - np.sum(g * s, axis=axis, keepdims=True))


def softmax(a, axis):
    """Softmax along `axis`, stabilized by max subtraction."""
    if not -a.values.ndim <= axis < a.values.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.values.shape}")
    vals = softmax_values(a.values, axis)
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        _accum(a, _softmax_backward(vals, g, axis))

    out._backward = _bw
    return out


def topk_softmax(a, k, axis):
    """Softmax over the k largest entries along `axis`; the rest get 0.

    With k equal to the axis extent this reduces to `softmax` exactly
    (identical arithmetic). Dropped entries receive zero gradient: the
    selection is treated as constant, as usual for top-k routing.
    """
    n = a.values.shape[axis]
    if not 1 <= k <= n:
        raise ShapeError(f"topk_softmax: k={k} out of range for axis extent {n}")
    if k == n:
        mask = np.ones_like(a.values, dtype=bool)
        masked = a.values
    else:
        kth = np.partition(a.values, n - k, axis=axis)
        thresh = np.take(kth, n - k, axis=axis)
        mask = a.values >= np.expand_dims(thresh, axis)
        # ties at the threshold can admit more than k entries; trim by rank
        if mask.sum(axis=axis).max() > k:
            order = np.argsort(np.argsort(-a.values, axis=axis, kind="stable"), axis=axis)
            mask = order < k
        masked = np.where(mask, a.values, -np.inf)
    vals = softmax_values(masked, axis)
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        _accum(a, _softmax_backward(vals, g, axis))

    out._backward = _bw
    return out


def tensor_sum(a):
    """Sum of all entries, as a 0-d tensor."""
    if not _tracked(a):
        return Tensor(a.values.sum())
    out = Tensor(a.values.sum(), _parents=(a,))

    def _bw(g):
        _accum(a, np.full_like(a.values, float(g)))

    out._backward = _bw
    return out


def row_mean(a):
    """Mean over rows of a 2-d tensor, kept as a 1xD row."""
    if a.values.ndim != 2:
        raise ShapeError(f"row_mean: expected 2-d, got shape {a.values.shape}")
    n = a.values.shape[0]
    vals = a.values.mean(axis=0, keepdims=True)
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        _accum(a, np.repeat(g / n, n, axis=0))

    out._backward = _bw
    return out


def concat_rows(parts):
    """Stack 2-d tensors along axis 0."""
    parts = list(parts)
    width = parts[0].values.shape[1]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[1] != width:
            raise ShapeError(
                f"concat_rows: widths differ ({p.values.shape} vs first width {width})"
            )
    vals = np.concatenate([p.values for p in parts], axis=0)
    if not any(_tracked(p) for p in parts):
        return Tensor(vals)
    out = Tensor(vals, _parents=tuple(parts))

    def _bw(g):
        offset = 0
        for p in parts:
            rows = p.values.shape[0]
            if _tracked(p):
                _accum(p, g[offset:offset + rows])
            offset += rows

    out._backward = _bw
    return out


def concat_cols(parts):
    """Stack 2-d tensors side by side along axis 1."""
    parts = list(parts)
    height = parts[0].values.shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[0] != height:
            raise ShapeError(
                f"concat_cols: heights differ ({p.values.shape} vs first height {height})"
            )
    vals = np.concatenate([p.values for p in parts], axis=1)
    if not any(_tracked(p) for p in parts):
        return Tensor(vals)
    out = Tensor(vals, _parents=tuple(parts))

    def _bw(g):
        offset = 0
        for p in parts:
            cols = p.values.shape[1]
            if _tracked(p):
                _accum(p, g[:, offset:offset + cols])
            offset += cols

    out._backward = _bw
    return out


def slice_rows(a, start, stop):
    """Rows ``start:stop`` of a 2-d tensor."""
    if a.values.ndim != 2:
        raise ShapeError(f"slice_rows: expected 2-d, got shape {a.values.shape}")
    vals = a.values[start:stop].copy()
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        _accum(a, full)

    out._backward = _bw
    return out


def gather_rows(a, indices):
    """Select rows of a 2-d tensor by index; repeats accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-d, got shape {a.values.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.values.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.values.shape[0]} rows")
    vals = a.values[idx].copy()
    if not _tracked(a):
        return Tensor(vals)
    out = Tensor(vals, _parents=(a,))

    def _bw(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        _accum(a, full)

    out._backward = _bw
    return out


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of logit rows against integer labels."""
    if logits.values.ndim != 2:
        raise ShapeError(f"cross_entropy: expected 2-d logits, got {logits.values.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.values.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows but labels shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy: label out of range for {c} classes")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    per_row = lse - shifted[np.arange(n), labels]
    loss = per_row.mean()
    if not _tracked(logits):
        return Tensor(loss)
    out = Tensor(loss, _parents=(logits,))

    def _bw(g):
        probs = softmax_values(logits.values, axis=1)
        probs[np.arange(n), labels] -= 1.0
        _accum(logits, float(g) * probs / n)

    out._backward = _bw
    return out


def finite_diff_check(f, x, eps=1e-5):
    """Max relative disagreement between backward and central differences.

    `f` maps a tensor to a scalar tensor and is called repeatedly, so it
    must be a pure function of its argument (captured parameters are
    fine; they are held fixed). Returns
    max_i |analytic_i - central_i| / (|analytic_i| + |central_i| + 1e-12).
    """
    probe = Tensor(x.values.copy(), trainable=True)
    out = f(probe)
    if out.values.size != 1:
        raise ValueError("finite_diff_check: f must be scalar-valued")
    backward(out)
    analytic = probe.grad.copy()

    flat = probe.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(probe).values)
        flat[i] = orig - eps
        lo = float(f(probe).values)
        flat[i] = orig
        central = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
        worst = max(worst, err)
    return worst
