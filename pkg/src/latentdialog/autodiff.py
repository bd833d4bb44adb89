"""Reverse-mode automatic differentiation over dense float64 tensors.

A `Tape` records primitive ops in execution order; `Tape.backward` replays
them in exact reverse order and returns a gradient map. With no active
tape, the same primitives run in plain evaluation mode, so frozen models
can be evaluated without recording.

Everything is float64. Non-finite values are treated as an error state:
tensor creation and (by default) every primitive output are checked.
"""

import numpy as np

from . import _kernels

# Per-op output finiteness checks. Cheap at desk scale; can be switched
# off for throughput runs.
CHECK_FINITE = True


class ShapeError(ValueError):
    """Operands do not conform for the requested primitive."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor value."""


def _as_f64(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 tensor; a node in the recorded computation graph.

    Tensors are hashed by identity, so a gradient map is a plain dict
    keyed by Tensor.
    """

    __slots__ = ("data", "name")

    def __init__(self, data, name=None, check=True):
        self.data = _as_f64(data)
        self.name = name
        if check and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(
                f"non-finite values in tensor{'' if name is None else ' ' + name}"
            )

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # Operator sugar; the functions below are the canonical API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


_TAPE_STACK = []


class Tape:
    """Ordered record of primitive ops; context manager activates it."""

    def __init__(self):
        self._ops = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss, params=()):
        """Gradients of a scalar loss wrt every recorded tensor.

        Returns {Tensor: ndarray}. Tensors in `params` that the loss does
        not depend on get an explicit zero gradient. The tape itself is
        not consumed: repeated calls yield identical results.
        """
        if loss.data.shape != ():
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        grads = {loss: np.ones((), dtype=np.float64)}
        for op in reversed(self._ops):
            out_grads = [grads.get(t) for t in op.outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [
                g if g is not None else np.zeros_like(t.data)
                for t, g in zip(op.outputs, out_grads)
            ]
            in_grads = op.backward(*out_grads)
            for t, g in zip(op.inputs, in_grads):
                if g is None:
                    continue
                acc = grads.get(t)
                grads[t] = g if acc is None else acc + g
        for p in params:
            grads.setdefault(p, np.zeros_like(p.data))
        if CHECK_FINITE:
            for t, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("non-finite gradient in backward pass")
        return grads


class _Op:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


def _record(inputs, outputs, backward):
    if _TAPE_STACK:
        _TAPE_STACK[-1]._ops.append(_Op(tuple(inputs), tuple(outputs), backward))


def _out(data):
    t = Tensor(data, check=False)
    if CHECK_FINITE and not np.all(np.isfinite(t.data)):
        raise NonFiniteError("non-finite values in op output")
    return t


def _coerce(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "add")
    out = _out(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    _record((a, b), (out,), bwd)
    return out


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "sub")
    out = _out(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    _record((a, b), (out,), bwd)
    return out


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "mul")
    out = _out(a.data * b.data)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    _record((a, b), (out,), bwd)
    return out


def neg(a):
    out = _out(-a.data)
    _record((a,), (out,), lambda g: (-g,))
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: cannot multiply {a.data.shape} by {b.data.shape}"
        )
    out = _out(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    _record((a, b), (out,), bwd)
    return out


def concat(tensors, axis=0):
    base = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != base:
            raise ShapeError("concat: rank mismatch")
    out = _out(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    _record(tuple(tensors), (out,), bwd)
    return out


def tslice(a, key):
    out = _out(a.data[key])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    _record((a,), (out,), bwd)
    return out


def reshape(a, shape):
    out = _out(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.data.shape),)

    _record((a,), (out,), bwd)
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = _out(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    _record((a,), (out,), bwd)
    return out


def sigmoid(a):
    y = _kernels.sigmoid(a.data)
    out = _out(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    _record((a,), (out,), bwd)
    return out


def relu(a):
    y = np.maximum(a.data, 0.0)
    out = _out(y)

    def bwd(g):
        return (g * (a.data > 0.0),)

    _record((a,), (out,), bwd)
    return out


def leaky_relu(a, slope=0.01):
    y = np.where(a.data > 0.0, a.data, slope * a.data)
    out = _out(y)

    def bwd(g):
        return (g * np.where(a.data > 0.0, 1.0, slope),)

    _record((a,), (out,), bwd)
    return out


def exp(a):
    y = np.exp(a.data)
    out = _out(y)

    def bwd(g):
        return (g * y,)

    _record((a,), (out,), bwd)
    return out


def log(a):
    out = _out(np.log(a.data))

    def bwd(g):
        return (g / a.data,)

    _record((a,), (out,), bwd)
    return out


def tsum(a, axis=None):
    out = _out(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    _record((a,), (out,), bwd)
    return out


def tmean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    out = _out(a.data.mean(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy(),)

    _record((a,), (out,), bwd)
    return out


def gather_rows(table, ids):
    """Row lookup (embedding): table [V, E], ids int array -> [..., E]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"gather_rows: id out of range [0, {table.data.shape[0]})"
        )
    out = _out(table.data[ids])

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.data.shape[1]))
        return (full,)

    _record((table,), (out,), bwd)
    return out


def softmax_xent(logits, targets):
    """Per-row softmax cross-entropy against integer targets -> [N]."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"softmax_xent: logits {logits.data.shape} vs targets {targets.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= logits.data.shape[1]):
        raise ShapeError("softmax_xent: target id out of vocabulary range")
    loss, probs = _kernels.softmax_xent_forward(logits.data, targets)
    out = _out(loss)

    def bwd(g):
        return (_kernels.softmax_xent_backward(probs, targets, g),)

    _record((logits,), (out,), bwd)
    return out


def squared_error(a, b):
    """Sum of elementwise squared differences -> scalar."""
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"squared_error: shapes {a.data.shape} and {b.data.shape} differ"
        )
    diff = a.data - b.data
    out = _out(np.sum(diff * diff))

    def bwd(g):
        return (2.0 * g * diff, -2.0 * g * diff)

    _record((a, b), (out,), bwd)
    return out


def bce_with_logits(logits, labels):
    """Elementwise binary cross-entropy on logits, stable for |x| <= 700.

    loss = softplus(x) - x*label = max(x,0) - x*label + log1p(exp(-|x|))
    """
    labels = np.asarray(labels, dtype=np.float64)
    x = logits.data
    if labels.shape != x.shape:
        raise ShapeError(
            f"bce_with_logits: logits {x.shape} vs labels {labels.shape}"
        )
    y = np.maximum(x, 0.0) - x * labels + np.log1p(np.exp(-np.abs(x)))
    out = _out(y)

    def bwd(g):
        return (g * (_kernels.sigmoid(x) - labels),)

    _record((logits,), (out,), bwd)
    return out


def lstm_step(x, h_prev, c_prev, w, b):
    """One fused LSTM cell step.

    x [B, I], h_prev/c_prev [B, H], w [I+H, 4H], b [4H]. Gate math runs on
    the selected kernel backend; the matmuls stay in BLAS.
    """
    bsz, inp = x.data.shape
    hid = h_prev.data.shape[1]
    if w.data.shape != (inp + hid, 4 * hid) or b.data.shape != (4 * hid,):
        raise ShapeError(
            f"lstm_step: x {x.data.shape}, h {h_prev.data.shape} need "
            f"w ({inp + hid}, {4 * hid}), got {w.data.shape}"
        )
    xh = np.concatenate([x.data, h_prev.data], axis=1)
    pre = xh @ w.data + b.data
    h_new, c_new, cache = _kernels.lstm_gates_forward(pre, c_prev.data)
    out_h, out_c = _out(h_new), _out(c_new)

    def bwd(gh, gc):
        d_pre, d_cprev = _kernels.lstm_gates_backward(gh, gc, cache)
        d_xh = d_pre @ w.data.T
        d_w = xh.T @ d_pre
        d_b = d_pre.sum(axis=0)
        return d_xh[:, :inp], d_xh[:, inp:], d_cprev, d_w, d_b

    _record((x, h_prev, c_prev, w, b), (out_h, out_c), bwd)
    return out_h, out_c


def batch_norm(x, gamma, beta, running_mean, running_var, train,
               momentum=0.1, eps=1e-5):
    """Batch normalization over the batch axis of x [B, F].

    Train mode normalizes by batch statistics and updates the running
    arrays in place (biased variance for normalization, unbiased for the
    running update). Eval mode uses the running statistics.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batch_norm: expected [batch, features], got {x.data.shape}")
    bsz = x.data.shape[0]
    if train:
        if bsz < 2:
            raise ShapeError("batch_norm: train mode needs batch >= 2")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * bsz / (bsz - 1)
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = _out(x_hat * gamma.data + beta.data)

    def bwd(g):
        d_gamma = (g * x_hat).sum(axis=0)
        d_beta = g.sum(axis=0)
        if train:
            gx = g * gamma.data
            d_x = inv_std * (
                gx
                - gx.mean(axis=0)
                - x_hat * (gx * x_hat).mean(axis=0)
            )
        else:
            d_x = g * gamma.data * inv_std
        return d_x, d_gamma, d_beta

    _record((x, gamma, beta), (out,), bwd)
    return out
