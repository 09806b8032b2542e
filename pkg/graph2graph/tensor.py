"""
Dense float64 tensors with reverse-mode differentiation.

Operations record themselves on the active Tape when any input requires a
gradient. A tape is opened with ``with Tape() as tape:`` and is local to the
thread that opened it, so each training worker differentiates its own shard.
Outside a tape, operations only compute values.
"""

import threading

import numpy as np

from .errors import NumericalError, ShapeError, TapeError

LOG_FLOOR = 1e-12

_local = threading.local()


def _tape_stack():
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __array_priority__ = 1000

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __pow__(self, exponent):
        return pow(self, exponent)


class Tape:
    """Ordered record of the operations of one forward pass"""

    def __init__(self):
        self.records = []
        self.consumed = False
        self._produced = set()
        self._leaves = {}
        self._grads = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, output, inputs, backward_fn):
        for t in inputs:
            if t.requires_grad and t.is_leaf:
                self._leaves[id(t)] = t
        self.records.append((output, inputs, backward_fn))
        self._produced.add(id(output))

    def grad_of(self, tensor):
        """Gradient of the last backward pass with respect to a leaf, or None"""
        return self._grads.get(id(tensor))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(values, inputs, backward_fn):
    out = Tensor.__new__(Tensor)
    out.values = np.asarray(values, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out.name = None
    out.is_leaf = True
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, inputs, backward_fn)
    return out


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _make(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _make(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _make(a.values * b.values, (a, b),
                 lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or b.ndim > 2:
        raise ShapeError('matmul', a.shape, b.shape, detail='right operand must be 1-D or 2-D')
    inner = b.shape[0]
    if a.shape[-1] != inner:
        raise ShapeError('matmul', a.shape, b.shape)

    def backward(g):
        bv = b.values
        if b.ndim == 1:
            ga = np.multiply.outer(g, bv)
            gb = np.tensordot(a.values, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        ga = g @ bv.T
        if a.ndim == 1:
            gb = np.multiply.outer(a.values, g)
        else:
            lead = tuple(range(a.ndim - 1))
            gb = np.tensordot(a.values, g, axes=(lead, lead))
        return ga, gb

    return _make(a.values @ b.values, (a, b), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError('concat', ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(lo), int(hi))
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _make(np.concatenate([t.values for t in tensors], axis=ax), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError('stack', ref, t.shape)
    ax = axis % (len(ref) + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _make(np.stack([t.values for t in tensors], axis=ax), tuple(tensors), backward)


def take(x, key):
    """Basic (slice / integer) indexing"""
    x = as_tensor(x)
    try:
        values = x.values[key]
    except IndexError as e:
        raise ShapeError('slice', x.shape, detail=str(e)) from None

    def backward(g):
        full = np.zeros_like(x.values)
        full[key] += g
        return (full,)

    return _make(np.array(values, dtype=np.float64), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', x.shape, tuple(shape)) from None
    return _make(values, (x,), lambda g: (g.reshape(x.shape),))


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.values)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax_lastdim(x):
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError('softmax_lastdim', x.shape, detail='final dimension must be nonempty')
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), backward)


def log(x):
    """Natural log with the argument clamped at LOG_FLOOR"""
    x = as_tensor(x)
    safe = np.maximum(x.values, LOG_FLOOR)
    live = x.values >= LOG_FLOOR
    return _make(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


def clip(x, lo, hi):
    x = as_tensor(x)
    inside = (x.values >= lo) & (x.values <= hi)
    return _make(np.clip(x.values, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def pow(x, exponent):
    x = as_tensor(x)
    p = float(exponent)
    out = np.power(x.values, p)

    def backward(g):
        if p == 0.0:
            return (np.zeros_like(x.values),)
        return (g * p * np.power(x.values, p - 1.0),)

    return _make(out, (x,), backward)


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.values.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def zeros(shape):
    return Tensor(np.zeros(shape))


def backward(loss, tape, populate=True):
    """
    Propagate d(loss)/d(.) through the tape in reverse order.

    Leaf gradients are kept on the tape (``tape.grad_of``) and, when
    ``populate`` is true, accumulated into ``leaf.grad``.
    """
    if tape is None or not tape.records:
        raise TapeError("backward needs a nonempty tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.values.size != 1:
        raise TapeError(f"loss must be scalar-shaped, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise TapeError("loss was not produced on this tape")

    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.values)}
    for output, inputs, backward_fn in reversed(tape.records):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if not t.requires_grad or gi is None:
                continue
            if not t.is_leaf and id(t) not in tape._produced:
                raise TapeError("dangling reference: input produced on another tape")
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)

    tape._grads = {key: grads[key] for key in tape._leaves if key in grads}
    if populate:
        for key, leaf in tape._leaves.items():
            g = tape._grads.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return tape._grads


def grad_check_many(f, tensors, eps=1e-6, floor=1e-8):
    """
    Worst relative error between reverse-mode and central-difference gradients
    of the scalar f() with respect to every entry of every tensor in tensors.
    Entries whose gradients are both below ``floor`` are compared against it.
    """
    if eps <= 0:
        raise NumericalError(f"eps must be positive, got {eps}")
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = f()
        backward(loss, tape, populate=False)
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag

    worst = 0.0
    for t in tensors:
        analytic = tape.grad_of(t)
        if analytic is None:
            analytic = np.zeros_like(t.values)
        if not np.all(np.isfinite(analytic)):
            raise NumericalError(f"non-finite analytic gradient for {t!r}")
        for idx in np.ndindex(t.shape):
            orig = t.values[idx]
            t.values[idx] = orig + eps
            up = f().item()
            t.values[idx] = orig - eps
            down = f().item()
            t.values[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite function value while perturbing {t!r}{idx}")
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, rel)
    return worst


def grad_check(f, x, eps=1e-6, floor=1e-8):
    return grad_check_many(lambda: f(x), [x], eps, floor)
