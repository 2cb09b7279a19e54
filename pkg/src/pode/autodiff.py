"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything trainable in this package lives on these tensors. The tape is
define-by-run: entering a ``Tape`` context makes every op record itself, and
``backward`` sweeps the node list in reverse. Outside a tape context the same
ops just compute values (inference mode).
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when op inputs have incompatible shapes."""

    def __init__(self, op, shape_a, shape_b):
        super().__init__(
            f"{op}: incompatible shapes {tuple(shape_a)} and {tuple(shape_b)}"
        )
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class NonScalarRootError(ValueError):
    """backward() requires a scalar root node."""


_tls = threading.local()


def active_tape():
    return getattr(_tls, "tape", None)


class Tape:
    """Append-only record of ops; nodes always follow their inputs.

    One tape per training step, one tape per thread. Gradients accumulate
    additively: calling backward twice on the same tape doubles every
    parameter gradient, and zeroing between steps is the caller's job.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}

    def __enter__(self):
        if getattr(_tls, "tape", None) is not None:
            raise RuntimeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = None
        return False


class Tensor:
    """Immutable-by-convention dense array of float64, row-major."""

    __slots__ = ("array", "grad", "needs_grad", "own_grad", "_backward")

    def __init__(self, array):
        arr = np.asarray(array, dtype=np.float64)
        self.array = arr
        self.grad = None
        self.needs_grad = False
        self.own_grad = False
        self._backward = None

    @property
    def shape(self):
        return self.array.shape

    @property
    def data(self):
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    def item(self):
        if self.array.size != 1:
            raise ValueError(f"item() on tensor of shape {self.array.shape}")
        return float(self.array.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.array.shape})"


class Parameter(Tensor):
    """Named leaf tensor; gradient buffer persists across backward passes."""

    __slots__ = ("name", "stage_of_birth")

    def __init__(self, array, name, stage_of_birth=1):
        super().__init__(array)
        self.name = name
        self.stage_of_birth = stage_of_birth
        self.grad = np.zeros_like(self.array)
        self.needs_grad = True
        self.own_grad = True  # persistent buffer, safe to add into in place

    def zero_grad(self):
        self.grad[...] = 0.0


def _make(arr):
    t = Tensor.__new__(Tensor)
    t.array = arr
    t.grad = None
    t.needs_grad = False
    t.own_grad = False
    t._backward = None
    return t


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x):
    """A tensor that never receives gradient."""
    return as_tensor(x)


def _record(arr, inputs, backward):
    out = _make(arr)
    tape = active_tape()
    if tape is not None:
        needs = False
        for inp in inputs:
            if inp.needs_grad:
                needs = True
                if type(inp) is Parameter:
                    tape.params[inp.name] = inp
        if needs:
            out.needs_grad = True
            out._backward = backward
            tape.nodes.append(out)
    return out


def _accum(t, g):
    # Intermediate grads are never mutated in place, so storing the incoming
    # array by reference on first touch is safe even when it aliases another
    # node's grad. Parameters own their buffer and add in place.
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
    elif t.own_grad:
        t.grad += g
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# elementwise binary ops (equal shapes, or a trailing-dims "bias" operand)


def _binary_shapes_ok(sa, sb):
    if sa == sb:
        return True
    # bias-style broadcast: smaller operand matches the trailing dims
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return True
    return False


def _reduce_to(g, shape):
    """Sum gradient g down to the given (trailing) shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if not (_binary_shapes_ok(a.shape, b.shape) or _binary_shapes_ok(b.shape, a.shape)):
        raise ShapeMismatchError("add", a.shape, b.shape)
    arr = a.array + b.array

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(g, b.shape))

    return _record(arr, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if not (_binary_shapes_ok(a.shape, b.shape) or _binary_shapes_ok(b.shape, a.shape)):
        raise ShapeMismatchError("sub", a.shape, b.shape)
    arr = a.array - b.array

    def backward(g):
        _accum(a, _reduce_to(g, a.shape))
        _accum(b, _reduce_to(-g, b.shape))

    return _record(arr, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if not (_binary_shapes_ok(a.shape, b.shape) or _binary_shapes_ok(b.shape, a.shape)):
        raise ShapeMismatchError("mul", a.shape, b.shape)
    arr = a.array * b.array

    def backward(g):
        _accum(a, _reduce_to(g * b.array, a.shape))
        _accum(b, _reduce_to(g * a.array, b.shape))

    return _record(arr, (a, b), backward)


def scale(a, c):
    """a * c for a plain python/numpy constant c (no gradient to c)."""
    a = as_tensor(a)
    c = np.float64(c) if np.isscalar(c) else np.asarray(c, dtype=np.float64)
    arr = a.array * c

    def backward(g):
        _accum(a, g * c)

    return _record(arr, (a,), backward)


def neg(a):
    return scale(a, -1.0)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    arr = a.array @ b.array

    def backward(g):
        _accum(a, g @ b.array.T)
        _accum(b, a.array.T @ g)

    return _record(arr, (a, b), backward)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis if axis >= 0 else len(ref) + axis
    for t in tensors[1:]:
        s = t.shape
        if len(s) != len(ref) or any(
            i != ax and s[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeMismatchError("concat", ref, s)
    arr = np.concatenate([t.array for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.needs_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _record(arr, tuple(tensors), backward)


def narrow(a, axis, start, stop):
    """Contiguous slice [start, stop) along one axis."""
    a = as_tensor(a)
    ax = axis if axis >= 0 else a.array.ndim + axis
    n = a.shape[ax]
    if not (0 <= start < stop <= n):
        raise ValueError(f"narrow: bad range [{start}, {stop}) for size {n}")
    idx = [slice(None)] * a.array.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    arr = a.array[idx]

    def backward(g):
        full = np.zeros_like(a.array)
        full[idx] = g
        _accum(a, full)

    return _record(arr, (a,), backward)


def slice_last(a, start, stop):
    return narrow(a, -1, start, stop)


# ---------------------------------------------------------------------------
# unary ops


def tanh(a):
    a = as_tensor(a)
    arr = np.tanh(a.array)

    def backward(g):
        _accum(a, g * (1.0 - arr * arr))

    return _record(arr, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    arr = 1.0 / (1.0 + np.exp(-a.array))

    def backward(g):
        _accum(a, g * arr * (1.0 - arr))

    return _record(arr, (a,), backward)


def relu(a):
    a = as_tensor(a)
    arr = np.maximum(a.array, 0.0)

    def backward(g):
        _accum(a, g * (a.array > 0.0))

    return _record(arr, (a,), backward)


def exp(a):
    a = as_tensor(a)
    arr = np.exp(a.array)

    def backward(g):
        _accum(a, g * arr)

    return _record(arr, (a,), backward)


def square(a):
    a = as_tensor(a)
    arr = a.array * a.array

    def backward(g):
        _accum(a, g * (2.0 * a.array))

    return _record(arr, (a,), backward)


def sum_all(a):
    a = as_tensor(a)
    arr = np.asarray(a.array.sum())

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _record(arr, (a,), backward)


def mean_all(a):
    a = as_tensor(a)
    n = a.array.size
    arr = np.asarray(a.array.sum() / n)

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _record(arr, (a,), backward)


# ---------------------------------------------------------------------------
# fused ops used in the hot training path

_ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid")


def affine(x, w, b, activation="identity"):
    """activation(x @ w + b), fused into a single tape node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.array.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatchError("affine", x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise ShapeMismatchError("affine-bias", w.shape, b.shape)
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    pre = x.array @ w.array
    pre += b.array
    if activation == "tanh":
        arr = np.tanh(pre, out=pre)
    elif activation == "relu":
        arr = np.maximum(pre, 0.0, out=pre)
    elif activation == "sigmoid":
        np.negative(pre, out=pre)
        np.exp(pre, out=pre)
        pre += 1.0
        arr = np.reciprocal(pre, out=pre)
    else:
        arr = pre

    def backward(g):
        if activation == "tanh":
            gp = arr * arr
            np.subtract(1.0, gp, out=gp)
            gp *= g
        elif activation == "relu":
            gp = g * (arr > 0.0)
        elif activation == "sigmoid":
            gp = 1.0 - arr
            gp *= arr
            gp *= g
        else:
            gp = g
        if x.needs_grad:
            _accum(x, gp @ w.array.T)
        if w.needs_grad:
            _accum(w, x.array.T @ gp)
        if b.needs_grad:
            _accum(b, gp.sum(axis=0))

    return _record(arr, (x, w, b), backward)


def blend(a, b, alpha):
    """(1 - alpha) * a + alpha * b.

    alpha may be a python float (curriculum blend weight) or a tensor of the
    same shape (gating, as in the GRU update gate).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("blend", a.shape, b.shape)
    if isinstance(alpha, Tensor):
        if alpha.shape != a.shape:
            raise ShapeMismatchError("blend-alpha", a.shape, alpha.shape)
        arr = (1.0 - alpha.array) * a.array + alpha.array * b.array

        def backward(g):
            _accum(a, g * (1.0 - alpha.array))
            _accum(b, g * alpha.array)
            if alpha.needs_grad:
                _accum(alpha, g * (b.array - a.array))

        return _record(arr, (a, b, alpha), backward)

    al = float(alpha)
    arr = (1.0 - al) * a.array + al * b.array

    def backward(g):
        _accum(a, g * (1.0 - al))
        _accum(b, g * al)

    return _record(arr, (a, b), backward)


def axpy(a, x, c):
    """a + c * x with constant c (scalar or broadcastable ndarray)."""
    a, x = as_tensor(a), as_tensor(x)
    c = np.float64(c) if np.isscalar(c) else np.asarray(c, dtype=np.float64)
    arr = a.array + c * x.array

    def backward(g):
        _accum(a, g)
        _accum(x, _reduce_to(g * c, x.shape))

    return _record(arr, (a, x), backward)


def rk4_combine(z, k1, k2, k3, k4, h):
    """z + (h/6) * (k1 + 2 k2 + 2 k3 + k4), h a constant scalar or array."""
    z, k1, k2, k3, k4 = (as_tensor(t) for t in (z, k1, k2, k3, k4))
    h6 = (np.float64(h) if np.isscalar(h) else np.asarray(h, dtype=np.float64)) / 6.0
    arr = z.array + h6 * (k1.array + 2.0 * k2.array + 2.0 * k3.array + k4.array)

    def backward(g):
        _accum(z, g)
        gh = g * h6
        _accum(k1, gh)
        _accum(k2, 2.0 * gh)
        _accum(k3, 2.0 * gh)
        _accum(k4, gh)

    return _record(arr, (z, k1, k2, k3, k4), backward)


def gru_cell(x, h, wx, wh, b):
    """One fused GRU step: h' = z*h + (1-z)*n, gate order (z, r, n).

    Packed weights: wx [in, 3H], wh [H, 3H], bias [3H]. Fusing the whole cell
    into one tape node keeps the per-step op count flat in the hidden width.
    """
    x, h, wx, wh, b = (as_tensor(t) for t in (x, h, wx, wh, b))
    H = h.shape[-1]
    if x.shape[-1] != wx.shape[0] or wx.shape[1] != 3 * H or wh.shape != (H, 3 * H):
        raise ShapeMismatchError("gru_cell", x.shape, wx.shape)
    gx = x.array @ wx.array
    gx += b.array
    gh = h.array @ wh.array
    pre = gx[:, : 2 * H] + gh[:, : 2 * H]
    np.negative(pre, out=pre)
    np.exp(pre, out=pre)
    pre += 1.0
    np.reciprocal(pre, out=pre)
    z = pre[:, :H]
    r = pre[:, H: 2 * H]
    ghn = gh[:, 2 * H:]
    n = np.tanh(gx[:, 2 * H:] + r * ghn)
    arr = z * (h.array - n)
    arr += n

    def backward(g):
        dn = (1.0 - z) * g
        dz = (h.array - n) * g
        dnp = 1.0 - n * n
        dnp *= dn  # pre-activation grad of candidate
        dr = dnp * ghn
        dzp = (1.0 - z) * z
        dzp *= dz
        drp = (1.0 - r) * r
        drp *= dr
        dgx = np.concatenate([dzp, drp, dnp], axis=1)
        dgh = np.concatenate([dzp, drp, dnp * r], axis=1)
        if x.needs_grad:
            _accum(x, dgx @ wx.array.T)
        if h.needs_grad:
            hg = dgh @ wh.array.T
            hg += z * g
            _accum(h, hg)
        if wx.needs_grad:
            _accum(wx, x.array.T @ dgx)
        if wh.needs_grad:
            _accum(wh, h.array.T @ dgh)
        if b.needs_grad:
            _accum(b, dgx.sum(axis=0))

    return _record(arr, (x, h, wx, wh, b), backward)


# ---------------------------------------------------------------------------
# dispatch + backward sweep

_OP_TABLE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "concat": lambda *ts: concat(ts, axis=-1),
    "slice": slice_last,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "sum": sum_all,
    "mean": mean_all,
    "square": square,
    "scale": scale,
    "affine": affine,
    "blend": blend,
    "axpy": axpy,
    "rk4_combine": rk4_combine,
    "gru_cell": gru_cell,
}


def forward_op(kind, *args):
    """Dispatch an op by name; used mainly by the gradient-check tests."""
    try:
        fn = _OP_TABLE[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*args)


def backward(root, tape=None, return_map=True):
    """Reverse sweep from a scalar root; returns {parameter name: Tensor}.

    Gradients add into each Parameter's persistent .grad buffer, so two
    sweeps on the same tape yield exactly twice the single-pass gradient.
    Parameters recorded on the tape but not reachable from root keep a zero
    contribution. Training loops that read .grad directly can pass
    return_map=False to skip the snapshot copies.
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() needs a tape")
    if root.array.size != 1:
        raise NonScalarRootError(f"root has shape {root.array.shape}")
    # fresh sweep for intermediates; Parameter buffers persist and accumulate
    for node in tape.nodes:
        node.grad = None
    _accum(root, np.ones_like(root.array))
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    if not return_map:
        return None
    return {name: Tensor(p.grad.copy()) for name, p in tape.params.items()}


def finite_diff_check(f, p, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f maps the parameter to a scalar (a float or a scalar Tensor) and must be
    deterministic. The analytic gradient is taken fresh, independent of any
    prior accumulation on p.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def eval_f():
        out = f(p)
        return out.item() if isinstance(out, Tensor) else float(out)

    saved_grad = p.grad
    p.grad = np.zeros_like(p.array)
    with Tape() as tape:
        out = f(p)
        if not isinstance(out, Tensor):
            raise TypeError("f must return a Tensor when a tape is active")
        backward(out, tape)
    analytic = p.grad
    p.grad = saved_grad

    flat = p.array.reshape(-1)
    max_err = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = eval_f()
        flat[i] = orig - h
        fm = eval_f()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / (abs(a) + 1e-8)
        if err > max_err:
            max_err = err
    return max_err
