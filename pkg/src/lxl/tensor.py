"""Minimal dense-tensor substrate with reverse-mode automatic differentiation.

Everything is float32 and row-major numpy underneath.  A ``Tensor`` records the
tape node that produced it, so any scalar (or tensor, given an output gradient)
can be backpropagated to the named parameters of a ``Graph``.  No GPU, no
fusion; the goal is a small, deterministic engine that is easy to verify
against finite differences.
"""

from __future__ import annotations

import contextlib

import numpy as np

# float32 is the working precision; gradient-check oracles may temporarily
# switch to float64 so finite differences are not dominated by rounding noise.
DTYPE = np.float32


@contextlib.contextmanager
def use_dtype(dtype):
    global DTYPE
    previous = DTYPE
    DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = previous


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for an operation."""

    def __init__(self, op, expected, actual, node=None):
        self.op = op
        self.expected = expected
        self.actual = actual
        self.node = node
        where = f" at node '{node}'" if node else ""
        super().__init__(
            f"{op}{where}: expected shape {expected}, got {actual}"
        )


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces (or receives) NaN/Inf values."""


class GraphStateError(RuntimeError):
    """Raised when backward is requested before forward has run."""


# Finiteness is part of the Tensor contract; the check is cheap at the tensor
# sizes this engine targets, so it stays on by default.
CHECK_FINITE = True


def _check_finite(data, op):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.astype(DTYPE, copy=False)


class Tensor:
    """A float32 ndarray plus the tape node that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        _check_finite(self.data, op)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # ------------------------------------------------------------------
    # autodiff driver

    def backward(self, output_grad=None):
        """Reverse-mode sweep from this tensor, filling ``.grad`` on the tape."""
        if output_grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", "scalar output", self.data.shape)
            output_grad = np.ones_like(self.data)
        output_grad = np.asarray(output_grad, dtype=DTYPE)
        if output_grad.shape != self.data.shape:
            raise ShapeError("backward", self.data.shape, output_grad.shape)

        order = []
        state = {}  # 0/absent: unvisited, 1: expanding, 2: done
        stack = [self]
        while stack:
            node = stack[-1]
            st = state.get(id(node), 0)
            if st == 0:
                state[id(node)] = 1
                for p in node.parents:
                    if p.requires_grad and state.get(id(p), 0) == 0:
                        stack.append(p)
            else:
                stack.pop()
                if st == 1:
                    state[id(node)] = 2
                    order.append(node)

        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = output_grad
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # elementwise arithmetic (broadcasting, with unbroadcast on backward)

    def _binary(self, other, fwd, bwd_self, bwd_other, op):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, DTYPE))
        try:
            data = fwd(self.data, other.data)
        except ValueError as exc:
            raise ShapeError(op, self.data.shape, other.data.shape) from exc
        out = Tensor(data, parents=(self, other), op=op)

        def backward(grad):
            if self.requires_grad:
                self.grad += _unbroadcast(bwd_self(grad, self.data, other.data), self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(bwd_other(grad, self.data, other.data), other.data.shape)

        out._backward = backward
        return out

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b: g, lambda g, a, b: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g, "sub")

    def __rsub__(self, other):
        return Tensor(np.asarray(other, DTYPE)) - self

    def __mul__(self, other):
        return self._binary(other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, np.divide,
            lambda g, a, b: g / b,
            lambda g, a, b: -g * a / (b * b),
            "div",
        )

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,), op="neg")

        def backward(grad):
            if self.requires_grad:
                self.grad += -grad

        out._backward = backward
        return out

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent, parents=(self,), op="pow")

        def backward(grad):
            if self.requires_grad:
                self.grad += grad * exponent * self.data ** (exponent - 1)

        out._backward = backward
        return out

    # ------------------------------------------------------------------
    # unary math

    def _unary(self, fwd_data, bwd, op):
        out = Tensor(fwd_data, parents=(self,), op=op)

        def backward(grad):
            if self.requires_grad:
                self.grad += bwd(grad, self.data, out.data)

        out._backward = backward
        return out

    def exp(self):
        return self._unary(np.exp(self.data), lambda g, x, y: g * y, "exp")

    def log(self):
        return self._unary(np.log(self.data), lambda g, x, y: g / x, "log")

    def abs(self):
        return self._unary(np.abs(self.data), lambda g, x, y: g * np.sign(x), "abs")

    def relu(self):
        return self._unary(np.maximum(self.data, 0.0), lambda g, x, y: g * (x > 0), "relu")

    def leaky_relu(self, slope=0.2):
        return self._unary(
            np.where(self.data > 0, self.data, slope * self.data),
            lambda g, x, y: g * np.where(x > 0, 1.0, slope).astype(x.dtype),
            "leaky_relu",
        )

    def sigmoid(self):
        # numerically stable split form
        x = self.data
        pos = x >= 0
        data = np.empty_like(x)
        data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        data[~pos] = ex / (1.0 + ex)
        return self._unary(data, lambda g, x_, y: g * y * (1.0 - y), "sigmoid")

    def tanh(self):
        return self._unary(np.tanh(self.data), lambda g, x, y: g * (1.0 - y * y), "tanh")

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out = Tensor(self.data.reshape(shape), parents=(self,), op="reshape")

        def backward(grad):
            if self.requires_grad:
                self.grad += grad.reshape(old)

        out._backward = backward
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), op="sum")
        shape = self.data.shape

        def backward(grad):
            if not self.requires_grad:
                return
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, shape).astype(self.data.dtype)

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, DTYPE))
        if self.data.shape[-1] != other.data.shape[0]:
            raise ShapeError("matmul", f"inner dim {self.data.shape[-1]}", other.data.shape)
        out = Tensor(self.data @ other.data, parents=(self, other), op="matmul")

        def backward(grad):
            if self.requires_grad:
                self.grad += grad @ other.data.T
            if other.requires_grad:
                other.grad += self.data.T @ grad

        out._backward = backward
        return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors), op="concat")
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        pieces = np.split(grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t.grad += g

    out._backward = backward
    return out


def expand_dims(t, axis):
    return t.reshape(tuple(np.expand_dims(t.data, axis).shape))


# ----------------------------------------------------------------------
# convolution and resampling (NCHW layout)

def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    s = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, ho, wo),
        (s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    return np.ascontiguousarray(cols).reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(dcols, xshape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = xshape
    hp, wp = h + 2 * pad, w + 2 * pad
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dx = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        dx = dx[:, :, pad:pad + h, pad:pad + w]
    return dx


def conv2d(x, kernels, stride=1, padding=0):
    """Cross-correlation of an NCHW batch with an (F, C, kh, kw) kernel stack.

    Output extent per spatial axis is floor((in + 2*pad - k)/stride) + 1.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if not isinstance(kernels, Tensor):
        kernels = Tensor(kernels)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv2d", "4-d input and kernels", (x.data.shape, kernels.data.shape))
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernels.data.shape
    if ck != c:
        raise ShapeError("conv2d", f"kernel channels {c}", ck)
    if (h + 2 * padding - kh) < 0 or (w + 2 * padding - kw) < 0:
        raise ShapeError("conv2d", "output extent >= 1", (h, w))

    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernels.data.reshape(f, c * kh * kw)
    out_data = np.matmul(wmat, cols).reshape(n, f, ho, wo)
    out = Tensor(out_data, parents=(x, kernels), op="conv2d")

    def backward(grad):
        gmat = grad.reshape(n, f, ho * wo)
        if kernels.requires_grad:
            dw = np.einsum("nfo,nko->fk", gmat, cols, optimize=True)
            kernels.grad += dw.reshape(f, c, kh, kw).astype(kernels.data.dtype)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)
            x.grad += _col2im(dcols, x.data.shape, kh, kw, stride, padding, ho, wo)

    out._backward = backward
    return out


def avg_pool2(x):
    """2x2 average pooling, stride 2, NCHW; extents must be even."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError("avg_pool2", "even spatial extents", (h, w))
    data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(data, parents=(x,), op="avg_pool2")

    def backward(grad):
        if x.requires_grad:
            g = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) * 0.25
            x.grad += g.astype(x.data.dtype)

    out._backward = backward
    return out


def upsample_nearest2(x):
    """Nearest-neighbor 2x upsampling, NCHW."""
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(data, parents=(x,), op="upsample2")
    n, c, h, w = x.data.shape

    def backward(grad):
        if x.requires_grad:
            x.grad += grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)).astype(x.data.dtype)

    out._backward = backward
    return out


def binary_cross_entropy(pred, target, eps=1e-6):
    """Mean BCE between predictions in (0,1) and a constant target array."""
    target = np.asarray(target, DTYPE)
    t = Tensor(target)
    one = Tensor(1.0)
    p = pred * (1.0 - 2 * eps) + eps  # keep logs finite at saturation
    loss = -(t * p.log() + (one - t) * (one - p).log())
    return loss.mean()


# ----------------------------------------------------------------------
# graph container

class Graph:
    """Named trainable parameters plus a forward function over them.

    ``fn(params, inputs) -> outputs`` builds the tape on every call
    (define-by-run); the recorded operation nodes are exposed on
    ``graph.nodes`` after a forward pass.
    """

    def __init__(self, params, fn, input_shapes=None):
        self.params = dict(params)
        self.fn = fn
        self.input_shapes = input_shapes or {}
        self.nodes = []
        self._outputs = None

    def parameter_names(self):
        return list(self.params)


def forward(graph, inputs):
    """Run the graph on named inputs, caching the tape for backward."""
    wrapped = {}
    for name, value in inputs.items():
        t = value if isinstance(value, Tensor) else Tensor(value)
        expected = graph.input_shapes.get(name)
        if expected is not None and tuple(t.data.shape) != tuple(expected):
            raise ShapeError("forward", tuple(expected), tuple(t.data.shape), node=name)
        wrapped[name] = t
    outputs = graph.fn(graph.params, wrapped)
    graph._outputs = outputs
    graph.nodes = _collect_nodes(outputs)
    return outputs


def _collect_nodes(outputs):
    nodes = []
    seen = set()
    stack = list(outputs.values())
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append((t.op, t.data.shape))
        stack.extend(t.parents)
    return nodes[::-1]


def backward(graph, output_grads):
    """Backpropagate named output gradients; returns per-parameter gradients.

    ``output_grads`` maps output names to gradient arrays (a single-output
    graph may pass a bare array under that output's name only via the dict).
    """
    if graph._outputs is None:
        raise GraphStateError("backward called before forward")
    # Combine all seeded outputs into one scalar so a single reverse sweep
    # accumulates every contribution (per-output sweeps would re-zero grads
    # on shared subgraphs).
    total = None
    for name, grad in output_grads.items():
        out = graph._outputs[name]
        seeded = (out * np.asarray(grad, DTYPE)).sum()
        total = seeded if total is None else total + seeded
    total.backward()
    grads = {}
    for name, p in graph.params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads


# ----------------------------------------------------------------------
# optimizer

def adam_init(params):
    """Fresh Adam state for a named parameter dict."""
    return {
        "t": 0,
        "m": {k: np.zeros_like(p.data) for k, p in params.items()},
        "v": {k: np.zeros_like(p.data) for k, p in params.items()},
    }


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update; returns the advanced state."""
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", p.data.shape, g.shape, node=name)
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
    return state
