"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything the training pipeline differentiates goes through the small op
set in this module: matrix products, broadcasted elementwise arithmetic,
reductions, slicing/concatenation, stable softmax and layer norm, ReLU,
and the 1-D convolutions used by the classifier head. A fresh graph is
built on every forward pass; ``Tensor.backward`` walks it in reverse
topological order exactly once. ``finite_difference_check`` verifies any
composite loss against central differences.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError

__all__ = [
    "Tensor",
    "as_tensor",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "relu",
    "clip_min",
    "softmax_rows",
    "layer_norm",
    "conv1d_bank",
    "conv1d_rowwise",
    "cosine_similarity",
    "backward",
    "finite_difference_check",
]


class Tensor:
    """A float64 array plus an optional position in a backward graph.

    Tensors are immutable values from the graph's point of view: ops return
    new tensors and record closures that accumulate into ``grad`` on the
    way back. Leaf tensors created with ``requires_grad=True`` are the
    trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        The loss must be scalar; visits each node exactly once in reverse
        topological order, so repeated subexpressions are handled by plain
        gradient accumulation.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            # constant subgraphs (no trainable ancestors) never receive grad
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        return self

    # -- operator sugar -------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return _reduce(self, axis, np.sum, lambda g, n: g)

    def mean(self, axis=None):
        return _reduce(self, axis, np.mean, lambda g, n: g / n)

    def exp(self):
        out_data = np.exp(self.data)
        out = Tensor(out_data, _parents=(self,))
        out._backward_fn = _unary_backward(self, lambda g: g * out_data)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        out._backward_fn = _unary_backward(self, lambda g: g / self.data)
        return out

    def sqrt(self):
        out_data = np.sqrt(self.data)
        out = Tensor(out_data, _parents=(self,))
        out._backward_fn = _unary_backward(self, lambda g: g * 0.5 / out_data)
        return out

    def pow(self, exponent):
        e = float(exponent)
        out = Tensor(self.data**e, _parents=(self,))
        out._backward_fn = _unary_backward(
            self, lambda g: g * e * self.data ** (e - 1.0)
        )
        return out

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root):
    """Iterative DFS topological order (graphs can exceed recursion depth)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(node, grad):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += grad


def _unary_backward(x, pull):
    def fn(grad):
        _accumulate(x, pull(grad))

    return fn


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic (numpy broadcasting rules) ------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def fn(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(grad, b.data.shape))

    out._backward_fn = fn
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def fn(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(-grad, b.data.shape))

    out._backward_fn = fn
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def fn(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.data.shape))

    out._backward_fn = fn
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(a, b))

    def fn(grad):
        _accumulate(a, _unbroadcast(grad / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-grad * a.data / (b.data**2), b.data.shape))

    out._backward_fn = fn
    return out


# -- linear algebra -----------------------------------------------------


def matmul(a, b):
    """2-D matrix product with gradients for both operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul requires (m,k)x(k,n) operands, got {a.shape} and {b.shape}"
        )
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def fn(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    out._backward_fn = fn
    return out


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    out = Tensor(a.data.T, _parents=(a,))
    out._backward_fn = _unary_backward(a, lambda g: g.T)
    return out


def reshape(a, shape):
    a = as_tensor(a)
    old_shape = a.data.shape
    out = Tensor(a.data.reshape(shape), _parents=(a,))
    out._backward_fn = _unary_backward(a, lambda g: g.reshape(old_shape))
    return out


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def fn(grad):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(lo, hi)
            _accumulate(part, grad[tuple(index)])

    out._backward_fn = fn
    return out


def slice_axis(a, axis, start, stop):
    """Contiguous slice along one axis; backward scatters into zeros."""
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index], _parents=(a,))

    def fn(grad):
        full = np.zeros_like(a.data)
        full[index] = grad
        _accumulate(a, full)

    out._backward_fn = fn
    return out


def _reduce(a, axis, np_fn, scale_grad):
    a = as_tensor(a)
    out = Tensor(np_fn(a.data, axis=axis), _parents=(a,))
    if axis is None:
        count = a.data.size

        def fn(grad):
            _accumulate(a, np.broadcast_to(scale_grad(grad, count), a.data.shape).copy())

    else:
        count = a.data.shape[axis]

        def fn(grad):
            g = np.expand_dims(scale_grad(grad, count), axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward_fn = fn
    return out


# -- nonlinearities and normalization -----------------------------------


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), _parents=(a,))
    out._backward_fn = _unary_backward(a, lambda g: g * mask)
    return out


def clip_min(a, floor):
    """Elementwise max(a, floor); gradient is zero where the floor binds."""
    a = as_tensor(a)
    mask = a.data > floor
    out = Tensor(np.where(mask, a.data, floor), _parents=(a,))
    out._backward_fn = _unary_backward(a, lambda g: g * mask)
    return out


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction.

    The subtracted row maximum is treated as a constant; softmax is
    invariant to per-row shifts, so the gradient is unaffected.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    row_max = Tensor(x.data.max(axis=1, keepdims=True))
    e = (x - row_max).exp()
    return e / e.sum(axis=1).reshape((-1, 1))


def layer_norm(x, gain, bias, eps=1e-5):
    """Per-row standardization of a 2-D tensor followed by an affine map."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim != 2:
        raise DimensionError(f"layer_norm expects a 2-D tensor, got shape {x.shape}")
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    centered = x - x.mean(axis=1).reshape((-1, 1))
    var = centered.pow(2.0).mean(axis=1).reshape((-1, 1))
    normed = centered / (var + eps).sqrt()
    return normed * gain.reshape((1, -1)) + bias.reshape((1, -1))


# -- 1-D convolutions for the classifier head ---------------------------


def _same_pad(width):
    left = (width - 1) // 2
    return left, width - 1 - left


def conv1d_bank(x, kernels):
    """Correlate every row of ``x`` (R,T) with every kernel (F,W) -> (F,R,T).

    Zero 'same' padding keeps the time length; works for any T relative
    to W.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 2 or kernels.ndim != 2:
        raise DimensionError(
            f"conv1d_bank expects 2-D signal and kernels, got {x.shape}, {kernels.shape}"
        )
    rows, T = x.data.shape
    F, W = kernels.data.shape
    left, right = _same_pad(W)
    xp = np.pad(x.data, ((0, 0), (left, right)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, W, axis=1)  # (R,T,W)
    out = Tensor(np.einsum("rtw,fw->frt", windows, kernels.data), _parents=(x, kernels))

    def fn(grad):  # grad: (F,R,T)
        _accumulate(kernels, np.einsum("frt,rtw->fw", grad, windows))
        gxp = np.zeros_like(xp)
        for j in range(W):
            coeff = np.tensordot(kernels.data[:, j], grad, axes=(0, 0))  # (R,T)
            gxp[:, j : j + T] += coeff
        _accumulate(x, gxp[:, left : left + T])

    out._backward_fn = fn
    return out


def conv1d_rowwise(x, kernels):
    """Correlate row r of ``x`` (R,T) with kernel row r (R,W) -> (R,T)."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 2 or kernels.ndim != 2 or x.shape[0] != kernels.shape[0]:
        raise DimensionError(
            f"conv1d_rowwise needs matching row counts, got {x.shape}, {kernels.shape}"
        )
    rows, T = x.data.shape
    W = kernels.data.shape[1]
    left, right = _same_pad(W)
    xp = np.pad(x.data, ((0, 0), (left, right)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, W, axis=1)  # (R,T,W)
    out = Tensor(np.einsum("rtw,rw->rt", windows, kernels.data), _parents=(x, kernels))

    def fn(grad):  # grad: (R,T)
        _accumulate(kernels, np.einsum("rt,rtw->rw", grad, windows))
        gxp = np.zeros_like(xp)
        for j in range(W):
            gxp[:, j : j + T] += grad * kernels.data[:, j : j + 1]
        _accumulate(x, gxp[:, left : left + T])

    out._backward_fn = fn
    return out


def cosine_similarity(u, v):
    """Cosine of the angle between two 1-D tensors; differentiable."""
    u, v = as_tensor(u), as_tensor(v)
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity is undefined for zero-norm input")
    num = (u * v).sum()
    return num / ((u.pow(2.0).sum().sqrt()) * (v.pow(2.0).sum().sqrt()))


def backward(loss):
    """Functional alias for ``loss.backward()``; returns the loss tensor."""
    return as_tensor(loss).backward()


# -- gradient verification ----------------------------------------------


def zero_grads(params):
    for p in params:
        p.grad = None


def finite_difference_check(build_loss, params, eps=1e-5):
    """Compare backward gradients with central finite differences.

    ``build_loss`` must rebuild the forward graph from scratch using the
    (possibly perturbed) leaf ``params``. Returns the worst per-parameter
    relative error  ||g_ad - g_fd|| / max(||g_fd||, 1e-12).
    """
    params = list(params)
    zero_grads(params)
    build_loss().backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params]

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        g_fd = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi = build_loss().item()
            flat[i] = saved - eps
            lo = build_loss().item()
            flat[i] = saved
            g_fd[i] = (hi - lo) / (2.0 * eps)
        g_fd = g_fd.reshape(p.data.shape)
        denom = max(np.linalg.norm(g_fd), 1e-12)
        err = np.linalg.norm(g_ad - g_fd) / denom
        worst = max(worst, err)
    zero_grads(params)
    return worst
