"""A compact reverse-mode autodiff over numpy arrays.

Only the operations the codec and the toy language model need are provided.
A :class:`Tensor` records its parents and a closure mapping the output
gradient to one gradient per parent; :meth:`Tensor.backward` walks the tape
in reverse topological order.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> loss = (w * w).sum()
    >>> loss.backward()
    >>> w.grad
    array([[2., 2.],
           [2., 2.]])
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "embedding",
    "layer_norm",
    "softmax",
    "cross_entropy",
    "mse",
    "silu",
    "causal_conv1d",
    "fsq_ste",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.data.dtype)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other, self.data.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.data.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.data.dtype)
        x, y = self.data, other.data
        return Tensor(x * y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.data.dtype)
        x, y = self.data, other.data
        return Tensor(x / y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g / y, x.shape),
                                           _unbroadcast(-g * x / (y * y), y.shape)))

    def __matmul__(self, other):
        other = as_tensor(other, self.data.dtype)
        x, y = self.data, other.data
        if y.ndim == 2 and x.ndim > 2:
            # activations times a weight matrix: fold leading axes into one GEMM
            x2 = x.reshape(-1, x.shape[-1])

            def back(g):
                g2 = g.reshape(-1, g.shape[-1])
                return (g2 @ y.T).reshape(x.shape), x2.T @ g2

            return Tensor((x2 @ y).reshape(*x.shape[:-1], y.shape[1]), _parents=(self, other), _backward=back)

        def back(g):
            gx = g @ np.swapaxes(y, -1, -2)
            gy = np.swapaxes(x, -1, -2) @ g
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return Tensor(x @ y, _parents=(self, other), _backward=back)

    # shape ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,), _backward=lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        shape, dtype = self.shape, self.data.dtype

        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

        def back(g):
            out = np.zeros(shape, dtype=dtype)
            if basic:
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    # elementwise -------------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * (1.0 - y * y),))

    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor(np.log(x), _parents=(self,), _backward=lambda g: (g / x,))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors, axis=0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors),
                  _backward=lambda g: tuple(np.split(g, cuts, axis=axis)))


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s
    return Tensor(y, _parents=(x,), _backward=lambda g: (g * (s + y * (1.0 - s)),))


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer array ``ids`` (any shape)."""
    ids = np.asarray(ids)
    shape, dtype = table.shape, table.data.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return Tensor(table.data[ids], _parents=(table,), _backward=back)


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor(y, _parents=(x,), _backward=back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        gg = _unbroadcast(g * xhat, gd.shape)
        gb = _unbroadcast(g, bias.shape)
        gx = g * gd
        gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return Tensor(xhat * gd + bias.data, _parents=(x, gain, bias), _backward=back)


def cross_entropy(logits: Tensor, targets, reduction="sum") -> Tensor:
    """Cross-entropy of 2-D ``logits`` against integer ``targets``."""
    targets = np.asarray(targets)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(targets))
    losses = -logp[rows, targets]
    scale = 1.0 if reduction == "sum" else 1.0 / max(len(targets), 1)

    def back(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * (g * scale),)

    return Tensor(np.asarray(losses.sum() * scale, dtype=logits.data.dtype), _parents=(logits,), _backward=back)


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    diff = pred.data - target
    n = diff.size
    return Tensor(np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype), _parents=(pred,),
                  _backward=lambda g: (g * 2.0 * diff / n,))


def causal_conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Causal temporal convolution with left zero padding.

    ``x`` is ``(batch, time, c_in)``, ``weight`` is ``(kernel, c_in, c_out)``;
    tap ``j`` of the kernel looks ``kernel - 1 - j`` frames into the past.
    """
    k = weight.shape[0]
    b, t, c = x.shape
    xd = x.data
    padded = np.concatenate([np.zeros((b, k - 1, c), dtype=xd.dtype), xd], axis=1)
    # (batch, time, kernel * c_in) window stack, tap-major
    cols = np.concatenate([padded[:, j:j + t] for j in range(k)], axis=-1)
    w2 = weight.data.reshape(k * c, -1)

    def back(g):
        gw = (cols.reshape(-1, k * c).T @ g.reshape(-1, g.shape[-1])).reshape(weight.shape)
        gcols = g @ w2.T
        gpad = np.zeros_like(padded)
        for j in range(k):
            gpad[:, j:j + t] += gcols[..., j * c:(j + 1) * c]
        return gpad[:, k - 1:], gw, _unbroadcast(g, bias.shape)

    return Tensor(cols @ w2 + bias.data, _parents=(x, weight, bias), _backward=back)


def fsq_ste(x: Tensor, cfg, relaxed=False) -> Tensor:
    """FSQ bottleneck with a straight-through gradient.

    With ``relaxed=True`` rounding is skipped and the forward value is the
    normalized bounded latent ``tanh(x)``; the backward rule is identical.
    Gradient checks use the relaxed path, where the forward is smooth.
    """
    from .fsq import fsq_forward_ste

    if relaxed:
        y = np.tanh(x.data)
        d = 1.0 - y * y
    else:
        y, d = fsq_forward_ste(x.data, cfg)
    return Tensor(y, _parents=(x,), _backward=lambda g: (g * d,))
