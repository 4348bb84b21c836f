"""Small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are built define-by-run: calling operations on :class:`Tensor`
objects records a tape whenever at least one input requires a gradient.
Operations on constants are plain numpy calls with no bookkeeping, which
keeps frozen-backbone computations cheap.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NonDeterministicError(RuntimeError):
    pass


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _apply(op: str, fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # numpy raises ValueError for shapes that do not broadcast
    try:
        return fn(a, b)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


class Tensor:
    """A float64 array node in a compute graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    # graph plumbing

    @staticmethod
    def _make(data, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data if type(data) is np.ndarray and data.dtype == np.float64 else _as_array(data)
        out.grad = None
        out.name = None
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = parents
                out._backward = backward
                return out
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            _apply("add", np.add, self.data, other.data),
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            _apply("sub", np.subtract, self.data, other.data),
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            _apply("mul", np.multiply, a, b),
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        out = _apply("div", np.true_divide, a, b)
        return Tensor._make(
            out,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        p = float(exponent)
        return Tensor._make(a**p, (self,), lambda g: (g * p * a ** (p - 1.0),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), back)

    # shape ops

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", old, shape) from None
        return Tensor._make(out, (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def swapaxes(self, a: int, b: int):
        return Tensor._make(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    # reductions

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # unary math

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,))

    def sigmoid(self):
        out = _sigmoid(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def clip(self, lo: float, hi: float):
        a = self.data
        inside = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def back(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return _unbroadcast(g[..., None] * bd, ad.shape), _unbroadcast(
                np.einsum("...i,...ij->...j", g, ad), bd.shape
            )
        if ad.ndim == 1:
            return _unbroadcast(np.einsum("...j,...ij->...i", g, bd), ad.shape), _unbroadcast(
                ad[:, None] * g[..., None, :], bd.shape
            )
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(out, (a, b), back)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), back)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    n = x.shape[-1]
    mu = x.data.sum(axis=-1, keepdims=True) / n
    xc = x.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.sum(axis=-1, keepdims=True) / n
        gx = inv * (g - gm - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n)
        return (gx,)

    out = Tensor._make(xhat, (x,), back)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def quick_gelu(x) -> Tensor:
    x = as_tensor(x)
    return x * (x * 1.702).sigmoid()


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(out, tuple(tensors), back)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in tensors]) from None

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), back)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar loss; returns a gradient per entry of ``wrt``.

    Entries the loss does not depend on get zero-filled gradients.
    """
    if loss.data.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None) if node._parents else grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)
    out = {}
    for name, t in wrt.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
    return out


class ParamSet:
    """Named float64 arrays with a per-parameter trainable flag."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None, trainable: Iterable[str] = ()):
        self._arrays: dict[str, np.ndarray] = {}
        self._trainable: set[str] = set()
        for name, arr in (arrays or {}).items():
            self.add(name, arr)
        for name in trainable:
            self.set_trainable(name)

    def add(self, name: str, array, trainable: bool = False) -> None:
        if name in self._arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        self._arrays[name] = _as_array(array).copy()
        if trainable:
            self._trainable.add(name)

    def set_trainable(self, name: str, flag: bool = True) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        if flag:
            self._trainable.add(name)
        else:
            self._trainable.discard(name)

    def is_trainable(self, name: str) -> bool:
        return name in self._trainable

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._arrays[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __setitem__(self, name: str, value) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        value = _as_array(value)
        if value.shape != self._arrays[name].shape:
            raise ShapeError(f"assign {name}", self._arrays[name].shape, value.shape)
        self._arrays[name] = value.copy()

    def __contains__(self, name) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(sorted(self._arrays))

    def __len__(self):
        return len(self._arrays)

    def names(self) -> list[str]:
        return sorted(self._arrays)

    def trainable_names(self) -> list[str]:
        return sorted(self._trainable)

    def frozen_names(self) -> list[str]:
        return sorted(set(self._arrays) - self._trainable)

    def items(self):
        return ((k, self._arrays[k]) for k in self.names())

    def copy(self) -> "ParamSet":
        return ParamSet(self._arrays, self._trainable)

    def tensors(self, track: bool = True) -> dict[str, Tensor]:
        """Wrap every array; trainables require grad when ``track`` is set."""
        return {
            k: Tensor(v, requires_grad=track and k in self._trainable, name=k)
            for k, v in self._arrays.items()
        }


def value_and_grad(fn: Callable[[dict], Tensor], params: ParamSet) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``fn`` on tensors of ``params`` and return (loss, grads of trainables)."""
    ts = params.tensors(track=True)
    loss = fn(ts)
    grads = backward(loss, {k: ts[k] for k in params.trainable_names()})
    return float(loss.data), grads


def finite_diff_check(
    fn: Callable[[dict], Tensor], params: ParamSet, epsilon: float = 1e-5
) -> dict[str, float]:
    """Compare analytic gradients to central differences, per trainable parameter.

    Returns the maximum elementwise relative error
    ``|a - b| / max(|a|, |b|, 1e-8)`` for each trainable parameter.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")

    def evaluate(arrays) -> float:
        return float(fn({k: Tensor(v, name=k) for k, v in arrays.items()}).data)

    base = dict(params.items())
    f0 = evaluate(base)
    if evaluate(base) != f0:
        raise NonDeterministicError("loss function returned different values on identical inputs")

    _, analytic = value_and_grad(fn, params)
    errors = {}
    for name in params.trainable_names():
        arr = base[name]
        numeric = np.zeros_like(arr)
        flat = numeric.reshape(-1)
        for i in range(arr.size):
            probe = arr.copy().reshape(-1)
            probe[i] += epsilon
            up = evaluate({**base, name: probe.reshape(arr.shape)})
            probe[i] -= 2 * epsilon
            down = evaluate({**base, name: probe.reshape(arr.shape)})
            flat[i] = (up - down) / (2 * epsilon)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if arr.size else 0.0
    return errors
