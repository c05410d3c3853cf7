"""Dense float64 tensors with reverse-mode automatic differentiation.

Small, deterministic engine used by every density model in this package.
Values are numpy arrays; the graph is taped per forward pass and consumed
by :func:`backward`. Only first-order gradients are supported.

Elementwise ops broadcast like numpy; reductions take an optional axis.
`ln` and `exp` check their domain so finite inputs never produce NaN/Inf.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Gradients",
    "backward",
    "finite_diff_check",
    "finite_diff_check_params",
    "concat",
    "logsumexp",
    "softmax",
]

# exp overflows float64 just above this
_EXP_MAX = 709.0


class Tensor:
    """A float64 array plus an optional tape node.

    Tensors are immutable after creation (the ``data`` buffer must not be
    written). Ops on tensors with ``requires_grad`` record a vector-Jacobian
    closure; everything else is plain numpy underneath.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _from_op(data, parents, vjp):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out = Tensor._from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other)
        return Tensor._from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        return Tensor._from_op(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        return Tensor._from_op(
            self.data / other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    # -- elementwise functions -----------------------------------------------

    def exp(self) -> "Tensor":
        if np.any(self.data > _EXP_MAX):
            raise ValueError("exp: input exceeds float64 range (max allowed ~709)")
        e = np.exp(self.data)
        return Tensor._from_op(e, (self,), lambda g: (g * e,))

    def ln(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise ValueError("ln: input must be strictly positive")
        return Tensor._from_op(np.log(self.data), (self,), lambda g: (g / self.data,))

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return Tensor._from_op(t, (self,), lambda g: (g * (1.0 - t * t),))

    def relu(self) -> "Tensor":
        # derivative at exactly 0 is defined as 0
        mask = self.data > 0.0
        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def square(self) -> "Tensor":
        return Tensor._from_op(self.data * self.data, (self,), lambda g: (g * (2.0 * self.data),))

    # -- reductions ------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = np.sum(self.data, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            ge = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(ge, self.shape).copy(),)

        return Tensor._from_op(out, (self,), vjp)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        # gradient routes to the first maximum along the reduced axis
        if axis is None:
            out = np.max(self.data)
            idx = np.unravel_index(np.argmax(self.data), self.shape)

            def vjp(g):
                buf = np.zeros(self.shape)
                buf[idx] = np.asarray(g).reshape(())
                return (buf,)

            return Tensor._from_op(out, (self,), vjp)

        out = np.max(self.data, axis=axis, keepdims=keepdims)
        amax = np.expand_dims(np.argmax(self.data, axis=axis), axis)

        def vjp_axis(g):
            ge = g if keepdims else np.expand_dims(g, axis)
            buf = np.zeros(self.shape)
            np.put_along_axis(buf, amax, ge, axis=axis)
            return (buf,)

        return Tensor._from_op(out, (self,), vjp_axis)

    # -- linear algebra / shape ------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._lift(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError("matmul is defined for 2-D tensors only")
        return Tensor._from_op(
            self.data @ other.data,
            (self, other),
            lambda g: (g @ other.data.T, self.data.T @ g),
        )

    __matmul__ = matmul

    def transpose(self, axes=None) -> "Tensor":
        inv = None if axes is None else np.argsort(axes)
        return Tensor._from_op(
            np.transpose(self.data, axes),
            (self,),
            lambda g: (np.transpose(g, inv),),
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._from_op(
            self.data.reshape(shape),
            (self,),
            lambda g: (g.reshape(self.shape),),
        )

    def __getitem__(self, key) -> "Tensor":
        _check_basic_index(key)

        def vjp(g):
            buf = np.zeros(self.shape)
            buf[key] = g
            return (buf,)

        return Tensor._from_op(self.data[key], (self,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp
    )


def logsumexp(t: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp along ``axis``; overflow-free up to +-1e8 inputs.

    result = max + ln(sum(exp(t - max))); the gradient is the softmax of t.
    """
    t = Tensor._lift(t)
    if t.shape[axis] == 0:
        raise ValueError("logsumexp over an empty axis")
    m = np.max(t.data, axis=axis, keepdims=True)
    e = np.exp(t.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = m + np.log(s)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    w = e / s

    def vjp(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        return (ge * w,)

    return Tensor._from_op(out, (t,), vjp)


def softmax(t: Tensor, axis: int) -> Tensor:
    """exp(t - logsumexp(t)) along ``axis``; positive entries summing to 1."""
    t = Tensor._lift(t)
    return (t - logsumexp(t, axis=axis, keepdims=True)).exp()


class Gradients:
    """Gradients keyed by parameter tensor identity.

    ``grads[param]`` is a Tensor with the same shape as ``param``.
    """

    def __init__(self, entries: dict):
        self._by_id = {id(t): (t, g) for t, g in entries.items()}

    def __getitem__(self, param: Tensor) -> Tensor:
        try:
            return self._by_id[id(param)][1]
        except KeyError:
            raise KeyError("no gradient recorded for this tensor") from None

    def __contains__(self, param: Tensor) -> bool:
        return id(param) in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def items(self):
        return [(t, g) for (t, g) in self._by_id.values()]


def backward(output: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar output.

    Returns d(output)/d(p) for every reachable leaf tensor with
    ``requires_grad``. The tape is single-use: ops must be re-run to
    differentiate again.
    """
    if output.size != 1:
        raise ValueError(f"backward expects a scalar output, got shape {output.shape}")
    if not output.requires_grad or output._vjp is None:
        raise ValueError("backward on a detached output: no tape to differentiate")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[Tensor, Tensor] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if not node._parents:
                leaves[node] = Tensor(g)
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    return Gradients(leaves)


def finite_diff_check(f, point: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic map from one tensor to a scalar tensor.
    The relative error at each coordinate is
    |analytic - central| / max(|analytic|, 1e-8).
    """
    p = Tensor(point.data.copy(), requires_grad=True)
    analytic = backward(f(p))[p].data.reshape(-1)
    fd = np.empty(analytic.size)
    flat = p.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(p.data)).item()
        flat[i] = orig - step
        lo = f(Tensor(p.data)).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("finite_diff_check: f is non-finite at a perturbed point")
        fd[i] = (hi - lo) / (2.0 * step)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(analytic), 1e-8)
    return float(np.max(rel)) if rel.size else 0.0


def finite_diff_check_params(f, params, step: float = 1e-5) -> float:
    """Like :func:`finite_diff_check`, but w.r.t. a list of parameter tensors.

    ``f()`` takes no arguments and must read the given parameters; their data
    buffers are perturbed in place and restored.
    """
    grads = backward(f())
    worst = 0.0
    for p in params:
        analytic = grads[p].data.reshape(-1)
        for i in range(p.size):
            idx = np.unravel_index(i, p.shape)
            orig = p.data[idx]
            p.data[idx] = orig + step
            hi = f().item()
            p.data[idx] = orig - step
            lo = f().item()
            p.data[idx] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("finite_diff_check_params: non-finite at perturbed point")
            fd = (hi - lo) / (2.0 * step)
            a = analytic[i]
            worst = max(worst, abs(a - fd) / max(abs(a), 1e-8))
    return worst


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _check_basic_index(key) -> None:
    items = key if isinstance(key, tuple) else (key,)
    for it in items:
        if isinstance(it, (list, np.ndarray, Tensor)):
            raise TypeError("only basic (int/slice) indexing is differentiable")
