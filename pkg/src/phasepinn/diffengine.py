"""Small array-valued autodiff engine.

Two layers cooperate:

* :class:`Tape` / :class:`Var` record elementary operations on numpy arrays
  and run a single reverse sweep to obtain gradients of a scalar loss.
* :class:`Dual` carries a (primal, tangent) pair through a network whose
  input is the scalar time ``t``.  Its primal and tangent may themselves be
  tape variables, so the input derivative ``df/dt`` becomes an ordinary node
  on the tape and can be differentiated again with respect to the weights
  (forward-over-reverse).

Only the operations needed by the forecasters are supported: add, sub, neg,
mul, div, square, matmul, sum, mean, tanh and celu (alpha = 1).  Anything
else raises :class:`UnsupportedOperation`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "UnsupportedOperation",
    "Tape",
    "Var",
    "Dual",
    "ParamVector",
    "tanh",
    "celu",
    "celu_prime",
    "square",
    "total",
    "mean",
    "activate",
    "mlp_apply",
    "forward_with_input_derivative",
    "gradient",
    "value_and_gradient",
]


class UnsupportedOperation(TypeError):
    """Raised when a tape variable meets an operation the engine cannot differentiate."""


def _unbroadcast(grad, shape):
    grad = np.asarray(grad)
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Append-only record of elementary operations.

    Node ``k`` only ever depends on nodes with a smaller index, so walking
    the records backwards is a valid reverse topological order.
    """

    def __init__(self) -> None:
        self.values: List[np.ndarray] = []
        # (kind, input node ids, vjp) where vjp maps the output cotangent to
        # one cotangent per input
        self.records: List[Tuple[str, Tuple[int, ...], Optional[Callable]]] = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, kind, value, inputs=(), vjp=None) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        self.values.append(value)
        self.records.append((kind, tuple(inputs), vjp))
        return Var(self, len(self.values) - 1)

    def leaf(self, value) -> "Var":
        return self._push("leaf", value)

    def backward(self, output: "Var") -> List[Optional[np.ndarray]]:
        """Reverse sweep from a scalar output; returns one cotangent per node."""
        if output.tape is not self:
            raise ValueError("output variable belongs to a different tape")
        if self.values[output.index].size != 1:
            raise ValueError("backward() needs a scalar output")
        grads: List[Optional[np.ndarray]] = [None] * len(self.values)
        grads[output.index] = np.ones_like(self.values[output.index])
        for index in range(output.index, -1, -1):
            g = grads[index]
            kind, inputs, vjp = self.records[index]
            if g is None or vjp is None:
                continue
            for src, contrib in zip(inputs, vjp(g)):
                if contrib is None:
                    continue
                contrib = _unbroadcast(contrib, self.values[src].shape)
                if grads[src] is None:
                    grads[src] = contrib
                else:
                    grads[src] = grads[src] + contrib
        return grads


_UFUNC_NAMES = {
    np.add: "add",
    np.subtract: "sub",
    np.multiply: "mul",
    np.true_divide: "div",
    np.negative: "neg",
    np.matmul: "matmul",
    np.tanh: "tanh",
    np.square: "square",
}


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"

    def __float__(self) -> float:
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise UnsupportedOperation(f"unsupported elementary op: pow (exponent {exponent!r})")

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        name = _UFUNC_NAMES.get(ufunc) if method == "__call__" and not kwargs else None
        if name is None:
            raise UnsupportedOperation(f"unsupported elementary op: {ufunc.__name__}")
        return _DISPATCH[name](*inputs)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise TypeError("no tape variable among operands")


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _ids(*args):
    return tuple(a.index for a in args if isinstance(a, Var))


def _binary(kind, a, b, value, da, db):
    """Record a binary op; ``da``/``db`` map the cotangent to each operand's cotangent."""
    tape = _tape_of(a, b)
    a_var, b_var = isinstance(a, Var), isinstance(b, Var)
    if a_var and b_var:
        vjp = lambda g: (da(g), db(g))
    elif a_var:
        vjp = lambda g: (da(g),)
    else:
        vjp = lambda g: (db(g),)
    return tape._push(kind, value, _ids(a, b), vjp)


def _add(a, b):
    return _binary("add", a, b, _val(a) + _val(b), lambda g: g, lambda g: g)


def _sub(a, b):
    return _binary("sub", a, b, _val(a) - _val(b), lambda g: g, lambda g: -g)


def _mul(a, b):
    av, bv = _val(a), _val(b)
    return _binary("mul", a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def _div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _binary("div", a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def _neg(a):
    return a.tape._push("neg", -a.value, (a.index,), lambda g: (-g,))


def _matmul(a, b):
    av, bv = _val(a), _val(b)
    return _binary(
        "matmul",
        a,
        b,
        av @ bv,
        lambda g: g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.outer(g, bv),
        lambda g: np.swapaxes(av, -1, -2) @ g if av.ndim > 1 else np.outer(av, g),
    )


_DISPATCH = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
    "neg": _neg,
    "matmul": _matmul,
    "tanh": lambda x: tanh(x),
    "square": lambda x: square(x),
}


# elementary functions that accept plain arrays, tape variables or duals ------

def tanh(x):
    if isinstance(x, Dual):
        p = tanh(x.primal)
        return Dual(p, (1.0 - square(p)) * x.tangent)
    if isinstance(x, Var):
        out = np.tanh(x.value)
        return x.tape._push("tanh", out, (x.index,), lambda g: (g * (1.0 - out * out),))
    return np.tanh(x)


def celu_prime(x):
    """Derivative of celu (alpha = 1): 1 for x > 0, exp(x) otherwise."""
    if isinstance(x, Var):
        xv = x.value
        out = np.exp(np.minimum(xv, 0.0))
        second = np.where(xv > 0.0, 0.0, out)
        return x.tape._push("celu_prime", out, (x.index,), lambda g: (g * second,))
    return np.exp(np.minimum(x, 0.0))


def celu(x):
    """CELU with alpha = 1: max(0, x) + min(0, exp(x) - 1)."""
    if isinstance(x, Dual):
        return Dual(celu(x.primal), celu_prime(x.primal) * x.tangent)
    if isinstance(x, Var):
        xv = x.value
        out = np.where(xv > 0.0, xv, np.expm1(np.minimum(xv, 0.0)))
        slope = np.exp(np.minimum(xv, 0.0))
        return x.tape._push("celu", out, (x.index,), lambda g: (g * slope,))
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def square(x):
    if isinstance(x, Var):
        xv = x.value
        return x.tape._push("square", xv * xv, (x.index,), lambda g: (2.0 * g * xv,))
    return np.square(x)


def total(x):
    """Sum of all elements."""
    if isinstance(x, Var):
        shape = x.value.shape
        return x.tape._push("sum", x.value.sum(), (x.index,), lambda g: (np.broadcast_to(g, shape),))
    return np.sum(x)


def mean(x):
    if isinstance(x, Var):
        shape, n = x.value.shape, x.value.size
        return x.tape._push(
            "mean", x.value.mean(), (x.index,), lambda g: (np.broadcast_to(g / n, shape),)
        )
    return np.mean(x)


@dataclass
class Dual:
    """Value together with its derivative with respect to the network input."""

    primal: object
    tangent: object

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal + other.primal, self.tangent + other.tangent)
        return Dual(self.primal + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal - other.primal, self.tangent - other.tangent)
        return Dual(self.primal - other, self.tangent)

    def __rsub__(self, other):
        return Dual(other - self.primal, -self.tangent)

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.primal * other.primal,
                self.primal * other.tangent + self.tangent * other.primal,
            )
        return Dual(self.primal * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.primal / other.primal
            return Dual(q, (self.tangent - q * other.tangent) / other.primal)
        return Dual(self.primal / other, self.tangent / other)

    def __matmul__(self, weight):
        # the weight matrix does not depend on the input
        return Dual(self.primal @ weight, self.tangent @ weight)


_ACTIVATIONS: Dict[str, Callable] = {
    "tanh": tanh,
    "celu": celu,
    "linear": lambda x: x,
}


def activate(name: str, x):
    try:
        fn = _ACTIVATIONS[name]
    except KeyError:
        raise UnsupportedOperation(f"unsupported elementary op: activation {name!r}") from None
    return fn(x)


def mlp_apply(weights: Sequence, biases: Sequence, activations: Sequence[str], x):
    """Affine-then-activation stack; rows of ``x`` are independent samples.

    ``weights[k]`` has shape (fan_in, fan_out).  Works for plain arrays, tape
    variables and :class:`Dual` inputs alike.
    """
    h = x
    for w, b, act in zip(weights, biases, activations):
        h = activate(act, h @ w + b)
    return h


def forward_with_input_derivative(net, t):
    """Evaluate a scalar-input, scalar-output network and its derivative at ``t``.

    ``t`` may be a float or a 1-D array of times; the return values have the
    same shape as ``t``.
    """
    if net.input_dim != 1 or net.output_dim != 1:
        raise ValueError(
            f"input derivative needs a 1 -> 1 network, got {net.input_dim} -> {net.output_dim}"
        )
    t_arr = np.asarray(t, dtype=np.float64)
    col = t_arr.reshape(-1, 1)
    out = mlp_apply(net.weights, net.biases, net.activations, Dual(col, np.ones_like(col)))
    value = np.asarray(out.primal).reshape(t_arr.shape)
    slope = np.asarray(out.tangent).reshape(t_arr.shape)
    if t_arr.ndim == 0:
        return float(value), float(slope)
    return value, slope


@dataclass
class ParamVector:
    """Flat parameter storage with named blocks.

    ``layout`` maps a block name (e.g. ``"s_net/0/W"``) to ``(start, stop, shape)``.
    """

    values: np.ndarray
    layout: Dict[str, Tuple[int, int, Tuple[int, ...]]]

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        layout = {}
        chunks = []
        start = 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = (start, start + arr.size, arr.shape)
            chunks.append(arr.ravel())
            start += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def __len__(self) -> int:
        return self.values.size

    def block(self, name: str) -> np.ndarray:
        start, stop, shape = self.layout[name]
        return self.values[start:stop].reshape(shape)

    def blocks(self) -> Dict[str, np.ndarray]:
        return {name: self.block(name) for name in self.layout}

    def with_values(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ValueError(f"expected {self.values.shape} values, got {values.shape}")
        return ParamVector(values, self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), dict(self.layout))


def value_and_gradient(
    loss_builder: Callable[[Dict[str, Var]], Var], params: ParamVector
) -> Tuple[float, ParamVector]:
    """Evaluate ``loss_builder`` on tape variables and return (loss, d loss / d params)."""
    tape = Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.blocks().items()}
    loss = loss_builder(leaves)
    if not isinstance(loss, Var):
        # loss does not depend on any parameter
        return float(np.asarray(loss)), params.with_values(np.zeros_like(params.values))
    grads = tape.backward(loss)
    out = np.zeros_like(params.values)
    for name, leaf in leaves.items():
        g = grads[leaf.index]
        if g is not None:
            start, stop, _ = params.layout[name]
            out[start:stop] = np.ravel(g)
    return float(loss.value), params.with_values(out)


def gradient(loss_builder: Callable[[Dict[str, Var]], Var], params: ParamVector) -> ParamVector:
    return value_and_gradient(loss_builder, params)[1]
