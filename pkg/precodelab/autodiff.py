# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
A small reverse-mode automatic differentiation engine over dense float64 arrays.

Every primitive returns a `Node` holding its value, its parent nodes and a backward rule that
maps the upstream gradient to one gradient per parent. `backward` orders the graph
topologically and visits each node once. Complex quantities are carried as `ComplexPair`s of
real nodes (real part, imaginary part); for a real loss L and complex z = x + iy the gradient
of z is stored as dL/dx + i dL/dy.

The primitives cover what the precoding network needs: elementwise arithmetic with the
broadcasting of bias terms, batched matrix products, "same" 2-D convolution, activations,
reductions, batch normalisation, dropout, a power-scaling primitive and a Hermitian positive
definite solve.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from precodelab.check_inputs import ConfigurationError, DegenerateInputError, NumericFailureError

__all__ = [
    "Node",
    "ComplexPair",
    "Mode",
    "constant",
    "variable",
    "as_node",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negative",
    "matmul",
    "transpose",
    "conv2d",
    "relu",
    "softplus",
    "sigmoid",
    "log",
    "exp",
    "sqrt",
    "square",
    "sum",
    "mean",
    "reshape",
    "flatten",
    "concat",
    "index",
    "detach",
    "batch_norm",
    "dropout",
    "power_scale",
    "hermitian_solve",
    "complex_matmul",
    "complex_hermitian",
    "complex_multiply",
    "backward",
    "numerical_gradient",
]


class Node:
    """Value of one operation in the graph together with what is needed to differentiate it."""

    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "name", "__weakref__")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(parent.requires_grad for parent in self.parents)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)


class ComplexPair(NamedTuple):
    """Complex tensor as (real part, imaginary part) nodes of equal shape."""
    re: Node
    im: Node

    @property
    def value(self):
        return self.re.value + 1j * self.im.value

    @classmethod
    def from_complex(cls, z, requires_grad=False):
        z = np.asarray(z, dtype=np.complex128)
        make = variable if requires_grad else constant
        return cls(make(z.real.copy()), make(z.imag.copy()))


@dataclass
class Mode:
    """
    Forward-pass settings shared by every layer of one pass.

    In training mode batch normalisation uses batch statistics and appends
    (key, batch_mean, batch_var) to `buffer_updates`; dropout draws masks from `rng`. Setting
    `frozen_masks` to a dict caches each mask under its layer key so that repeated passes
    (finite-difference checks) see the same masks.
    """
    training: bool = False
    dropout_rate: float = 0.15
    rng: np.random.Generator = None
    frozen_masks: dict = None
    buffer_updates: list = field(default_factory=list)

    @classmethod
    def train(cls, rng, dropout_rate: float = 0.15, frozen_masks: dict = None):
        return cls(training=True, dropout_rate=dropout_rate, rng=rng, frozen_masks=frozen_masks)

    @classmethod
    def eval(cls):
        return cls(training=False)


def constant(value, name=None):
    return Node(value, requires_grad=False, name=name)


def variable(value, name=None):
    """Leaf node whose gradient is tracked."""
    return Node(np.array(value, dtype=float), requires_grad=True, name=name)


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad, shape):
    """Sums `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as error:
        raise ConfigurationError(f"Error: cannot {op} shapes {a.shape} and {b.shape}") from error


def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "add")
    return Node(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def subtract(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "subtract")
    return Node(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def multiply(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "multiply")
    return Node(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def divide(a, b):
    a, b = as_node(a), as_node(b)
    _check_broadcast(a, b, "divide")
    out = a.value / b.value
    return Node(out, (a, b),
                lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)))


def negative(a):
    a = as_node(a)
    return Node(-a.value, (a,), lambda g: (-g,))


def matmul(a, b):
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"Error: cannot multiply matrices of shapes {a.shape} and {b.shape}")

    def rule(g):
        grad_a = g @ np.swapaxes(b.value, -1, -2)
        grad_b = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Node(a.value @ b.value, (a, b), rule)


def transpose(a):
    """Swaps the last two axes."""
    a = as_node(a)
    return Node(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def conv2d(x, weight, bias=None):
    """
    Name
    ----
    conv2d

    Description
    -----------
    Stride-1 2-D cross-correlation with zero "same" padding:
    out[b, o, i, j] = sum_{c, di, dj} weight[o, c, di, dj] * x_pad[b, c, i + di, j + dj] + bias[o].

    Parameters
    ----------
    x : Node
        Input of shape (batch, c_in, height, width).
    weight : Node
        Kernel of shape (c_out, c_in, k, k) with odd k.
    bias : Node, optional
        Bias of shape (c_out,).

    Returns
    -------
    Node of shape (batch, c_out, height, width).
    """
    x, weight = as_node(x), as_node(weight)
    if x.value.ndim != 4 or weight.value.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ConfigurationError(f"Error: conv2d got input {x.shape} and kernel {weight.shape}")
    k = weight.shape[2]
    if weight.shape[3] != k or k % 2 == 0:
        raise ConfigurationError("Error: conv2d needs a square kernel with odd size")
    pad = k // 2
    height, width = x.shape[2], x.shape[3]
    padded = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    out = np.zeros((x.shape[0], weight.shape[0], height, width))
    for di in range(k):
        for dj in range(k):
            window = padded[:, :, di:di + height, dj:dj + width]
            out += np.einsum("bchw,oc->bohw", window, weight.value[:, :, di, dj])

    parents = (x, weight)
    if bias is not None:
        bias = as_node(bias)
        out = out + bias.value[None, :, None, None]
        parents = (x, weight, bias)

    def rule(g):
        grad_padded = np.zeros_like(padded)
        grad_weight = np.zeros_like(weight.value)
        for di in range(k):
            for dj in range(k):
                window = padded[:, :, di:di + height, dj:dj + width]
                grad_weight[:, :, di, dj] = np.einsum("bohw,bchw->oc", g, window)
                grad_padded[:, :, di:di + height, dj:dj + width] += np.einsum("bohw,oc->bchw", g, weight.value[:, :, di, dj])
        grads = (grad_padded[:, :, pad:pad + height, pad:pad + width], grad_weight)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return Node(out, parents, rule)


def relu(x):
    x = as_node(x)
    active = x.value > 0
    return Node(np.where(active, x.value, 0.0), (x,), lambda g: (g * active,))


def softplus(x):
    x = as_node(x)
    return Node(np.logaddexp(0.0, x.value), (x,), lambda g: (g * expit(x.value),))


def sigmoid(x):
    x = as_node(x)
    out = expit(x.value)
    return Node(out, (x,), lambda g: (g * out * (1.0 - out),))


def log(x):
    x = as_node(x)
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,))


def exp(x):
    x = as_node(x)
    out = np.exp(x.value)
    return Node(out, (x,), lambda g: (g * out,))


def sqrt(x):
    x = as_node(x)
    out = np.sqrt(x.value)
    return Node(out, (x,), lambda g: (g * 0.5 / out,))


def square(x):
    x = as_node(x)
    return Node(x.value ** 2, (x,), lambda g: (2.0 * g * x.value,))


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False):
    x = as_node(x)
    return Node(np.sum(x.value, axis=axis, keepdims=keepdims), (x,),
                lambda g: (np.array(_expand(g, x.shape, axis, keepdims)),))


def mean(x, axis=None, keepdims=False):
    x = as_node(x)
    count = x.value.size / max(np.size(np.sum(x.value, axis=axis, keepdims=keepdims)), 1)
    return Node(np.mean(x.value, axis=axis, keepdims=keepdims), (x,),
                lambda g: (np.array(_expand(g, x.shape, axis, keepdims)) / count,))


def reshape(x, shape):
    x = as_node(x)
    try:
        out = x.value.reshape(shape)
    except ValueError as error:
        raise ConfigurationError(f"Error: cannot reshape {x.shape} to {shape}") from error
    return Node(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    """Collapses every axis but the leading batch axis."""
    x = as_node(x)
    return reshape(x, (x.shape[0], -1))


def concat(nodes, axis=-1):
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as error:
        raise ConfigurationError(f"Error: cannot concatenate shapes {[n.shape for n in nodes]}") from error
    splits = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return Node(out, nodes, lambda g: tuple(np.split(g, splits, axis=axis)))


def index(x, i):
    """Selects x[i] along the leading axis."""
    x = as_node(x)

    def rule(g):
        grad = np.zeros_like(x.value)
        grad[i] = g
        return (grad,)

    return Node(x.value[i], (x,), rule)


def detach(x):
    """Same value, no gradient to the inputs."""
    return constant(as_node(x).value.copy())


def batch_norm(x, gamma, beta, running_mean, running_var, mode: Mode, key: str, eps: float = 1e-8):
    """
    Name
    ----
    batch_norm

    Description
    -----------
    Per-channel normalisation followed by the affine map gamma * x_hat + beta. Channels are
    axis 1; statistics are taken over every other axis. In training mode the batch mean and
    (biased) variance are used and recorded in `mode.buffer_updates` under `key`; in
    evaluation mode the running statistics are used and the layer is affine.

    Parameters
    ----------
    x : Node
        Input of shape (batch, channels) or (batch, channels, height, width).
    gamma, beta : Node
        Affine parameters of shape (channels,).
    running_mean, running_var : numpy.ndarray
        Running statistics of shape (channels,).
    mode : Mode
        Training or evaluation settings.
    key : str
        Name under which batch statistics are recorded.
    eps : float
        Variance floor. Defaults to 1e-8.

    Returns
    -------
    Node with the shape of `x`.
    """
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    axes = (0,) + tuple(range(2, x.value.ndim))
    view = (1, -1) + (1,) * (x.value.ndim - 2)

    if mode.training:
        batch_mean = x.value.mean(axis=axes)
        batch_var = x.value.var(axis=axes)
        mode.buffer_updates.append((key, batch_mean, batch_var))
        inv_std = 1.0 / np.sqrt(batch_var + eps)
        x_hat = (x.value - batch_mean.reshape(view)) * inv_std.reshape(view)
        count = x.value.size / x.shape[1]

        def rule(g):
            grad_x_hat = g * gamma.value.reshape(view)
            sum_grad = grad_x_hat.sum(axis=axes, keepdims=True)
            sum_grad_x_hat = (grad_x_hat * x_hat).sum(axis=axes, keepdims=True)
            grad_x = inv_std.reshape(view) / count * (count * grad_x_hat - sum_grad - x_hat * sum_grad_x_hat)
            return grad_x, (g * x_hat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
        x_hat = (x.value - np.asarray(running_mean).reshape(view)) * inv_std.reshape(view)

        def rule(g):
            grad_x = g * (gamma.value * inv_std).reshape(view)
            return grad_x, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    out = gamma.value.reshape(view) * x_hat + beta.value.reshape(view)
    return Node(out, (x, gamma, beta), rule)


def dropout(x, mode: Mode, key: str):
    """Inverted dropout: zeroes entries with probability `mode.dropout_rate` and rescales the rest. Identity in evaluation mode."""
    x = as_node(x)
    rate = mode.dropout_rate
    if not mode.training or rate == 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ConfigurationError("Error: dropout rate must lie in [0, 1)")

    if mode.frozen_masks is not None and key in mode.frozen_masks:
        mask = mode.frozen_masks[key]
    else:
        if mode.rng is None:
            raise ConfigurationError("Error: training-mode dropout needs a random generator")
        mask = (mode.rng.random(x.shape) >= rate) / (1.0 - rate)
        if mode.frozen_masks is not None:
            mode.frozen_masks[key] = mask
    if mask.shape != x.shape:
        raise ConfigurationError(f"Error: frozen dropout mask {key} has shape {mask.shape}, expected {x.shape}")
    return Node(x.value * mask, (x,), lambda g: (g * mask,))


def power_scale(power, p_max: float, strict: bool = False):
    """
    Name
    ----
    power_scale

    Description
    -----------
    Per-sample scale factor that enforces a total power budget, given the per-sample power
    node `power` (shape (batch,)). Projection (`strict = False`) gives min(1, sqrt(p_max / P));
    strict normalisation gives sqrt(p_max / P).

    Raises
    ------
    DegenerateInputError
        In strict mode when some sample has zero power.
    """
    power = as_node(power)
    P = power.value
    if strict:
        if np.any(P <= 0.0):
            raise DegenerateInputError("Error: cannot normalise an all-zero precoder")
        over = np.ones(P.shape, dtype=bool)
    else:
        over = P > p_max
    safe = np.where(over, P, 1.0)
    scale = np.where(over, np.sqrt(p_max / safe), 1.0)
    return Node(scale, (power,), lambda g: (np.where(over, -0.5 * g * scale / safe, 0.0),))


def hermitian_solve(A: ComplexPair, b: ComplexPair, on_failure: str = "raise"):
    """
    Name
    ----
    hermitian_solve

    Description
    -----------
    Solves A X = B for a batch of Hermitian positive definite A by Cholesky factorisation.
    The backward rule is the adjoint one: with upstream gradient X_bar,
    B_bar = A^{-1} X_bar and A_bar = -B_bar X^H, split into real and imaginary parts.

    Parameters
    ----------
    A : ComplexPair
        Matrices of shape (batch, n, n); only the lower triangle is read.
    b : ComplexPair
        Right-hand sides of shape (batch, n, k).
    on_failure : str
        - "raise" (default): a failed factorisation raises `NumericFailureError`.
        - "zero": the affected samples get X = 0 and are flagged.

    Returns
    -------
    tuple
        (X, degenerate): a ComplexPair of shape (batch, n, k) and a boolean array (batch,).
    """
    if on_failure not in ("raise", "zero"):
        raise ConfigurationError("Error: `on_failure` must be 'raise' or 'zero'")
    Ar, Ai, br, bi = (as_node(n) for n in (A.re, A.im, b.re, b.im))
    if Ar.value.ndim != 3 or Ar.shape[-1] != Ar.shape[-2] or br.value.ndim != 3 or br.shape[:2] != Ar.shape[:2]:
        raise ConfigurationError(f"Error: hermitian_solve got A {Ar.shape} and b {br.shape}")

    A_value = Ar.value + 1j * Ai.value
    b_value = br.value + 1j * bi.value
    X = np.zeros_like(b_value)
    factors = [None] * A_value.shape[0]
    degenerate = np.zeros(A_value.shape[0], dtype=bool)
    for n in range(A_value.shape[0]):
        try:
            factors[n] = cho_factor(A_value[n], lower=True)
            X[n] = cho_solve(factors[n], b_value[n])
            if not np.all(np.isfinite(X[n])):
                raise LinAlgError("non-finite solution")
        except (LinAlgError, ValueError) as error:
            if on_failure == "raise":
                raise NumericFailureError(f"Error: Hermitian solve failed for sample {n}: {error}") from error
            factors[n] = None
            X[n] = 0.0
            degenerate[n] = True

    def rule(g):
        X_bar = g[0] + 1j * g[1]
        b_bar = np.zeros_like(X_bar)
        for n, factor in enumerate(factors):
            if factor is not None:
                b_bar[n] = cho_solve(factor, X_bar[n])
        A_bar = -b_bar @ np.conj(np.swapaxes(X, -1, -2))
        return A_bar.real, A_bar.imag, b_bar.real, b_bar.imag

    packed = Node(np.stack([X.real, X.imag]), (Ar, Ai, br, bi), rule)
    return ComplexPair(index(packed, 0), index(packed, 1)), degenerate


def complex_matmul(a: ComplexPair, b: ComplexPair):
    """(ar + i ai)(br + i bi) from four real products."""
    return ComplexPair(matmul(a.re, b.re) - matmul(a.im, b.im),
                       matmul(a.re, b.im) + matmul(a.im, b.re))


def complex_hermitian(a: ComplexPair):
    """Conjugate transpose of the last two axes."""
    return ComplexPair(transpose(a.re), negative(transpose(a.im)))


def complex_multiply(a: ComplexPair, b: ComplexPair):
    """Elementwise complex product with broadcasting."""
    return ComplexPair(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node, wrt):
    """
    Name
    ----
    backward

    Description
    -----------
    Reverse pass from a scalar `loss`. Every node is visited once, in reverse topological
    order, and gradients of nodes used several times are summed.

    Parameters
    ----------
    loss : Node
        Scalar node.
    wrt : dict
        Mapping name -> leaf Node whose gradients are wanted.

    Returns
    -------
    dict
        Mapping name -> gradient array with the shape of the leaf; leaves the loss does not
        depend on get zeros.

    Example
    -------
    >>> x = variable(3.0)
    >>> backward(square(x), {"x": x})["x"]
    array(6.)
    """
    if not isinstance(loss, Node) or loss.value.size != 1:
        raise ConfigurationError("Error: backward needs a scalar loss node")

    grads = {id(loss): np.ones_like(loss.value)}
    if loss.requires_grad:
        for node in reversed(_topological_order(loss)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, grad in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad or grad is None:
                    continue
                grad = np.asarray(grad, dtype=float).reshape(parent.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + grad
                else:
                    grads[id(parent)] = grad

    return {name: np.array(grads.get(id(leaf), np.zeros_like(leaf.value)), dtype=float)
            for name, leaf in wrt.items()}


def numerical_gradient(f, array, step: float = 1e-5):
    """
    Central-difference gradient of the scalar function `f()` with respect to the entries of
    `array`, which is perturbed in place and restored.
    """
    if not array.flags.c_contiguous:
        raise ConfigurationError("Error: numerical_gradient perturbs arrays in place and needs a contiguous array")
    grad = np.zeros_like(array, dtype=float)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = float(f())
        flat[i] = original - step
        lower = float(f())
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * step)
    return grad
