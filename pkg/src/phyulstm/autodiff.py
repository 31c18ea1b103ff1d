"""Reverse-mode differentiation over batch x time x channel arrays.

Only the primitives the surrogate network needs are provided. Every value is a
:class:`Grid3` node holding a float64 array; parameters and scalar losses use the
same node type with other ranks. Operations record their parents and a backward
closure; :meth:`Grid3.backward` replays the recorded graph in reverse creation
order, which is a valid reverse topological order because a node is always created
after its inputs.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_counter = itertools.count()


class Grid3:
    """A float64 array with an optional gradient and a link into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable[[np.ndarray], None] | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_counter)
        self.name = name

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Grid3{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Grid3":
        return Grid3(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every upstream node that requires it.

        Gradients accumulate across calls; use :func:`zero_grad` to reset.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo = _collect(self)
        upstream: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in topo:
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None or not _needs_grad(parent):
                        continue
                    key = id(parent)
                    if key in upstream:
                        upstream[key] = upstream[key] + pg
                    else:
                        upstream[key] = pg

    # elementwise arithmetic used by the losses ---------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_grid(other), -1.0))

    def __rsub__(self, other):
        return add(as_grid(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, Grid3):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _needs_grad(node: Grid3) -> bool:
    return node.requires_grad or node._backward is not None


def _collect(root: Grid3) -> list[Grid3]:
    seen: set[int] = set()
    nodes: list[Grid3] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if _needs_grad(p))
    nodes.sort(key=lambda n: n._seq, reverse=True)
    return nodes


def _result(data, parents: Sequence[Grid3], backward) -> Grid3:
    if any(_needs_grad(p) for p in parents):
        return Grid3(data, _parents=tuple(parents), _backward=backward)
    return Grid3(data)


def as_grid(x) -> Grid3:
    return x if isinstance(x, Grid3) else Grid3(x)


def parameter(data, name: str | None = None) -> Grid3:
    return Grid3(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)


def zero_grad(params: Iterable[Grid3]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# generic arithmetic


def add(a, b) -> Grid3:
    a, b = as_grid(a), as_grid(b)
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _result(out, (a, b), backward)


def multiply(a: Grid3, b: Grid3) -> Grid3:
    out = a.data * b.data

    def backward(g):
        return ((a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape)))

    return _result(out, (a, b), backward)


def scale(a: Grid3, factor: float) -> Grid3:
    return _result(a.data * factor, (a,), lambda g: ((a, g * factor),))


def affine_channels(a: Grid3, mult, offset) -> Grid3:
    """Per-channel constant affine map ``a * mult + offset`` (broadcast on the last axis)."""
    mult = np.asarray(mult, dtype=DTYPE)
    out = a.data * mult + np.asarray(offset, dtype=DTYPE)
    return _result(out, (a,), lambda g: ((a, g * mult),))


def channel(a: Grid3, index: int) -> Grid3:
    """Select one channel, keeping the trailing axis: (B, T, C) -> (B, T, 1)."""
    out = a.data[..., index:index + 1].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., index:index + 1] = g
        return ((a, full),)

    return _result(out, (a,), backward)


def mean_square(a: Grid3) -> Grid3:
    """Mean of squared entries over the whole array (a scalar node)."""
    n = a.data.size
    out = np.array(np.mean(a.data ** 2))
    return _result(out, (a,), lambda g: ((a, g * 2.0 * a.data / n),))


def total(a: Grid3) -> Grid3:
    """Sum of all entries."""
    return _result(np.array(a.data.sum()), (a,), lambda g: ((a, np.broadcast_to(g, a.shape).copy()),))


# ---------------------------------------------------------------------------
# network primitives


def conv1d_causal(x: Grid3, weights: Grid3, bias: Grid3) -> Grid3:
    """Causal 1-D convolution with left zero padding of ``K - 1`` steps.

    ``out[b, t, co] = bias[co] + sum_{k, ci} weights[k, ci, co] * x[b, t - (K-1) + k, ci]``
    """
    B, T, cin = x.shape
    K, wcin, cout = weights.shape
    if wcin != cin:
        raise ValueError(f"conv1d_causal: input shape {x.shape} has {cin} channels "
                         f"but weights shape {weights.shape} expects {wcin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv1d_causal: bias shape {bias.shape} does not match weights {weights.shape}")
    xp = np.concatenate([np.zeros((B, K - 1, cin)), x.data], axis=1) if K > 1 else x.data
    out = np.broadcast_to(bias.data, (B, T, cout)).copy()
    for k in range(K):
        out += xp[:, k:k + T, :] @ weights.data[k]

    def backward(g):
        gw = np.empty_like(weights.data)
        gxp = np.zeros_like(xp)
        g2 = g.reshape(B * T, cout)
        for k in range(K):
            gw[k] = xp[:, k:k + T, :].reshape(B * T, cin).T @ g2
            gxp[:, k:k + T, :] += g @ weights.data[k].T
        return ((x, gxp[:, K - 1:, :]), (weights, gw), (bias, g.sum(axis=(0, 1))))

    return _result(out, (x, weights, bias), backward)


class BatchNormState:
    """Running per-channel statistics for :func:`batch_norm1d`."""

    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        if epsilon <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.epsilon = epsilon


def batch_norm1d(x: Grid3, gamma: Grid3, beta: Grid3, state: BatchNormState, mode: str = "train") -> Grid3:
    """Per-channel normalization over all (entry, time) positions.

    In ``"train"`` mode the batch statistics (biased variance) are used and the
    running statistics are updated with an exponential moving average; in
    ``"infer"`` mode the frozen running statistics are used.
    """
    eps = state.epsilon
    if mode == "train":
        mu = x.data.mean(axis=(0, 1))
        var = x.data.var(axis=(0, 1))
        m = state.momentum
        state.mean = (1 - m) * state.mean + m * mu
        state.var = (1 - m) * state.var + m * var
    elif mode == "infer":
        mu, var = state.mean, state.var
    else:
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 1))
        gbeta = g.sum(axis=(0, 1))
        gxhat = g * gamma.data
        if mode == "train":
            n = x.data.shape[0] * x.data.shape[1]
            gx = inv / n * (n * gxhat - gxhat.sum(axis=(0, 1)) - xhat * (gxhat * xhat).sum(axis=(0, 1)))
        else:
            gx = gxhat * inv
        return ((x, gx), (gamma, ggamma), (beta, gbeta))

    return _result(out, (x, gamma, beta), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation(x: Grid3, kind: str) -> Grid3:
    if kind == "linear":
        return x
    if kind == "relu":
        mask = x.data > 0
        return _result(x.data * mask, (x,), lambda g: ((x, g * mask),))
    if kind == "sigmoid":
        s = _sigmoid(x.data)
        return _result(s, (x,), lambda g: ((x, g * s * (1.0 - s)),))
    if kind == "tanh":
        th = np.tanh(x.data)
        return _result(th, (x,), lambda g: ((x, g * (1.0 - th * th)),))
    raise ValueError(f"unknown activation {kind!r}")


def max_pool1d(x: Grid3, pool: int = 2) -> Grid3:
    """Non-overlapping max pooling along time; a trailing partial window is dropped.

    Ties route the gradient to the earliest index in the window.
    """
    B, T, C = x.shape
    if T < pool:
        raise ValueError(f"max_pool1d needs at least {pool} time steps, got {T}")
    n = T // pool
    win = x.data[:, :n * pool, :].reshape(B, n, pool, C)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(g):
        gwin = np.zeros((B, n, pool, C))
        np.put_along_axis(gwin, arg[:, :, None, :], g[:, :, None, :], axis=2)
        gx = np.zeros_like(x.data)
        gx[:, :n * pool, :] = gwin.reshape(B, n * pool, C)
        return ((x, gx),)

    return _result(out, (x,), backward)


def upsample_repeat(x: Grid3, size: int = 2) -> Grid3:
    B, T, C = x.shape
    out = np.repeat(x.data, size, axis=1)
    return _result(out, (x,), lambda g: ((x, g.reshape(B, T, size, C).sum(axis=2)),))


def concat_channels(a: Grid3, b: Grid3) -> Grid3:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"concat_channels: batch/time mismatch, lengths {a.shape[1]} and {b.shape[1]} "
                         f"(shapes {a.shape} and {b.shape})")
    ca = a.shape[2]
    out = np.concatenate([a.data, b.data], axis=2)
    return _result(out, (a, b), lambda g: ((a, g[..., :ca]), (b, g[..., ca:])))


def dense_timewise(x: Grid3, W: Grid3, b: Grid3) -> Grid3:
    """The same affine map applied at every (entry, time) position."""
    cin, cout = W.shape
    if x.shape[-1] != cin or b.shape != (cout,):
        raise ValueError(f"dense_timewise: input {x.shape}, W {W.shape}, b {b.shape} do not agree")
    out = x.data @ W.data + b.data

    def backward(g):
        gw = x.data.reshape(-1, cin).T @ g.reshape(-1, cout)
        return ((x, g @ W.data.T), (W, gw), (b, g.reshape(-1, cout).sum(axis=0)))

    return _result(out, (x, W, b), backward)


def pad_time(x: Grid3, right: int) -> Grid3:
    """Zero-pad ``right`` steps at the end of the time axis."""
    if right == 0:
        return x
    B, T, C = x.shape
    out = np.concatenate([x.data, np.zeros((B, right, C))], axis=1)
    return _result(out, (x,), lambda g: ((x, g[:, :T, :]),))


def crop_time(x: Grid3, length: int) -> Grid3:
    T = x.shape[1]
    if length == T:
        return x
    out = x.data[:, :length, :].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :length, :] = g
        return ((x, gx),)

    return _result(out, (x,), backward)
