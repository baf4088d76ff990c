"""Small reverse-mode gradient tape over numpy arrays.

Only the primitives needed by the integrator and the training loss are
supported.  Every op accepts plain ndarrays as well as :class:`Var`; when no
argument lives on a tape the op just returns the numpy result, so the same
integrator code runs untaped during sampling.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tape:
    """Records primitive ops in creation order, which is a topological order."""

    def __init__(self) -> None:
        self.nodes: list[tuple[int, tuple]] = []
        self._size = 0

    def _new(self, value: np.ndarray, parents: tuple = ()) -> Var:
        var = Var(value, self, self._size)
        self._size += 1
        if parents:
            self.nodes.append((var.index, parents))
        return var

    def leaf(self, value) -> Var:
        return self._new(np.asarray(value, dtype=float))

    def __len__(self) -> int:
        return self._size

    def backward(self, output: Var) -> list:
        """Return adjoints of ``output`` for every recorded variable.

        Each recorded node is visited once, newest first.
        """
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        if np.ndim(output.value) != 0:
            raise ValueError("backward needs a scalar output, got shape "
                             f"{np.shape(output.value)}")
        grads: list = [None] * self._size
        grads[output.index] = np.ones(())
        for index, parents in reversed(self.nodes):
            g = grads[index]
            if g is None:
                continue
            for parent, vjp in parents:
                contrib = _unbroadcast(vjp(g), parent.value.shape)
                if grads[parent.index] is None:
                    grads[parent.index] = contrib
                else:
                    grads[parent.index] = grads[parent.index] + contrib
        return grads


class Var:
    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: Tape, index: int) -> None:
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return take_rows(self, idx)


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _record(out: np.ndarray, pairs: Sequence[tuple[object, Callable]]):
    """Wrap ``out`` as a Var when any input in ``pairs`` is taped."""
    tape = _tape_of(*(p for p, _ in pairs))
    if tape is None:
        return out
    parents = tuple((p, f) for p, f in pairs if isinstance(p, Var))
    return tape._new(out, parents)


def add(a, b):
    return _record(value(a) + value(b), [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b):
    return _record(value(a) - value(b), [(a, lambda g: g), (b, lambda g: -g)])


def neg(a):
    return _record(-value(a), [(a, lambda g: -g)])


def mul(a, b):
    av, bv = value(a), value(b)
    return _record(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def reciprocal(a):
    av = value(a)
    out = 1.0 / av
    return _record(out, [(a, lambda g: -g * out * out)])


def exp(a):
    out = np.exp(value(a))
    return _record(out, [(a, lambda g: g * out)])


def tanh(a):
    out = np.tanh(value(a))
    return _record(out, [(a, lambda g: g * (1.0 - out * out))])


def relu(a):
    av = value(a)
    # subgradient 0 at the kink
    active = av > 0
    return _record(np.where(active, av, 0.0), [(a, lambda g: g * active)])


def cos(a):
    av = value(a)
    return _record(np.cos(av), [(a, lambda g: -g * np.sin(av))])


def sin(a):
    av = value(a)
    return _record(np.sin(av), [(a, lambda g: g * np.cos(av))])


def square(a):
    av = value(a)
    return _record(av * av, [(a, lambda g: 2.0 * g * av)])


def linear(x, w):
    """``x @ w.T`` for a batch ``x`` of shape (N, in) and ``w`` of shape (out, in)."""
    xv, wv = value(x), value(w)
    if not isinstance(x, Var) and not isinstance(w, Var):
        # einsum keeps each row's result independent of batch size (BLAS does not)
        return np.einsum("ij,kj->ik", xv, wv)
    return _record(xv @ wv.T, [(x, lambda g: g @ wv), (w, lambda g: g.T @ xv)])


def sum(a, axis=None):  # noqa: A001
    av = value(a)
    out = av.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    return _record(out, [(a, vjp)])


def mean(a):
    return mul(sum(a), 1.0 / value(a).size)


def minimum(a, c: float):
    """Elementwise min against a constant; zero gradient where clamped."""
    av = value(a)
    keep = av < c
    return _record(np.where(keep, av, c), [(a, lambda g: g * keep)])


def maximum(a, c: float):
    av = value(a)
    keep = av > c
    return _record(np.where(keep, av, c), [(a, lambda g: g * keep)])


def take_rows(a, idx):
    av = value(a)
    out = av[idx]

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _record(out, [(a, vjp)])


def merge_rows(parts: Sequence, index_sets: Sequence[np.ndarray], n_rows: int):
    """Scatter row blocks back into one array: ``out[index_sets[k]] = parts[k]``."""
    vals = [value(p) for p in parts]
    tail = next((v.shape[1:] for v in vals if v.size), vals[0].shape[1:])
    out = np.empty((n_rows,) + tail)
    for v, idx in zip(vals, index_sets):
        out[idx] = v
    pairs = [(p, (lambda idx: lambda g: g[idx])(idx)) for p, idx in zip(parts, index_sets)]
    return _record(out, pairs)


def energy_value(model, x):
    """Row-wise U(x)/T with the gradient as the backward rule."""
    xv = value(x)
    out = model.energy(xv)
    return _record(out, [(x, lambda g: g[..., None] * model.grad(xv))])


def energy_grad(model, x):
    """Row-wise grad U(x)/T; backward goes through the Hessian-vector product."""
    xv = value(x)
    out = model.grad(xv)
    return _record(out, [(x, lambda g: model.hvp(xv, g))])


def grad_of(output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar ``output`` with respect to the leaves ``wrt``."""
    if not isinstance(output, Var):
        return [np.zeros_like(value(w)) for w in wrt]
    grads = output.tape.backward(output)
    return [np.zeros_like(w.value) if grads[w.index] is None
            else np.asarray(grads[w.index], dtype=float).reshape(w.value.shape)
            for w in wrt]
