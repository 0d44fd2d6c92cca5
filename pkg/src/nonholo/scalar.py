"""Second-order forward-mode jets.

A :class:`Jet2` carries a value together with its gradient and Hessian with
respect to a fixed set of seed variables.  Values may carry leading batch
dimensions: ``value`` has shape ``batch``, ``grad`` has shape
``batch + (n,)`` and ``hess`` has shape ``batch + (n, n)``.  Every operation
broadcasts over the batch, so one evaluation of a model function differentiates
it at many points at once.

The elementary functions at the bottom of this module (:func:`sqrt`,
:func:`sin`, ...) accept plain floats, numpy arrays, or jets, which is what lets
the expression evaluator and the built-in models run over either algebra.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "Jet2",
    "seed",
    "eval_with_derivatives",
    "constant",
    "compose",
    "stack_values",
    "stack_grads",
    "stack_hessians",
    "value_of",
    "sqrt",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "absolute",
]


def _col(v):
    return v[..., None] if getattr(v, "ndim", 0) else v


def _col2(v):
    return v[..., None, None] if getattr(v, "ndim", 0) else v


def _any(mask) -> bool:
    return bool(mask.any()) if hasattr(mask, "any") else bool(mask)


def _jet(value, grad, hess) -> "Jet2":
    # internal constructor for operands that are already float arrays
    j = object.__new__(Jet2)
    j.value, j.grad, j.hess = value, grad, hess
    return j


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Jet2:
    """Value, gradient and Hessian of a scalar over a set of seed variables."""

    __slots__ = ("value", "grad", "hess")
    __array_priority__ = 1000  # make ndarray <op> Jet2 defer to Jet2

    def __init__(self, value, grad, hess):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @property
    def nvars(self) -> int:
        return self.grad.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Jet2(value={self.value!r}, grad={self.grad!r}, hess={self.hess!r})"

    # -- helpers -----------------------------------------------------------

    def _unary(self, f0, f1, f2) -> "Jet2":
        # chain rule for g(self): g' grad, g' hess + g'' grad grad^T
        g = self.grad
        return _jet(f0, _col(f1) * g, _col2(f1) * self.hess + _col2(f2) * _outer(g, g))

    def _check(self, other: "Jet2") -> None:
        if other.grad.shape[-1] != self.grad.shape[-1]:
            raise ValueError(
                f"jets seeded over different variable counts "
                f"({self.grad.shape[-1]} vs {other.grad.shape[-1]})"
            )

    # -- arithmetic --------------------------------------------------------

    def __neg__(self) -> "Jet2":
        return _jet(-self.value, -self.grad, -self.hess)

    def __pos__(self) -> "Jet2":
        return self

    def __add__(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            self._check(other)
            return _jet(self.value + other.value, self.grad + other.grad, self.hess + other.hess)
        if isinstance(other, (int, float)):
            return _jet(self.value + other, self.grad, self.hess)
        c = np.asarray(other, dtype=float)
        if c.shape == ():
            return _jet(self.value + c, self.grad, self.hess)
        v = self.value + c
        return Jet2(v, np.broadcast_to(self.grad, v.shape + self.grad.shape[-1:]),
                    np.broadcast_to(self.hess, v.shape + self.hess.shape[-2:]))

    __radd__ = __add__

    def __sub__(self, other) -> "Jet2":
        return self + (-other)

    def __rsub__(self, other) -> "Jet2":
        return (-self) + other

    def __mul__(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            self._check(other)
            a, b = self.value, other.value
            cross = _outer(self.grad, other.grad)
            return _jet(
                a * b,
                self.grad * _col(b) + other.grad * _col(a),
                self.hess * _col2(b) + other.hess * _col2(a) + cross + np.swapaxes(cross, -1, -2),
            )
        if isinstance(other, (int, float)):
            return _jet(self.value * other, self.grad * other, self.hess * other)
        c = np.asarray(other, dtype=float)
        return _jet(self.value * c, self.grad * _col(c), self.hess * _col2(c))

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet2":
        v = self.value
        if _any(v == 0):
            raise DomainError("division by zero")
        r = 1.0 / v
        return self._unary(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            return self * other.reciprocal()
        c = np.asarray(other, dtype=float)
        if _any(c == 0):
            raise DomainError("division by zero")
        return self * (1.0 / c)

    def __rtruediv__(self, other) -> "Jet2":
        return self.reciprocal() * other

    def __pow__(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            return exp(other * log(self))
        p = float(other)
        if p == 0.0:
            return constant(np.ones_like(self.value), self.nvars)
        if p == 1.0:
            return self
        if p == 2.0:
            v = self.value
            return self._unary(v * v, 2.0 * v, 2.0)
        v = self.value
        if p.is_integer():
            if p < 0 and _any(v == 0):
                raise DomainError("zero raised to a negative power")
        elif _any(v < 0) or (p < 2 and _any(v == 0)):
            raise DomainError(f"non-integer power {p} of a non-positive number")
        return self._unary(v ** p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    def __rpow__(self, other) -> "Jet2":
        c = np.asarray(other, dtype=float)
        if _any(c <= 0):
            raise DomainError("non-positive base raised to a variable power")
        return exp(self * np.log(c))


# -- construction ------------------------------------------------------------


def constant(value, nvars: int) -> Jet2:
    """A jet with zero derivatives over ``nvars`` seed variables."""
    v = np.asarray(value, dtype=float)
    return Jet2(v, np.zeros(v.shape + (nvars,)), np.zeros(v.shape + (nvars, nvars)))


def seed(values, which: Iterable[int] | None = None) -> list[Jet2]:
    """Lift a vector of reals to jets.

    Positions listed in ``which`` become independent variables (unit gradient
    on their own slot); the remaining positions become constants.  ``values``
    may carry leading batch dimensions; the last axis indexes the variables.
    The gradient length equals ``len(which)``, ordered as given.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 0:
        vals = vals[None]
    count = vals.shape[-1]
    which = list(range(count)) if which is None else list(which)
    if len(set(which)) != len(which):
        raise ValueError(f"duplicate seed indices: {which}")
    for i in which:
        if not 0 <= i < count:
            raise ValueError(f"seed index {i} out of range for {count} values")
    n = len(which)
    batch = vals.shape[:-1]
    zero_h = np.zeros(batch + (n, n))
    if not batch and which == list(range(count)):
        eye = np.eye(n)
        return [_jet(vals[i], eye[i], zero_h) for i in range(count)]
    slot = {i: k for k, i in enumerate(which)}
    out = []
    for i in range(count):
        g = np.zeros(batch + (n,))
        if i in slot:
            g[..., slot[i]] = 1.0
        out.append(Jet2(vals[..., i], g, zero_h))
    return out


def eval_with_derivatives(f: Callable, x, seeds: Iterable[int] | None = None):
    """Evaluate ``f(scalars)`` and return ``(value, gradient, hessian)``.

    ``f`` receives a list of scalars, jets at the seeded positions and
    constant jets elsewhere, and must return one scalar.
    """
    jets = seed(x, seeds)
    n = jets[0].nvars
    out = f(jets)
    if not isinstance(out, Jet2):
        out = constant(out, n)
    return out.value, out.grad, out.hess


def compose(value, jac, hess, inner: Sequence) -> list[Jet2]:
    """Push known derivatives of an outer map through inner jets.

    ``value`` (batch + (k,)), ``jac`` (batch + (k, p)) and ``hess``
    (batch + (k, p, p)) are the value and first/second partials of a map
    ``R^p -> R^k`` evaluated at the values of ``inner`` (p scalars).  Returns k
    jets in the seed space of ``inner``.  Used where the outer map is known only
    numerically, e.g. an implicitly defined function.
    """
    jets = [q for q in inner if isinstance(q, Jet2)]
    if not jets:
        return [np.asarray(value)[..., j] for j in range(np.shape(value)[-1])]
    n = jets[0].nvars
    batch = np.broadcast_shapes(np.shape(value)[:-1], *(q.value.shape for q in jets))
    grads = np.stack(
        [np.broadcast_to(q.grad, batch + (n,)) if isinstance(q, Jet2) else np.zeros(batch + (n,))
         for q in inner],
        axis=-2,
    )  # batch + (p, n)
    hs = np.stack(
        [np.broadcast_to(q.hess, batch + (n, n)) if isinstance(q, Jet2) else np.zeros(batch + (n, n))
         for q in inner],
        axis=-3,
    )  # batch + (p, n, n)
    g = np.einsum("...kp,...pn->...kn", jac, grads)
    h = np.einsum("...kp,...pab->...kab", jac, hs) + np.einsum(
        "...pa,...kpq,...qb->...kab", grads, hess, grads
    )
    h = 0.5 * (h + np.swapaxes(h, -1, -2))
    value = np.broadcast_to(value, batch + np.shape(value)[-1:])
    return [Jet2(value[..., j], g[..., j, :], h[..., j, :, :]) for j in range(value.shape[-1])]


# -- extraction --------------------------------------------------------------


def value_of(x):
    return x.value if isinstance(x, Jet2) else np.asarray(x, dtype=float)


def _same_shape(arrs) -> bool:
    s0 = arrs[0].shape
    return all(a.shape == s0 for a in arrs)


def stack_values(xs: Sequence) -> np.ndarray:
    vals = [value_of(x) for x in xs]
    if _same_shape(vals):
        return np.stack(vals, axis=-1)
    return np.stack(np.broadcast_arrays(*vals), axis=-1)


def _nvars(xs) -> int:
    for x in xs:
        if isinstance(x, Jet2):
            return x.nvars
    raise ValueError("no jets to read derivatives from")


def stack_grads(xs: Sequence, nvars: int | None = None) -> np.ndarray:
    """Gradients of ``xs`` as an array of shape batch + (len(xs), nvars)."""
    if all(isinstance(x, Jet2) for x in xs) and _same_shape([x.grad for x in xs]):
        return np.stack([x.grad for x in xs], axis=-2)
    n = _nvars(xs) if nvars is None else nvars
    batch = np.broadcast_shapes(*(np.shape(value_of(x)) for x in xs))
    rows = [np.broadcast_to(x.grad, batch + (n,)) if isinstance(x, Jet2) else np.zeros(batch + (n,))
            for x in xs]
    return np.stack(rows, axis=-2)


def stack_hessians(xs: Sequence, nvars: int | None = None) -> np.ndarray:
    """Hessians of ``xs`` as an array of shape batch + (len(xs), nvars, nvars)."""
    if all(isinstance(x, Jet2) for x in xs) and _same_shape([x.hess for x in xs]):
        return np.stack([x.hess for x in xs], axis=-3)
    n = _nvars(xs) if nvars is None else nvars
    batch = np.broadcast_shapes(*(np.shape(value_of(x)) for x in xs))
    rows = [np.broadcast_to(x.hess, batch + (n, n)) if isinstance(x, Jet2) else np.zeros(batch + (n, n))
            for x in xs]
    return np.stack(rows, axis=-3)


# -- elementary functions ----------------------------------------------------


def sqrt(x):
    if isinstance(x, Jet2):
        v = x.value
        if _any(v <= 0):
            raise DomainError("sqrt is not differentiable at non-positive arguments")
        r = np.sqrt(v)
        return x._unary(r, 0.5 / r, -0.25 / (r * v))
    v = np.asarray(x, dtype=float)
    if _any(v < 0):
        raise DomainError("sqrt of a negative number")
    return np.sqrt(v) if v.shape else float(np.sqrt(v))


def sin(x):
    if isinstance(x, Jet2):
        s, c = np.sin(x.value), np.cos(x.value)
        return x._unary(s, c, -s)
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet2):
        s, c = np.sin(x.value), np.cos(x.value)
        return x._unary(c, -s, -c)
    return np.cos(x)


def tan(x):
    if isinstance(x, Jet2):
        t = np.tan(x.value)
        sec2 = 1.0 + t * t
        return x._unary(t, sec2, 2.0 * t * sec2)
    return np.tan(x)


def exp(x):
    if isinstance(x, Jet2):
        e = np.exp(x.value)
        return x._unary(e, e, e)
    return np.exp(x)


def log(x):
    if isinstance(x, Jet2):
        v = x.value
        if _any(v <= 0):
            raise DomainError("log of a non-positive number")
        r = 1.0 / v
        return x._unary(np.log(v), r, -r * r)
    v = np.asarray(x, dtype=float)
    if _any(v <= 0):
        raise DomainError("log of a non-positive number")
    return np.log(v) if v.shape else float(np.log(v))


def absolute(x):
    """|x|; the derivative at 0 is taken as 0 (the function is not smooth there)."""
    if isinstance(x, Jet2):
        s = np.sign(x.value)
        return x._unary(np.abs(x.value), s, np.zeros_like(s))
    return np.abs(x)
