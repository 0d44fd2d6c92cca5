"""Chart-level data model: states, Lagrangians and constraint maps.

Everything lives in one adapted chart with leaf coordinates ``x^u`` (``m`` of
them) and transverse coordinates ``x^ū`` (``n`` of them).  A point of the
transverse phase space is ``(x_leaf, x_trans, y_trans[, t])`` and the leaf
velocities are recovered from the constraint, ``y_leaf = C(x, y_trans[, t])``.

Model functions take their arguments as lists of scalars, so the same callable
can be evaluated over floats, numpy arrays, or :class:`~nonholo.scalar.Jet2`
values.  State arrays may carry leading batch dimensions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from . import scalar
from .errors import ConfigError

__all__ = [
    "ChartDims", "TransState", "Jet", "LagrangianField", "ConstraintKind",
    "ConstraintMap", "LegendreCovector", "Layout", "ConstraintDerivatives",
    "lift_linear", "lift_affine", "constraint_velocity", "constrained_lagrangian",
    "legendre", "validate_kind", "constraint_derivatives", "split",
    "lagrangian_from_expr", "constraint_from_exprs", "lift_linear_expr",
    "lift_affine_expr", "KindReport",
]


@dataclass(frozen=True)
class ChartDims:
    m: int  # leaf coordinates x^u
    n: int  # transverse coordinates x^ū

    def __post_init__(self):
        if int(self.m) < 1 or int(self.n) < 1:
            raise ConfigError(f"chart dimensions must be positive, got m={self.m}, n={self.n}")


def _arr(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


@dataclass(frozen=True)
class TransState:
    """Point ``(x_leaf, x_trans, y_trans[, t])`` of the transverse phase space."""

    x_leaf: np.ndarray
    x_trans: np.ndarray
    y_trans: np.ndarray
    t: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x_leaf", _arr(self.x_leaf))
        object.__setattr__(self, "x_trans", _arr(self.x_trans))
        object.__setattr__(self, "y_trans", _arr(self.y_trans))
        if self.t is not None:
            object.__setattr__(self, "t", _arr(self.t))

    @property
    def dims(self) -> ChartDims:
        return ChartDims(self.x_leaf.shape[-1], self.x_trans.shape[-1])

    @property
    def batch_shape(self) -> tuple:
        shapes = [self.x_leaf.shape[:-1], self.x_trans.shape[:-1], self.y_trans.shape[:-1]]
        if self.t is not None:
            shapes.append(self.t.shape)
        return np.broadcast_shapes(*shapes)

    def check(self, dims: ChartDims, time_dependent: bool = False) -> None:
        if self.x_leaf.shape[-1] != dims.m or self.x_trans.shape[-1] != dims.n \
                or self.y_trans.shape[-1] != dims.n:
            raise ConfigError(
                f"state shapes {self.x_leaf.shape}, {self.x_trans.shape}, {self.y_trans.shape} "
                f"do not match chart (m={dims.m}, n={dims.n})"
            )
        if time_dependent and self.t is None:
            raise ConfigError("time-dependent system needs a state with t")

    def as_vector(self) -> np.ndarray:
        parts = [self.x_leaf, self.x_trans, self.y_trans]
        if self.t is not None:
            parts.append(self.t[..., None])
        b = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
        return np.concatenate([np.broadcast_to(p, b + p.shape[-1:]) for p in parts], axis=-1)

    @classmethod
    def from_vector(cls, dims: ChartDims, vec, with_time: bool = False) -> "TransState":
        v = _arr(vec)
        m, n = dims.m, dims.n
        t = v[..., m + 2 * n] if with_time else None
        return cls(v[..., :m], v[..., m:m + n], v[..., m + n:m + 2 * n], t)

    def take(self, index) -> "TransState":
        """Select batch entries (``index`` applies to the leading axes)."""
        b = self.batch_shape
        x = np.broadcast_to(self.x_leaf, b + self.x_leaf.shape[-1:])[index]
        xb = np.broadcast_to(self.x_trans, b + self.x_trans.shape[-1:])[index]
        yb = np.broadcast_to(self.y_trans, b + self.y_trans.shape[-1:])[index]
        t = None if self.t is None else np.broadcast_to(self.t, b)[index]
        return TransState(x, xb, yb, t)


@dataclass(frozen=True)
class Jet:
    """A state together with a candidate transverse acceleration ``dy^ū/dt``."""

    state: TransState
    a_trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_trans", _arr(self.a_trans))


def split(v, k: int) -> list:
    """Split the last axis of an array (or a list of scalars) into k scalars."""
    if isinstance(v, (list, tuple)):
        return list(v)
    a = np.asarray(v)
    return [a[..., i] for i in range(k)]


@dataclass
class LagrangianField:
    """``L(x_leaf, x_trans, y_leaf, y_trans[, t])`` on one tangent chart.

    ``f`` is called as ``f(x, xb, y, yb, t)`` with lists of scalars (``t`` is
    ``None`` for time-independent fields) and returns one scalar.
    """

    f: Callable
    dims: ChartDims
    time_dependent: bool = False
    source: Optional[dict] = None

    def __call__(self, x, xb, y, yb, t=None):
        return self.f(x, xb, y, yb, t if self.time_dependent else None)


class ConstraintKind(enum.Enum):
    NONLINEAR = "nonlinear"
    LINEAR = "linear"
    AFFINE = "affine"
    IMPLICIT_CON = "implicit_con"
    IMPLICIT_COV = "implicit_cov"


@dataclass
class ConstraintMap:
    """Leaf velocities as a function of the transverse phase space.

    ``func(x, xb, yb, t)`` returns the ``m`` leaf velocities ``C^u``.
    ``singular`` optionally flags states (batched) where the map is not smooth,
    e.g. the cone vertex of Appell's constraint.
    """

    kind: ConstraintKind
    func: Callable
    dims: ChartDims
    time_dependent: bool = False
    singular: Optional[Callable[[TransState], np.ndarray]] = None
    implicit: object = None
    source: Optional[dict] = None

    def __call__(self, x, xb, yb, t=None):
        return list(self.func(x, xb, yb, t if self.time_dependent else None))

    @property
    def is_linear_or_affine(self) -> bool:
        return self.kind in (ConstraintKind.LINEAR, ConstraintKind.AFFINE)

    def at(self, state: TransState) -> np.ndarray:
        """Leaf velocities at ``state`` as an array of shape batch + (m,)."""
        m, n = self.dims.m, self.dims.n
        out = self(split(state.x_leaf, m), split(state.x_trans, n),
                   split(state.y_trans, n), state.t)
        return scalar.stack_values(out) if len(out) else np.zeros(state.batch_shape + (0,))


@dataclass(frozen=True)
class LegendreCovector:
    p_leaf: np.ndarray   # dL/dy^u on the constraint image
    p_trans: np.ndarray  # dL/dy^ū on the constraint image


# -- derivative bundles ----------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Index layout of ``z = (x_leaf, x_trans, y_trans[, t])`` plus extra slots."""

    m: int
    n: int
    time: bool = False
    extra: int = 0

    @property
    def x(self) -> slice:
        return slice(0, self.m)

    @property
    def xb(self) -> slice:
        return slice(self.m, self.m + self.n)

    @property
    def yb(self) -> slice:
        return slice(self.m + self.n, self.m + 2 * self.n)

    @property
    def t(self) -> Optional[int]:
        return self.m + 2 * self.n if self.time else None

    @property
    def nz(self) -> int:
        return self.m + 2 * self.n + int(self.time)

    @property
    def e(self) -> slice:
        return slice(self.nz, self.nz + self.extra)

    @property
    def nvars(self) -> int:
        return self.nz + self.extra


def seed_state(state: TransState, layout: Layout):
    """Jets for ``(x, xb, yb, t)`` seeded over ``layout`` (extra slots left free)."""
    b = state.batch_shape
    m, n = layout.m, layout.n
    if layout.time and state.t is None:
        raise ConfigError("time-dependent evaluation needs a state with t")
    if not b:
        vals = np.zeros(layout.nvars)
        vals[layout.x], vals[layout.xb], vals[layout.yb] = state.x_leaf, state.x_trans, state.y_trans
        if layout.time:
            vals[layout.t] = state.t
    else:
        parts = [np.broadcast_to(state.x_leaf, b + (m,)), np.broadcast_to(state.x_trans, b + (n,)),
                 np.broadcast_to(state.y_trans, b + (n,))]
        if layout.time:
            parts.append(np.broadcast_to(state.t, b)[..., None])
        parts.append(np.zeros(b + (layout.extra,)))
        vals = np.concatenate(parts, axis=-1)
    jets = scalar.seed(vals)
    x, xb, yb = jets[layout.x], jets[layout.xb], jets[layout.yb]
    t = jets[layout.t] if layout.time else (None if state.t is None else state.t)
    return x, xb, yb, t, jets[layout.e]


@dataclass(frozen=True)
class ConstraintDerivatives:
    """``C^u`` and its first and second partials in ``z`` at a state."""

    layout: Layout
    value: np.ndarray  # batch + (m,)
    jac: np.ndarray    # batch + (m, nvars)
    hess: np.ndarray   # batch + (m, nvars, nvars)
    jets: list = field(repr=False, default_factory=list)


def constraint_derivatives(C: ConstraintMap, state: TransState, time: Optional[bool] = None,
                           extra: int = 0) -> ConstraintDerivatives:
    time = C.time_dependent if time is None else time
    layout = Layout(C.dims.m, C.dims.n, time, extra)
    x, xb, yb, t, _ = seed_state(state, layout)
    out = C(x, xb, yb, t)
    out = [o if isinstance(o, scalar.Jet2) else scalar.constant(o, layout.nvars) for o in out]
    value = scalar.stack_values(out)
    jac = scalar.stack_grads(out, layout.nvars)
    hess = scalar.stack_hessians(out, layout.nvars)
    b = state.batch_shape
    if value.shape[:-1] != b:
        # constant components carry no batch axes
        b = np.broadcast_shapes(b, value.shape[:-1])
        value = np.broadcast_to(value, b + value.shape[-1:])
        jac = np.broadcast_to(jac, b + jac.shape[-2:])
        hess = np.broadcast_to(hess, b + hess.shape[-3:])
    return ConstraintDerivatives(layout, value, jac, hess, out)


# -- construction ------------------------------------------------------------------


def lift_linear(coeffs: Callable, dims: ChartDims, time_dependent: bool = False,
                source: Optional[dict] = None) -> ConstraintMap:
    """Linear constraint ``C^u = sum_ū C^u_ū(x) y^ū`` from coefficient functions.

    ``coeffs(x, xb, t)`` returns an ``m x n`` nested list of scalars.
    """

    def func(x, xb, yb, t):
        c = coeffs(x, xb, t)
        return [sum((c[u][k] * yb[k] for k in range(dims.n)), 0.0 * yb[0]) for u in range(dims.m)]

    return ConstraintMap(ConstraintKind.LINEAR, func, dims, time_dependent, source=source)


def lift_affine(coeffs: Callable, offset: Callable, dims: ChartDims,
                time_dependent: bool = False, source: Optional[dict] = None) -> ConstraintMap:
    """Affine constraint ``C^u = sum_ū C^u_ū(x) y^ū + b^u(x)``.

    ``offset(x, xb, t)`` returns the ``m`` components of ``b``.
    """

    def func(x, xb, yb, t):
        c = coeffs(x, xb, t)
        b = offset(x, xb, t)
        return [sum((c[u][k] * yb[k] for k in range(dims.n)), 0.0 * yb[0]) + b[u]
                for u in range(dims.m)]

    return ConstraintMap(ConstraintKind.AFFINE, func, dims, time_dependent, source=source)


def constraint_velocity(C: ConstraintMap, s: TransState) -> np.ndarray:
    """Full chart velocity ``(C^u(s), y^ū)``, leaf block first."""
    leaf = C.at(s)
    b = np.broadcast_shapes(leaf.shape[:-1], s.batch_shape)
    return np.concatenate([np.broadcast_to(leaf, b + leaf.shape[-1:]),
                           np.broadcast_to(s.y_trans, b + s.y_trans.shape[-1:])], axis=-1)


class constrained_lagrangian:
    """``L_c(x, ȳ[, t]) = L(x, C(x, ȳ[, t]), ȳ[, t])``.

    Callable over scalars like the model functions (so it can be
    differentiated), with :meth:`at` for numeric evaluation on a state.
    """

    def __init__(self, L: LagrangianField, C: ConstraintMap):
        if L.dims != C.dims:
            raise ConfigError(f"Lagrangian chart {L.dims} and constraint chart {C.dims} differ")
        self.L, self.C = L, C
        self.time_dependent = L.time_dependent or C.time_dependent

    def __call__(self, x, xb, yb, t=None):
        y = self.C(x, xb, yb, t)
        return self.L(x, xb, y, yb, t)

    def at(self, s: TransState):
        m, n = self.L.dims.m, self.L.dims.n
        return scalar.value_of(self(split(s.x_leaf, m), split(s.x_trans, n), split(s.y_trans, n), s.t))


def legendre(L: LagrangianField, C: ConstraintMap, s: TransState) -> LegendreCovector:
    """Velocity gradient of ``L`` at the constraint image of ``s``."""
    m, n = L.dims.m, L.dims.n
    y = C.at(s)
    b = np.broadcast_shapes(s.batch_shape, y.shape[:-1])
    vel = np.concatenate([np.broadcast_to(y, b + (m,)), np.broadcast_to(s.y_trans, b + (n,))], axis=-1)
    jets = scalar.seed(vel)
    out = L(split(s.x_leaf, m), split(s.x_trans, n), jets[:m], jets[m:], s.t)
    g = out.grad if isinstance(out, scalar.Jet2) else np.zeros(b + (m + n,))
    return LegendreCovector(g[..., :m], g[..., m:])


# -- kind validation -----------------------------------------------------------------


@dataclass
class KindReport:
    kind: ConstraintKind
    samples: int
    passed: bool
    violations: list

    def __bool__(self) -> bool:
        return self.passed


def validate_kind(C: ConstraintMap, samples: int = 20, seed: int = 0, rtol: float = 1e-9,
                  sampler: Optional[Callable[[np.random.Generator], TransState]] = None) -> KindReport:
    """Check the declared Linear/Affine structure of ``C`` at random points.

    Linear maps must be homogeneous and additive in ``y_trans``; affine maps
    must have ``C(x, y) - C(x, 0)`` linear.  Other kinds pass trivially.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    dims = C.dims
    violations = []
    if not C.is_linear_or_affine:
        return KindReport(C.kind, samples, True, violations)

    def draw() -> TransState:
        if sampler is not None:
            return sampler(rng)
        t = rng.uniform(0.5, 2.0) if C.time_dependent else None
        return TransState(rng.normal(size=dims.m), rng.normal(size=dims.n),
                          rng.normal(size=dims.n), t)

    def close(a, b):
        return np.allclose(a, b, rtol=rtol, atol=rtol * (1 + np.max(np.abs(b), initial=0)))

    for k in range(samples):
        s = draw()
        y1, y2 = s.y_trans, rng.normal(size=dims.n)
        lam = rng.uniform(-3, 3)

        def at(yb):
            return C.at(TransState(s.x_leaf, s.x_trans, yb, s.t))

        base = at(np.zeros(dims.n)) if C.kind is ConstraintKind.AFFINE else 0.0
        c1, c2, c12 = at(y1) - base, at(y2) - base, at(y1 + y2) - base
        if C.kind is ConstraintKind.LINEAR and not close(at(np.zeros(dims.n)), np.zeros(dims.m)):
            violations.append((k, "nonzero at y_trans = 0"))
        if not close(at(lam * y1) - base, lam * c1):
            violations.append((k, f"not homogeneous (lambda={lam:.3g})"))
        if not close(c12, c1 + c2):
            violations.append((k, "not additive"))
    return KindReport(C.kind, samples, not violations, violations)


# -- expression-backed models ------------------------------------------------------------


def _names(dims: ChartDims, velocities: bool) -> set[str]:
    names = {f"x{i + 1}" for i in range(dims.m)} | {f"xb{i + 1}" for i in range(dims.n)}
    names |= {f"yb{i + 1}" for i in range(dims.n)} | {"t"}
    if velocities:
        names |= {f"y{i + 1}" for i in range(dims.m)}
    return names


def _check_names(e, dims, params, velocities, what):
    for name in ex.free_names(e):
        if ex.is_variable_name(name):
            if name not in _names(dims, velocities):
                raise ConfigError(f"{what}: variable {name!r} is not part of the chart "
                                  f"(m={dims.m}, n={dims.n})")
        elif name not in params:
            raise ConfigError(f"{what}: parameter {name!r} has no value")


def _bind(params, dims, x, xb, yb, t, y=None) -> dict:
    env = dict(params)
    for i in range(dims.m):
        env[f"x{i + 1}"] = x[i]
    for i in range(dims.n):
        env[f"xb{i + 1}"] = xb[i]
        env[f"yb{i + 1}"] = yb[i]
    if y is not None:
        for i in range(dims.m):
            env[f"y{i + 1}"] = y[i]
    if t is not None:
        env["t"] = t
    return env


def _parse_all(sources, dims, params, velocities, what, warn=True):
    trees = []
    for src in sources:
        if not isinstance(src, str):
            raise ConfigError(f"{what}: expected an expression string, got {src!r}")
        try:
            e = ex.parse(src)
        except ex.ExprError as err:
            raise ConfigError(f"{what}: {err}") from err
        _check_names(e, dims, params, velocities, what)
        if warn:
            ex.warn_if_nonsmooth(e, what)
        trees.append(ex.bind_params(e, params))
    return trees


def _uses_t(trees) -> bool:
    return any("t" in ex.free_names(e) for e in trees)


def lagrangian_from_expr(source: str, dims: ChartDims, params: Mapping[str, float]) -> LagrangianField:
    (tree,) = _parse_all([source], dims, params, True, "lagrangian")
    fn = ex.compile_expr(tree)
    params = dict(params)

    def f(x, xb, y, yb, t):
        return fn(_bind(params, dims, x, xb, yb, t, y))

    return LagrangianField(f, dims, _uses_t([tree]), source={"lagrangian": source})


def constraint_from_exprs(sources: Sequence[str], dims: ChartDims, params: Mapping[str, float],
                          kind: ConstraintKind = ConstraintKind.NONLINEAR) -> ConstraintMap:
    """Constraint with ``C^u`` given directly as expressions in ``(x, xb, yb, t)``."""
    if len(sources) != dims.m:
        raise ConfigError(f"constraint needs {dims.m} expressions, got {len(sources)}")
    trees = _parse_all(sources, dims, params, False, "constraint")
    fns = [ex.compile_expr(e) for e in trees]
    params = dict(params)

    def func(x, xb, yb, t):
        env = _bind(params, dims, x, xb, yb, t)
        return [fn(env) for fn in fns]

    return ConstraintMap(kind, func, dims, _uses_t(trees),
                         source={"kind": kind.value, "expressions": list(sources)})


def _coeff_fn(sources, dims, params):
    rows = [_parse_all(row, dims, params, False, "constraint coefficients") for row in sources]
    if len(rows) != dims.m or any(len(r) != dims.n for r in rows):
        raise ConfigError(f"coefficient matrix must be {dims.m} x {dims.n}")
    fns = [[ex.compile_expr(e) for e in row] for row in rows]
    params = dict(params)

    def coeffs(x, xb, t):
        env = _bind(params, dims, x, xb, [0.0] * dims.n, t)
        return [[fn(env) for fn in row] for row in fns]

    return coeffs, _uses_t([e for r in rows for e in r])


def lift_linear_expr(coefficients: Sequence[Sequence[str]], dims: ChartDims,
                     params: Mapping[str, float]) -> ConstraintMap:
    coeffs, td = _coeff_fn(coefficients, dims, params)
    return lift_linear(coeffs, dims, td, source={
        "kind": "linear", "coefficients": [list(r) for r in coefficients]})


def lift_affine_expr(coefficients: Sequence[Sequence[str]], offset: Sequence[str],
                     dims: ChartDims, params: Mapping[str, float]) -> ConstraintMap:
    coeffs, td = _coeff_fn(coefficients, dims, params)
    trees = _parse_all(offset, dims, params, False, "constraint offset")
    if len(trees) != dims.m:
        raise ConfigError(f"offset needs {dims.m} expressions, got {len(trees)}")
    fns = [ex.compile_expr(e) for e in trees]
    p = dict(params)

    def offset_fn(x, xb, t):
        env = _bind(p, dims, x, xb, [0.0] * dims.n, t)
        return [fn(env) for fn in fns]

    return lift_affine(coeffs, offset_fn, dims, td or _uses_t(trees), source={
        "kind": "affine", "coefficients": [list(r) for r in coefficients], "offset": list(offset)})
