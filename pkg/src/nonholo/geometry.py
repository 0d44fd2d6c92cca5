"""Curvature-type tensors of a constraint at a state.

All quantities come from first and second partials of ``C`` in
``z = (x_leaf, x_trans, y_trans[, t])``, obtained in one forward-mode pass.
Index convention for returned arrays: leaf index first, then transverse
indices, e.g. ``B[..., u, ū, v̄]`` and ``K[..., u, ū]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from . import scalar
from .errors import ConfigError, DomainError, WrongKind
from .model import (ChartDims, ConstraintKind, ConstraintMap, TransState,
                    constraint_derivatives, split)

__all__ = [
    "GeometryPack", "curvature_B", "gamma_affine", "nonlinearity_tensor",
    "pseudo_curvature_K", "s_curvature", "time_term", "double_bracket_K",
    "geometry_pack", "AdaptedDiffeo", "ChartCheck", "chart_transform_check",
]


@dataclass(frozen=True)
class GeometryPack:
    B: Optional[np.ndarray]
    gamma: Optional[np.ndarray]
    Ctensor: np.ndarray
    K: np.ndarray
    R: Optional[np.ndarray]


def _at_zero_velocity(s: TransState) -> TransState:
    return TransState(s.x_leaf, s.x_trans, np.zeros_like(s.y_trans), s.t)


def _require_lifted(C: ConstraintMap, affine_only: bool = False):
    allowed = (ConstraintKind.AFFINE,) if affine_only else (ConstraintKind.LINEAR, ConstraintKind.AFFINE)
    if C.kind not in allowed:
        need = "affine" if affine_only else "linear or affine"
        raise WrongKind(f"operation needs a {need} constraint, got {C.kind.value}")


def curvature_B(C: ConstraintMap, s: TransState) -> np.ndarray:
    """Curvature ``B^u_ūv̄`` of a linear or affine constraint at the base point of ``s``.

    The velocity part of ``s`` is ignored.  Antisymmetry in the two
    transverse slots holds exactly since ``B`` is formed as ``X - X^T``.
    """
    _require_lifted(C)
    d = constraint_derivatives(C, _at_zero_velocity(s))
    lay = d.layout
    coef = d.jac[..., lay.yb]                                    # C^u_ū
    dcoef = np.swapaxes(d.hess[..., lay.yb, :], -1, -2)          # d C^u_ū / d z, shape (m, nz, n)
    d_leaf = dcoef[..., lay.x, :]                                # [u, v, ū]
    d_trans = dcoef[..., lay.xb, :]                              # [u, v̄, ū]
    # X[u, ū, v̄] = dC^u_ū/dx^v̄ + C^v_v̄ dC^u_ū/dx^v
    X = np.swapaxes(d_trans, -1, -2) + np.einsum("...vw,...uvn->...unw", coef, d_leaf)
    return X - np.swapaxes(X, -1, -2)


def gamma_affine(C: ConstraintMap, s: TransState) -> np.ndarray:
    """Affine correction ``γ^u_ū`` such that ``K = y·B + γ``.

    ``γ^u_ū = b^v ∂C^u_ū/∂x^v - ∂b^u/∂x^ū - C^v_ū ∂b^u/∂x^v`` with ``b = C(x, 0)``.
    """
    _require_lifted(C, affine_only=True)
    d = constraint_derivatives(C, _at_zero_velocity(s))
    lay = d.layout
    b = d.value
    coef = d.jac[..., lay.yb]
    db_leaf, db_trans = d.jac[..., lay.x], d.jac[..., lay.xb]
    dcoef_leaf = d.hess[..., lay.yb, lay.x]                      # [u, ū, v]
    return (np.einsum("...v,...unv->...un", b, dcoef_leaf) - db_trans
            - np.einsum("...vn,...uv->...un", coef, db_leaf))


def nonlinearity_tensor(C: ConstraintMap, s: TransState) -> np.ndarray:
    """``𝒞^u_ūv̄ = ∂²C^u/∂y^ū∂y^v̄``; exactly zero for lifted linear/affine maps."""
    if C.is_linear_or_affine:
        return np.zeros(s.batch_shape + (C.dims.m, C.dims.n, C.dims.n))
    d = constraint_derivatives(C, s)
    return d.hess[..., d.layout.yb, d.layout.yb]


def _K_from(d, s: TransState) -> np.ndarray:
    lay = d.layout
    Cv = d.value
    Cy = d.jac[..., lay.yb]
    Cx, Cxb = d.jac[..., lay.x], d.jac[..., lay.xb]
    H_xy = d.hess[..., lay.x, lay.yb]                            # [u, v, ū]
    H_xby = d.hess[..., lay.xb, lay.yb]                          # [u, v̄, ū]
    yb = np.broadcast_to(s.y_trans, Cv.shape[:-1] + s.y_trans.shape[-1:])
    return (np.einsum("...v,...uvn->...un", Cv, H_xy) + np.einsum("...w,...uwn->...un", yb, H_xby)
            - Cxb - np.einsum("...vn,...uv->...un", Cy, Cx))


def pseudo_curvature_K(C: ConstraintMap, s: TransState) -> np.ndarray:
    """Pseudo-curvature ``K^u_ū`` at ``s``.

    ``K^u_ū = C^v ∂²C^u/∂x^v∂y^ū + y^v̄ ∂²C^u/∂x^v̄∂y^ū - ∂C^u/∂x^ū
    - ∂C^v/∂y^ū ∂C^u/∂x^v``.  Explicit time dependence of ``C`` does not
    enter; see :func:`time_term`.
    """
    return _K_from(constraint_derivatives(C, s), s)


def time_term(C: ConstraintMap, s: TransState) -> np.ndarray:
    """``∂²C^u/∂t∂y^ū`` (zero for time-independent constraints)."""
    if not C.time_dependent:
        return np.zeros(s.batch_shape + (C.dims.m, C.dims.n))
    d = constraint_derivatives(C, s)
    return d.hess[..., d.layout.t, d.layout.yb]


def s_curvature(C: ConstraintMap, S, s: TransState) -> np.ndarray:
    """``R^u_ū = K^u_ū + S^v̄ 𝒞^u_ūv̄`` for semispray values ``S``."""
    d = constraint_derivatives(C, s)
    K = _K_from(d, s)
    if C.is_linear_or_affine:
        return K
    Ct = d.hess[..., d.layout.yb, d.layout.yb]
    return K + np.einsum("...unw,...w->...un", Ct, np.asarray(S, float))


def geometry_pack(C: ConstraintMap, s: TransState, S=None) -> GeometryPack:
    B = curvature_B(C, s) if C.is_linear_or_affine else None
    gamma = gamma_affine(C, s) if C.kind is ConstraintKind.AFFINE else None
    R = None if S is None else s_curvature(C, S, s)
    return GeometryPack(B, gamma, nonlinearity_tensor(C, s), pseudo_curvature_K(C, s), R)


# -- bracket oracle -------------------------------------------------------------------


def double_bracket_K(C: ConstraintMap, s: TransState) -> np.ndarray:
    """Leaf components of ``-[[∂/∂y^ū, C_V], C_V]`` via generic Lie brackets.

    ``C_V = C^u ∂/∂x^u + y^ū ∂/∂x^ū (+ ∂/∂t)`` is treated as a vector field on
    ``z`` and the brackets are formed from its full Jacobian and second
    derivative, ``[X, Y] = DY·X - DX·Y``.  This is an independent route to
    ``K`` (plus :func:`time_term` when ``C`` depends on time).
    """
    d = constraint_derivatives(C, s)
    lay = d.layout
    nz, m, n = lay.nz, lay.m, lay.n
    batch = d.value.shape[:-1]
    # C_V components, Jacobian and second derivative over z
    V = np.zeros(batch + (nz,))
    DV = np.zeros(batch + (nz, nz))
    D2V = np.zeros(batch + (nz, nz, nz))
    V[..., lay.x] = d.value
    V[..., lay.xb] = np.broadcast_to(s.y_trans, batch + (n,))
    DV[..., lay.x, :] = d.jac[..., :nz]
    DV[..., lay.xb, lay.yb] = np.eye(n)
    D2V[..., lay.x, :, :] = d.hess[..., :nz, :nz]
    if lay.time:
        V[..., lay.t] = 1.0
    out = np.empty(batch + (m, n))
    for k in range(n):
        e = np.zeros(nz)
        e[lay.yb.start + k] = 1.0
        # W = [e, C_V] = DV·e since e is constant
        W = DV @ e
        DW = D2V @ e
        bracket = np.einsum("...ij,...j->...i", DV, W) - np.einsum("...ij,...j->...i", DW, V)
        out[..., :, k] = -bracket[..., lay.x]
    return out


# -- chart changes --------------------------------------------------------------------


def _names_for(dims: ChartDims):
    return [f"x{i + 1}" for i in range(dims.m)], [f"xb{i + 1}" for i in range(dims.n)]


def _compile_vector(sources, params, allowed, what):
    trees = []
    for src in sources:
        e = ex.parse(src)
        for name in ex.free_names(e):
            if ex.is_variable_name(name) and name not in allowed:
                raise ConfigError(f"{what}: {name!r} not allowed here")
            if not ex.is_variable_name(name) and name not in params:
                raise ConfigError(f"{what}: parameter {name!r} has no value")
        trees.append(e)
    return trees


@dataclass
class AdaptedDiffeo:
    """Foliation-adapted chart change given as expressions.

    ``leaf``/``trans`` give the new coordinates in terms of the old ones
    (``x*``, ``xb*``); the transverse part may only use ``xb*``.
    ``leaf_inv``/``trans_inv`` give the old coordinates in terms of the new
    ones, written with the same names.
    """

    dims: ChartDims
    leaf: Sequence[str]
    trans: Sequence[str]
    leaf_inv: Sequence[str]
    trans_inv: Sequence[str]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        m, n = self.dims.m, self.dims.n
        xs, xbs = _names_for(self.dims)
        if len(self.leaf) != m or len(self.leaf_inv) != m or len(self.trans) != n or len(self.trans_inv) != n:
            raise ConfigError("diffeomorphism component counts do not match the chart")
        self._leaf = _compile_vector(self.leaf, self.params, set(xs + xbs), "leaf map")
        self._trans = _compile_vector(self.trans, self.params, set(xbs), "transverse map")
        self._leaf_inv = _compile_vector(self.leaf_inv, self.params, set(xs + xbs), "inverse leaf map")
        self._trans_inv = _compile_vector(self.trans_inv, self.params, set(xbs), "inverse transverse map")
        self._xs, self._xbs = xs, xbs

        def jac(trees, names):
            return [[ex.diff(e, v) for v in names] for e in trees]

        self._A_x = jac(self._leaf, xs)
        self._A_xb = jac(self._leaf, xbs)
        self._J_B = jac(self._trans, xbs)
        self._H_B = [[[ex.diff(g, w) for w in xbs] for g in row] for row in self._J_B]
        self._J_Binv = jac(self._trans_inv, xbs)

    @classmethod
    def identity(cls, dims: ChartDims) -> "AdaptedDiffeo":
        xs, xbs = _names_for(dims)
        return cls(dims, xs, xbs, xs, xbs)

    def _env(self, x, xb):
        env = dict(self.params)
        env.update(zip(self._xs, x))
        env.update(zip(self._xbs, xb))
        return env

    @staticmethod
    def _ev(trees, env):
        if trees and isinstance(trees[0], list):
            return [AdaptedDiffeo._ev(t, env) for t in trees]
        return [ex.compile_expr(t)(env) for t in trees]

    def forward(self, x, xb):
        env = self._env(x, xb)
        return self._ev(self._leaf, env), self._ev(self._trans, env)

    def inverse(self, x, xb):
        env = self._env(x, xb)
        return self._ev(self._leaf_inv, env), self._ev(self._trans_inv, env)

    def jacobians(self, x, xb):
        """``(∂A/∂x, ∂A/∂x̄, ∂B/∂x̄, ∂²B/∂x̄²)`` at old coordinates."""
        env = self._env(x, xb)
        return (self._ev(self._A_x, env), self._ev(self._A_xb, env), self._ev(self._J_B, env),
                self._ev(self._H_B, env))

    def inverse_trans_jacobian(self, xb_new):
        return self._ev(self._J_Binv, self._env([], xb_new))

    def transform_constraint(self, C: ConstraintMap) -> ConstraintMap:
        """Constraint in the new chart: ``C' = A_x C + A_x̄ ȳ`` with ``ȳ = J_B⁻¹ ȳ'``."""
        m, n = self.dims.m, self.dims.n

        def func(xn, xbn, ybn, t):
            x, xb = self.inverse(xn, xbn)
            Jinv = self.inverse_trans_jacobian(xbn)
            yb = [sum((Jinv[i][k] * ybn[k] for k in range(1, n)), Jinv[i][0] * ybn[0]) for i in range(n)]
            c = C(x, xb, yb, t)
            A_x, A_xb, _, _ = self.jacobians(x, xb)
            return [sum((A_x[a][v] * c[v] for v in range(m)), 0.0 * yb[0])
                    + sum((A_xb[a][k] * yb[k] for k in range(n)), 0.0 * yb[0]) for a in range(m)]

        return ConstraintMap(C.kind, func, C.dims, C.time_dependent)

    def transform_state(self, s: TransState) -> TransState:
        m, n = self.dims.m, self.dims.n
        x, xb = split(s.x_leaf, m), split(s.x_trans, n)
        xn, xbn = self.forward(x, xb)
        J_B = _mat(self.jacobians(x, xb)[2], s.batch_shape)
        ybn = np.einsum("...ij,...j->...i", J_B, s.y_trans)
        b = s.batch_shape
        return TransState(_vec(xn, b), _vec(xbn, b), ybn, s.t)

    def transform_semispray(self, s: TransState, S) -> np.ndarray:
        """``S' = J_B S + ∂²B[ȳ, ȳ]``."""
        m, n = self.dims.m, self.dims.n
        _, _, J_B, H_B = self.jacobians(split(s.x_leaf, m), split(s.x_trans, n))
        b = s.batch_shape
        J = _mat(J_B, b)
        H = np.stack([_mat(row, b) for row in H_B], axis=-3)
        return (np.einsum("...ij,...j->...i", J, np.asarray(S, float))
                + np.einsum("...ijk,...j,...k->...i", H, s.y_trans, s.y_trans))


def _vec(vals, batch):
    return np.stack([np.broadcast_to(np.asarray(v, float), batch) for v in vals], axis=-1)


def _mat(rows, batch):
    return np.stack([_vec(r, batch) for r in rows], axis=-2)


@dataclass(frozen=True)
class ChartCheck:
    """Outcome of :func:`chart_transform_check` (max-abs deviations)."""

    R_deviation: float
    K_deviation: float
    R_new: np.ndarray
    R_predicted: np.ndarray
    K_new: np.ndarray
    K_predicted: np.ndarray


def chart_transform_check(C: ConstraintMap, diffeo: AdaptedDiffeo, s: TransState, S) -> ChartCheck:
    """Compare ``R`` and ``K`` recomputed in a new chart with tensorial transport.

    ``S`` is the semispray at ``s`` in the old chart.  Tensorial transport of
    a (leaf, transverse-covector) object is ``A_x · T · J_B⁻¹``.
    """
    m, n = C.dims.m, C.dims.n
    b = s.batch_shape
    A_x, _, J_B, _ = diffeo.jacobians(split(s.x_leaf, m), split(s.x_trans, n))
    A = _mat(A_x, b)
    J = _mat(J_B, b)
    if np.any(~np.isfinite(np.linalg.cond(J))) or np.any(~np.isfinite(np.linalg.cond(A))) \
            or np.any(np.linalg.cond(J) > 1e12) or np.any(np.linalg.cond(A) > 1e12):
        raise DomainError("chart change is not invertible at this state")
    Jinv = np.linalg.inv(J)

    R = s_curvature(C, S, s)
    K = pseudo_curvature_K(C, s)
    C2 = diffeo.transform_constraint(C)
    s2 = diffeo.transform_state(s)
    S2 = diffeo.transform_semispray(s, S)
    R2 = s_curvature(ConstraintMap(ConstraintKind.NONLINEAR, C2.func, C2.dims, C2.time_dependent), S2, s2)
    K2 = pseudo_curvature_K(C2, s2)

    def transport(T):
        return A @ T @ Jinv

    R_pred, K_pred = transport(R), transport(K)
    return ChartCheck(float(np.max(np.abs(R2 - R_pred))), float(np.max(np.abs(K2 - K_pred))),
                      R2, R_pred, K2, K_pred)
