"""Implicitly defined constraints ``G(x, y_leaf, y_trans[, t]) = 0``.

The leaf velocities are found by Newton's method from a branch hint.  Once a
root is known, first and second partials of the implicit map follow from the
implicit function theorem applied to the AD derivatives of ``G``; nothing here
differentiates through the iteration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from . import scalar
from .errors import ConfigError, NoConvergence, SingularJacobian
from .model import (ChartDims, ConstraintKind, ConstraintMap, Layout, TransState, _bind,
                    _parse_all, _uses_t, constraint_derivatives, seed_state, split)

__all__ = ["ImplicitKind", "ImplicitConstraint", "solve", "as_constraint_map",
           "chetaev_residual", "lambda_combination", "COND_LIMIT", "implicit_from_exprs"]

COND_LIMIT = 1e12


class ImplicitKind(enum.Enum):
    CON = "con"
    COV = "cov"


@dataclass(frozen=True)
class ImplicitConstraint:
    """``m`` equations in the leaf velocities.

    ``G(x, xb, y, yb, t)`` returns ``m`` scalars; ``branch_hint(x, xb, yb, t)``
    returns the ``m`` starting values for Newton's method.
    """

    kind: ImplicitKind
    G: Callable
    branch_hint: Callable
    dims: ChartDims
    time_dependent: bool = False
    tol: float = 1e-12
    max_iter: int = 50
    source: Optional[dict] = None

    def residual(self, x, xb, y, yb, t=None):
        return list(self.G(x, xb, y, yb, t if self.time_dependent else None))


def _values(qs):
    return [scalar.value_of(q) for q in qs]


def _cond(J: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        c = np.linalg.cond(J)
    return np.where(np.isfinite(c), c, np.inf)


def _newton(ic: ImplicitConstraint, x, xb, yb, t):
    """Newton iteration on numeric (possibly batched) inputs.

    Returns ``(y, jac, iterations)`` with ``y`` of shape batch + (m,).
    """
    m = ic.dims.m
    hint = ic.branch_hint(x, xb, yb, t if ic.time_dependent else None)
    b = np.broadcast_shapes(*(np.shape(v) for v in list(x) + list(xb) + list(yb) + list(hint)))
    y = np.array(np.broadcast_to(scalar.stack_values(hint), b + (m,)), dtype=float)
    floor = 4 * np.finfo(float).eps

    def jets_at(y):
        ys = scalar.seed(y)
        G = ic.residual(x, xb, ys, yb, t)
        G = [g if isinstance(g, scalar.Jet2) else scalar.constant(g, m) for g in G]
        return scalar.stack_values(G), scalar.stack_grads(G, m)

    for it in range(ic.max_iter + 1):
        g, J = jets_at(y)
        g = np.broadcast_to(g, b + (m,))
        J = np.broadcast_to(J, b + (m, m))
        if not np.all(np.isfinite(g)):
            raise NoConvergence("constraint residual is not finite during Newton iteration")
        if np.max(np.abs(g), initial=0.0) <= ic.tol:
            return y, J, it
        if it == ic.max_iter:
            break
        cond = _cond(J)
        if np.any(cond > COND_LIMIT):
            raise SingularJacobian(
                f"leaf-velocity Jacobian is singular during Newton iteration "
                f"(cond = {np.max(cond):.3g})")
        step = np.linalg.solve(J, g[..., None])[..., 0]
        y = y - step
        if np.all(np.abs(step) <= floor * (1 + np.abs(y))):
            g, J = jets_at(y)
            return y, np.broadcast_to(J, b + (m, m)), it + 1
    raise NoConvergence(
        f"Newton iteration did not reach |G| <= {ic.tol:g} in {ic.max_iter} steps "
        f"(|G| = {np.max(np.abs(g)):.3g})")


def solve(ic: ImplicitConstraint, x_leaf, x_trans, y_trans, t=None, *,
          return_iterations: bool = False):
    """Leaf velocities solving ``G = 0`` near the branch hint.

    Inputs are arrays whose last axis indexes coordinates; leading batch axes
    are allowed.  Raises :class:`SingularJacobian` when ``dG/dy_leaf`` has
    condition number above 1e12 (during iteration or at the root) and
    :class:`NoConvergence` after ``max_iter`` steps.
    """
    m, n = ic.dims.m, ic.dims.n
    y, J, its = _newton(ic, split(np.asarray(x_leaf, float), m), split(np.asarray(x_trans, float), n),
                        split(np.asarray(y_trans, float), n), None if t is None else np.asarray(t, float))
    _check_root(J)
    return (y, its) if return_iterations else y


def _check_root(J):
    cond = _cond(J)
    if np.any(cond > COND_LIMIT):
        raise SingularJacobian(f"leaf-velocity Jacobian is singular at the root (cond = {np.max(cond):.3g})")


def _implicit_jets(ic: ImplicitConstraint, x, xb, yb, t):
    """Leaf velocities as jets over the seed space of the inputs."""
    m, n = ic.dims.m, ic.dims.n
    tv = ic.time_dependent
    inner = list(x) + list(xb) + list(yb) + ([t] if tv else [])
    vx, vxb, vyb = _values(x), _values(xb), _values(yb)
    vt = scalar.value_of(t) if (tv and t is not None) else None
    y, J, _ = _newton(ic, vx, vxb, vyb, vt)
    _check_root(J)
    if not any(isinstance(q, scalar.Jet2) for q in inner):
        return [y[..., u] for u in range(m)]

    # derivatives of G in (q, y) at the root, q = (x, xb, yb[, t])
    layout = Layout(m, n, tv, extra=m)
    b = y.shape[:-1]
    state = TransState(np.stack(np.broadcast_arrays(*vx), -1) if m else np.zeros(b + (0,)),
                       np.stack(np.broadcast_arrays(*vxb), -1), np.stack(np.broadcast_arrays(*vyb), -1),
                       vt)
    qx, qxb, qyb, qt, _ = seed_state(state, layout)
    ys = scalar.seed(np.concatenate([np.zeros(b + (layout.nz,)), y], -1), range(layout.nvars))[layout.nz:]
    G = ic.residual(qx, qxb, ys, qyb, qt)
    nv = layout.nvars
    G = [g if isinstance(g, scalar.Jet2) else scalar.constant(g, nv) for g in G]
    jac = scalar.stack_grads(G, nv)
    hess = scalar.stack_hessians(G, nv)
    bb = np.broadcast_shapes(b, jac.shape[:-2])
    jac = np.broadcast_to(jac, bb + jac.shape[-2:])
    hess = np.broadcast_to(hess, bb + hess.shape[-3:])
    q = layout.nz
    Gq, Gy = jac[..., :q], jac[..., q:]
    Gqq, Gqy, Gyy = hess[..., :q, :q], hess[..., :q, q:], hess[..., q:, q:]
    Dy = -np.linalg.solve(Gy, Gq)                                     # (m, q)
    rhs = (Gqq + np.einsum("...kav,...vb->...kab", Gqy, Dy)
           + np.einsum("...va,...kvb->...kab", Dy, np.swapaxes(Gqy, -1, -2))
           + np.einsum("...va,...kvw,...wb->...kab", Dy, Gyy, Dy))
    D2y = -np.einsum("...uk,...kab->...uab", np.linalg.inv(Gy), rhs)
    return scalar.compose(np.broadcast_to(y, bb + (m,)), Dy, D2y, inner)


def as_constraint_map(ic: ImplicitConstraint) -> ConstraintMap:
    """Wrap ``ic`` as a :class:`ConstraintMap` of kind ImplicitCon/ImplicitCov."""
    kind = ConstraintKind.IMPLICIT_CON if ic.kind is ImplicitKind.CON else ConstraintKind.IMPLICIT_COV

    def func(x, xb, yb, t):
        return _implicit_jets(ic, x, xb, yb, t)

    return ConstraintMap(kind, func, ic.dims, ic.time_dependent, implicit=ic, source=ic.source)


def chetaev_residual(C: ConstraintMap, E_leaf, E_trans, s: TransState) -> np.ndarray:
    """``E_ū + sum_u dC^u/dy^ū E_u`` at ``s``."""
    d = constraint_derivatives(C, s)
    Cy = d.jac[..., d.layout.yb]  # (m, n)
    return np.asarray(E_trans, float) + np.einsum("...un,...u->...n", Cy, np.asarray(E_leaf, float))


def lambda_combination(ic: ImplicitConstraint, s: TransState, lam) -> tuple[np.ndarray, np.ndarray]:
    """``(E_leaf, E_trans) = lam . dG/dy`` at the solved point over ``s``.

    For a con-constraint ``lam`` pairs with the components ``G^v``; for a
    cov-constraint with ``G_v``.  Either way the pair is what the Chetaev
    condition allows as a reaction.
    """
    m, n = ic.dims.m, ic.dims.n
    y = solve(ic, s.x_leaf, s.x_trans, s.y_trans, s.t)
    b = np.broadcast_shapes(y.shape[:-1], s.batch_shape)
    vel = np.concatenate([np.broadcast_to(y, b + (m,)), np.broadcast_to(s.y_trans, b + (n,))], -1)
    jets = scalar.seed(vel)
    G = ic.residual(split(s.x_leaf, m), split(s.x_trans, n), jets[:m], jets[m:], s.t)
    grad = scalar.stack_grads(G, m + n)  # (m, m+n)
    E = np.einsum("...v,...va->...a", np.asarray(lam, float), grad)
    return E[..., :m], E[..., m:]


def implicit_from_exprs(kind: ImplicitKind, equations, branch, dims: ChartDims, params,
                        tol: float = 1e-12, max_iter: int = 50) -> ImplicitConstraint:
    """Implicit constraint from expression strings.

    ``equations`` are ``m`` expressions in ``x*, xb*, y*, yb*, t``; ``branch``
    gives ``m`` starting values for Newton's method in ``x*, xb*, yb*, t``.
    """
    if len(equations) != dims.m or len(branch) != dims.m:
        raise ConfigError(f"implicit constraint needs {dims.m} equations and {dims.m} branch values")
    G_trees = _parse_all(equations, dims, params, True, "implicit constraint")
    H_trees = _parse_all(branch, dims, params, False, "branch hint")
    G_fns = [ex.compile_expr(e) for e in G_trees]
    H_fns = [ex.compile_expr(e) for e in H_trees]
    p = dict(params)

    def G(x, xb, y, yb, t):
        env = _bind(p, dims, x, xb, yb, t, y)
        return [fn(env) for fn in G_fns]

    def hint(x, xb, yb, t):
        env = _bind(p, dims, x, xb, yb, t)
        return [fn(env) for fn in H_fns]

    kind_name = "implicit_con" if kind is ImplicitKind.CON else "implicit_cov"
    return ImplicitConstraint(kind, G, hint, dims, _uses_t(G_trees + H_trees), tol, max_iter,
                              source={"kind": kind_name, "expressions": list(equations),
                                      "branch": list(branch)})
