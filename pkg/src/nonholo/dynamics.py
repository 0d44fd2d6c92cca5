"""Equations of motion on the transverse phase space.

Two independent evaluation routes are provided:

* the *direct* route differentiates ``L`` in its own slots
  ``w = (x_leaf, x_trans, y_leaf, y_trans[, t])`` at the constrained point and
  expands the total time derivatives of the momenta by the chain rule
  (:func:`residual_eqlagc`);
* the *constrained* route differentiates ``L_c = L(x, C + ε, ȳ[, t])`` over
  ``z = (x_leaf, x_trans, y_trans[, t])`` and the leaf perturbation ``ε``
  and assembles ``h``, ``F``, ``K`` and the semispray.

The two are tied together by the off-shell identity
``residual_eqlagc = -h·a + F - p_leaf·K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scalar
from .errors import Degenerate, DomainError, NonFinite, TimeDependentInput, WrongTimeFlags
from .geometry import _K_from
from .model import (ConstraintDerivatives, ConstraintMap, Jet, LagrangianField, Layout,
                    TransState, constraint_derivatives, seed_state)

__all__ = [
    "COND_LIMIT", "HForm", "ForceCovector", "PointData", "point_data", "h_form",
    "is_C_regular", "force_F", "force_F_timedep", "semispray", "residual_eqlagc",
    "residual_theorem_form", "offshell_rhs", "triple_product", "direct_derivatives",
]

COND_LIMIT = 1e12


@dataclass(frozen=True)
class HForm:
    h: np.ndarray
    h_inv: np.ndarray
    cond: np.ndarray


@dataclass(frozen=True)
class ForceCovector:
    F: np.ndarray


@dataclass(frozen=True)
class PointData:
    """Everything the constrained route needs at a batch of states."""

    state: TransState
    C: ConstraintDerivatives
    Lc_grad: np.ndarray   # dL_c/dz
    Lc_hess: np.ndarray   # d²L_c/dz²
    p_leaf: np.ndarray    # dL/dy_leaf at the constrained point

    @property
    def layout(self) -> Layout:
        return self.C.layout

    @property
    def Cy(self) -> np.ndarray:
        return self.C.jac[..., self.layout.yb]

    @property
    def Ctensor(self) -> np.ndarray:
        lay = self.layout
        return self.C.hess[..., lay.yb, lay.yb]

    @property
    def K(self) -> np.ndarray:
        return _K_from(self.C, self.state)

    @property
    def time_term(self) -> np.ndarray:
        """``∂²C^u/∂t∂y^ū`` (zeros without a time slot)."""
        lay = self.layout
        if not lay.time:
            return np.zeros(self.C.value.shape + (lay.n,))
        return self.C.hess[..., lay.t, lay.yb]

    @property
    def p_trans(self) -> np.ndarray:
        lay = self.layout
        return self.Lc_grad[..., lay.yb] - np.einsum("...u,...un->...n", self.p_leaf, self.Cy)


def _bt(a, shape):
    return a if a.shape == shape else np.broadcast_to(a, shape)


def _time_mode(L: LagrangianField, C: ConstraintMap) -> bool:
    return bool(L.time_dependent or C.time_dependent)


def point_data(L: LagrangianField, C: ConstraintMap, s: TransState) -> PointData:
    """One forward-mode pass over ``(z, ε)`` giving ``C`` and ``L_c`` derivatives."""
    m, n = C.dims.m, C.dims.n
    layout = Layout(m, n, _time_mode(L, C), extra=m)
    x, xb, yb, t, eps = seed_state(s, layout)
    nv = layout.nvars
    c = [ci if isinstance(ci, scalar.Jet2) else scalar.constant(ci, nv) for ci in C(x, xb, yb, t)]
    out = L(x, xb, [ci + e for ci, e in zip(c, eps)], yb, t)
    if not isinstance(out, scalar.Jet2):
        out = scalar.constant(out, nv)
    b = np.broadcast_shapes(out.value.shape, *(ci.value.shape for ci in c))
    g = _bt(out.grad, b + (nv,))
    H = _bt(out.hess, b + (nv, nv))
    cd = ConstraintDerivatives(
        layout,
        _bt(scalar.stack_values(c), b + (m,)),
        _bt(scalar.stack_grads(c, nv), b + (m, nv)),
        _bt(scalar.stack_hessians(c, nv), b + (m, nv, nv)),
    )
    nz = layout.nz
    return PointData(s, cd, g[..., :nz], H[..., :nz, :nz], g[..., layout.e])


def _pd(L, C, s):
    return s if isinstance(s, PointData) else point_data(L, C, s)


def _cond(h: np.ndarray) -> np.ndarray:
    # h is symmetric, so its 2-norm condition number is a ratio of eigenvalues
    with np.errstate(all="ignore"):
        lam = np.abs(np.linalg.eigvalsh(h))
        c = lam.max(axis=-1) / lam.min(axis=-1)
    return np.where(np.isfinite(c), c, np.inf)


def _h_matrix(d: PointData) -> np.ndarray:
    lay = d.layout
    h = np.einsum("...u,...unw->...nw", d.p_leaf, d.Ctensor) - d.Lc_hess[..., lay.yb, lay.yb]
    return 0.5 * (h + np.swapaxes(h, -1, -2))


def _checked_h(d: PointData):
    h = _h_matrix(d)
    if not np.all(np.isfinite(h)):
        raise NonFinite("bilinear form h has non-finite entries")
    cond = _cond(h)
    worst = float(np.max(cond))
    if not worst <= COND_LIMIT:
        raise Degenerate(f"bilinear form h is degenerate: cond(h) = {worst:.3g} > {COND_LIMIT:g}", worst)
    return h, cond


def h_form(L: LagrangianField, C: ConstraintMap, s) -> HForm:
    """``h_ūv̄ = p_u 𝒞^u_ūv̄ - ∂²L_c/∂y^ū∂y^v̄`` with its inverse.

    Raises :class:`Degenerate` when the condition number exceeds 1e12 at any
    state of the batch.
    """
    h, cond = _checked_h(_pd(L, C, s))
    return HForm(h, np.linalg.inv(h), cond)


def is_C_regular(L: LagrangianField, C: ConstraintMap, s: TransState):
    """``(regular, cond(h))``; never raises for degenerate or singular points."""
    try:
        d = point_data(L, C, s)
    except DomainError:
        return False, float("inf")
    cond = _cond(_h_matrix(d))
    ok = cond <= COND_LIMIT
    if np.ndim(cond) == 0:
        return bool(ok), float(cond)
    return ok, cond


def _force(d: PointData) -> np.ndarray:
    lay = d.layout
    H, g = d.Lc_hess, d.Lc_grad
    yb = np.broadcast_to(d.state.y_trans, g.shape[:-1] + (lay.n,))
    F = (np.einsum("...nw,...w->...n", H[..., lay.yb, lay.xb], yb)
         + np.einsum("...nv,...v->...n", H[..., lay.yb, lay.x], d.C.value)
         - g[..., lay.xb] - np.einsum("...un,...u->...n", d.Cy, g[..., lay.x]))
    if lay.time:
        F = F + H[..., lay.yb, lay.t] - np.einsum("...u,...un->...n", d.p_leaf, d.time_term)
    return F


def force_F(L: LagrangianField, C: ConstraintMap, s) -> ForceCovector:
    """Force covector for a time-independent system."""
    if L.time_dependent or C.time_dependent:
        raise TimeDependentInput("system depends on time; use force_F_timedep")
    return ForceCovector(_force(_pd(L, C, s)))


def force_F_timedep(L: LagrangianField, C: ConstraintMap, s) -> ForceCovector:
    """Force covector for a time-dependent constraint and time-independent ``L``."""
    if not C.time_dependent or L.time_dependent:
        raise WrongTimeFlags(
            f"needs a time-dependent constraint and a time-independent Lagrangian "
            f"(got constraint={C.time_dependent}, lagrangian={L.time_dependent})")
    return ForceCovector(_force(_pd(L, C, s)))


def _pK(d: PointData) -> np.ndarray:
    return np.einsum("...u,...un->...n", d.p_leaf, d.K)


def semispray(L: LagrangianField, C: ConstraintMap, s) -> np.ndarray:
    """``S = h⁻¹ (F - p_leaf·K)``; raises :class:`Degenerate` if ``h`` is."""
    d = _pd(L, C, s)
    h, _ = _checked_h(d)
    rhs = _force(d) - _pK(d)
    return np.linalg.solve(h, rhs[..., None])[..., 0]


def offshell_rhs(L: LagrangianField, C: ConstraintMap, j: Jet) -> np.ndarray:
    """Assembled right-hand side ``-h·a + F - p_leaf·K`` of the off-shell identity."""
    d = point_data(L, C, j.state)
    h = _h_matrix(d)
    return -np.einsum("...nw,...w->...n", h, j.a_trans) + _force(d) - _pK(d)


# -- direct route ------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectDerivatives:
    """Partials of ``L`` in its own slots at the constrained point, plus ``C`` data."""

    grad: np.ndarray   # over w = (x, xb, y, yb[, t])
    hess: np.ndarray
    C: ConstraintDerivatives
    m: int
    n: int
    time: bool

    def slots(self):
        m, n = self.m, self.n
        w = dict(x=slice(0, m), xb=slice(m, m + n), y=slice(m + n, 2 * m + n),
                 yb=slice(2 * m + n, 2 * m + 2 * n))
        if self.time:
            w["t"] = 2 * m + 2 * n
        return w


def direct_derivatives(L: LagrangianField, C: ConstraintMap, s: TransState) -> DirectDerivatives:
    m, n = C.dims.m, C.dims.n
    time = _time_mode(L, C)
    cd = constraint_derivatives(C, s, time=time)
    b = np.broadcast_shapes(s.batch_shape, cd.value.shape[:-1])
    parts = [np.broadcast_to(s.x_leaf, b + (m,)), np.broadcast_to(s.x_trans, b + (n,)),
             np.broadcast_to(cd.value, b + (m,)), np.broadcast_to(s.y_trans, b + (n,))]
    if time:
        parts.append(np.broadcast_to(s.t, b)[..., None])
    w = scalar.seed(np.concatenate(parts, axis=-1))
    nw = len(w)
    out = L(w[:m], w[m:m + n], w[m + n:2 * m + n], w[2 * m + n:2 * m + 2 * n],
            w[2 * m + 2 * n] if time else None)
    if not isinstance(out, scalar.Jet2):
        out = scalar.constant(out, nw)
    return DirectDerivatives(np.broadcast_to(out.grad, b + (nw,)), np.broadcast_to(out.hess, b + (nw, nw)),
                             cd, m, n, time)


def residual_eqlagc(L: LagrangianField, C: ConstraintMap, j: Jet, chetaev_sign: float = 1.0) -> np.ndarray:
    """Constrained Lagrange residual ``E_ū + C^u_ū E_u`` on a jet.

    ``E_i = d/dt ∂L/∂y^i - ∂L/∂x^i`` with the total derivatives expanded along
    ``dx^u/dt = C^u``, ``dx^ū/dt = y^ū``, ``dy^ū/dt = a^ū`` and
    ``dy^u/dt = dC^u/dt``.  ``chetaev_sign`` flips the sign of the leaf
    combination; it exists only as a negative control for the test suite.
    """
    s = j.state
    dd = direct_derivatives(L, C, s)
    w = dd.slots()
    cd = dd.C
    lay = cd.layout
    b = dd.grad.shape[:-1]
    a = np.broadcast_to(j.a_trans, b + (dd.n,))
    yb = np.broadcast_to(s.y_trans, b + (dd.n,))
    c = cd.value
    Cz = cd.jac[..., :lay.nz]
    zdot = [c, yb, a] + ([np.ones(b + (1,))] if lay.time else [])
    zdot = np.concatenate(zdot, axis=-1)
    cdot = np.einsum("...uk,...k->...u", Cz, zdot)               # total dC/dt
    wdot = [c, yb, cdot, a] + ([np.ones(b + (1,))] if lay.time else [])
    wdot = np.concatenate(wdot, axis=-1)
    dP = np.einsum("...ik,...k->...i", dd.hess, wdot)            # d/dt of every ∂L/∂w_i
    E_leaf = dP[..., w["y"]] - dd.grad[..., w["x"]]
    E_trans = dP[..., w["yb"]] - dd.grad[..., w["xb"]]
    Cy = cd.jac[..., lay.yb]
    return E_trans + chetaev_sign * np.einsum("...un,...u->...n", Cy, E_leaf)


def residual_theorem_form(L: LagrangianField, C: ConstraintMap, j: Jet) -> np.ndarray:
    """``d/dt ∂L_c/∂ȳ - ∂L_c/∂x̄ - C^u_ū ∂L_c/∂x^u - p_u R^u_ū``.

    ``R = K + 𝒞·S`` is the S-curvature at the jet's state, with the explicit
    time derivative ``∂²C/∂t∂ȳ`` added to ``K`` for time-dependent
    constraints.  Raises :class:`Degenerate` where ``S`` is undefined.
    """
    d = point_data(L, C, j.state)
    lay = d.layout
    S = semispray(L, C, d)
    H, g = d.Lc_hess, d.Lc_grad
    b = g.shape[:-1]
    yb = np.broadcast_to(d.state.y_trans, b + (lay.n,))
    a = np.broadcast_to(j.a_trans, b + (lay.n,))
    dpdt = (np.einsum("...nv,...v->...n", H[..., lay.yb, lay.x], d.C.value)
            + np.einsum("...nw,...w->...n", H[..., lay.yb, lay.xb], yb)
            + np.einsum("...nw,...w->...n", H[..., lay.yb, lay.yb], a))
    if lay.time:
        dpdt = dpdt + H[..., lay.yb, lay.t]
    R = d.K + np.einsum("...unw,...w->...un", d.Ctensor, S) + d.time_term
    return (dpdt - g[..., lay.xb] - np.einsum("...un,...u->...n", d.Cy, g[..., lay.x])
            - np.einsum("...u,...un->...n", d.p_leaf, R))


def triple_product(L: LagrangianField, C: ConstraintMap, s: TransState) -> np.ndarray:
    """``(C_ū | I)·Hess_y L·(C_v̄ | I)ᵀ`` over the velocity slots; equals ``-h``."""
    dd = direct_derivatives(L, C, s)
    w = dd.slots()
    vel = slice(w["y"].start, w["yb"].stop)
    Hy = dd.hess[..., vel, vel]
    Cy = dd.C.jac[..., dd.C.layout.yb]
    b = Hy.shape[:-2]
    T = np.concatenate([np.swapaxes(np.broadcast_to(Cy, b + Cy.shape[-2:]), -1, -2),
                        np.broadcast_to(np.eye(dd.n), b + (dd.n, dd.n))], axis=-1)
    return T @ Hy @ np.swapaxes(T, -1, -2)
