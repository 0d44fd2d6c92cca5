"""Fixed-step RK4 integration of the constrained dynamics and a residual monitor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import (DirectDerivatives, direct_derivatives, point_data, residual_eqlagc,
                       semispray)
from .errors import ConfigError, Degenerate, DomainError, NonFinite, SingularityReached
from .model import ConstraintMap, Jet, LagrangianField, TransState

__all__ = ["vector_field", "simulate", "Trajectory", "monitor", "MonitorReport", "SPEED_FLOOR"]

# below this transverse speed a cone-type constraint is treated as singular
SPEED_FLOOR = 1e-8


def _time_mode(L, C) -> bool:
    return bool(L.time_dependent or C.time_dependent)


def vector_field(L: LagrangianField, C: ConstraintMap, s: TransState) -> np.ndarray:
    """``(C(s), y_trans, S(s)[, 1])`` for the state ``s`` (batched allowed)."""
    d = point_data(L, C, s)
    S = semispray(L, C, d)
    b = S.shape[:-1]
    parts = [d.C.value, np.broadcast_to(s.y_trans, b + s.y_trans.shape[-1:]), S]
    if _time_mode(L, C):
        parts.append(np.ones(b + (1,)))
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class Trajectory:
    """Samples of a run, stored column-wise.

    ``residual`` is the on-shell constrained Lagrange residual at each sample
    (``a = S``), a roundoff-level consistency figure; use :func:`monitor` for
    the finite-difference check along the path.
    """

    t: np.ndarray
    x_leaf: np.ndarray
    x_trans: np.ndarray
    y_trans: np.ndarray
    y_leaf: np.ndarray
    S: np.ndarray
    residual: np.ndarray
    dt: float
    time_dependent: bool

    def __len__(self) -> int:
        return len(self.t)

    @property
    def states(self) -> TransState:
        return TransState(self.x_leaf, self.x_trans, self.y_trans, self.t if self.time_dependent else None)

    def state(self, k: int) -> TransState:
        return TransState(self.x_leaf[k], self.x_trans[k], self.y_trans[k],
                          self.t[k] if self.time_dependent else None)

    @property
    def final(self) -> TransState:
        return self.state(-1)

    def residual_max(self) -> np.ndarray:
        return np.max(np.abs(self.residual), axis=-1) if self.residual.size else np.zeros(len(self))


def _check_guard(C: ConstraintMap, s: TransState, t: float):
    if C.singular is not None and np.any(C.singular(s)):
        raise SingularityReached(f"constraint is singular at t = {t:.17g}")


def _assemble(L, C, ts, rows, dt, td, m, n) -> Trajectory:
    arr = np.array(rows, dtype=float).reshape(len(rows), m + 2 * n)
    ts = np.asarray(ts, dtype=float)
    states = TransState(arr[:, :m], arr[:, m:m + n], arr[:, m + n:], ts if td else None)
    if len(rows):
        try:
            d = point_data(L, C, states)
            S = semispray(L, C, d)
            y_leaf = np.array(d.C.value)
            res = residual_eqlagc(L, C, Jet(states, S))
        except (Degenerate, DomainError, NonFinite):
            y_leaf = np.full((len(rows), m), np.nan)
            S = np.full((len(rows), n), np.nan)
            res = np.full((len(rows), n), np.nan)
    else:
        y_leaf, S, res = np.zeros((0, m)), np.zeros((0, n)), np.zeros((0, n))
    return Trajectory(ts, arr[:, :m], arr[:, m:m + n], arr[:, m + n:], y_leaf, S, res, dt, td)


def simulate(L: LagrangianField, C: ConstraintMap, init: TransState, t_end: float, dt: float,
             t0: Optional[float] = None, on_step: Optional[Callable[[int, float], None]] = None) -> Trajectory:
    """Classical RK4 with a fixed step.

    The number of steps is ``round((t_end - t0)/dt)``; sample ``k`` is at
    ``t0 + k·dt``.  ``t0`` defaults to ``init.t`` (or 0).  On failure the
    raised exception carries the samples computed so far in ``.partial``.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    td = _time_mode(L, C)
    m, n = C.dims.m, C.dims.n
    if t0 is None:
        t0 = float(init.t) if init.t is not None else 0.0
    if not t_end > t0:
        raise ConfigError(f"t_end ({t_end}) must exceed t0 ({t0})")
    steps = int(round((t_end - t0) / dt))
    init.check(C.dims)
    y = np.concatenate([init.x_leaf, init.x_trans, init.y_trans]).astype(float)

    def state_of(v, t):
        return TransState(v[:m], v[m:m + n], v[m + n:], t if td else None)

    def f(v, t):
        s = state_of(v, t)
        _check_guard(C, s, t)
        return vector_field(L, C, s)[: m + 2 * n]

    ts, rows = [t0], [y.copy()]
    try:
        for k in range(steps):
            t = t0 + k * dt
            k1 = f(y, t)
            k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(y + dt * k3, t + dt)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise NonFinite(f"non-finite state at t = {t + dt:.17g}")
            ts.append(t0 + (k + 1) * dt)
            rows.append(y.copy())
            if on_step is not None:
                on_step(k + 1, ts[-1])
        _check_guard(C, state_of(y, ts[-1]), ts[-1])
    except DomainError as err:
        exc = SingularityReached(f"constraint left its smooth domain near t = {ts[-1]:.17g}: {err}")
        exc.partial = _assemble(L, C, ts, rows, dt, td, m, n)
        raise exc from err
    except (SingularityReached, NonFinite, Degenerate) as err:
        err.partial = _assemble(L, C, ts, rows, dt, td, m, n)
        raise
    return _assemble(L, C, ts, rows, dt, td, m, n)


# -- monitor -----------------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorReport:
    max_lagrange: float
    max_theorem: float
    lagrange: np.ndarray    # interior samples x n
    theorem: np.ndarray

    @property
    def max_residual(self) -> float:
        return max(self.max_lagrange, self.max_theorem)


def monitor(traj: Trajectory, L: LagrangianField, C: ConstraintMap) -> MonitorReport:
    """Residuals along a trajectory with time derivatives from central differences.

    Momenta ``∂L/∂y`` (for the raw form) and ``∂L_c/∂ȳ`` (for the theorem
    form) are evaluated at every sample; their central differences replace
    the analytic total derivatives.  Only interior samples are reported.
    """
    if len(traj) < 3:
        raise ValueError("monitor needs at least 3 samples")
    s = traj.states
    dd: DirectDerivatives = direct_derivatives(L, C, s)
    w = dd.slots()
    d = point_data(L, C, s)
    lay = d.layout
    dt = traj.dt

    def ddt(P):
        return (P[2:] - P[:-2]) / (2 * dt)

    inner = slice(1, -1)
    E_leaf = ddt(dd.grad[:, w["y"]]) - dd.grad[inner, w["x"]]
    E_trans = ddt(dd.grad[:, w["yb"]]) - dd.grad[inner, w["xb"]]
    Cy = d.Cy[inner]
    eq = E_trans + np.einsum("kun,ku->kn", Cy, E_leaf)

    S = semispray(L, C, d)
    R = d.K + np.einsum("kunw,kw->kun", d.Ctensor, S) + d.time_term
    g = d.Lc_grad
    th = (ddt(g[:, lay.yb]) - g[inner, lay.xb] - np.einsum("kun,ku->kn", Cy, g[inner, lay.x])
          - np.einsum("ku,kun->kn", d.p_leaf[inner], R[inner]))
    return MonitorReport(float(np.max(np.abs(eq))), float(np.max(np.abs(th))), eq, th)
