"""Built-in mechanical systems, the scenario file format and reference checks.

A scenario is described by a JSON-compatible dict::

    {"name": ..., "dims": {"m": .., "n": ..},
     "lagrangian": "<expr>",
     "constraint": {"kind": "nonlinear" | "linear" | "affine" | "implicit_con" | "implicit_cov",
                    "expressions": [...]            # nonlinear, implicit
                    "coefficients": [[...], ...],   # linear, affine (m rows of n)
                    "offset": [...],                # affine
                    "branch": [...],                # implicit: Newton starting values
                    "guard": {"expression": "<expr>", "min": 1e-8}},
     "parameters": {name: value},
     "initial": {"x_leaf": [..], "x_trans": [..], "y_trans": [..], "t": ..},
     "time": {"t0": .., "t1": .., "dt": ..}}

:func:`build` produces the six built-in systems from such dicts, so every
built-in can be exported and loaded back through the same path as a user file.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from . import expr as ex
from . import geometry, scalar
from .dynamics import (h_form, point_data, residual_eqlagc, semispray, offshell_rhs)
from .errors import ConfigError, Degenerate, DomainError, NonholoError
from .implicit import (ImplicitConstraint, ImplicitKind, as_constraint_map, chetaev_residual,
                       implicit_from_exprs, lambda_combination)
from .integrate import MonitorReport, Trajectory, monitor, simulate
from .model import (ChartDims, ConstraintKind, ConstraintMap, Jet, LagrangianField, TransState,
                    _bind, _parse_all, constraint_derivatives, constraint_from_exprs, lagrangian_from_expr,
                    lift_affine_expr, lift_linear_expr, split)

__all__ = [
    "CheckResult", "Scenario", "ScenarioReport", "BUILTINS", "DEFAULTS", "build", "names",
    "from_spec", "load", "export", "run_reference_checks", "invariant_checks",
    "random_system", "appell_implicit", "benenti_implicit", "MONITOR_TOL",
]

MONITOR_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    """One named check.  ``passed`` is ``None`` for informational entries."""

    name: str
    passed: Optional[bool]
    measured: float
    limit: str
    note: str = ""

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        extra = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name}: {self.measured:.3e} [{self.limit}]{extra}"


def _check(name, value, limit, note="", below=True) -> CheckResult:
    value = float(value)
    ok = bool(value < limit) if below else bool(value > limit)
    sign = "<" if below else ">"
    return CheckResult(name, bool(ok and np.isfinite(value)), value, f"{sign} {limit:g}", note)


Checker = Callable[["Scenario", Trajectory, MonitorReport], list]


@dataclass
class Scenario:
    name: str
    description: str
    dims: ChartDims
    L: LagrangianField
    C: ConstraintMap
    params: dict
    initial: TransState
    t0: float
    t_end: float
    dt: float
    spec: dict
    checks: list = field(default_factory=list)
    oracle: dict = field(default_factory=dict)
    paper_annotations: dict = field(default_factory=dict)
    sampler: Optional[Callable[[np.random.Generator, int], TransState]] = None
    implicit: Optional[ImplicitConstraint] = None

    @property
    def time_dependent(self) -> bool:
        return bool(self.L.time_dependent or self.C.time_dependent)

    def simulate(self, dt: Optional[float] = None, t_end: Optional[float] = None) -> Trajectory:
        init = self.initial
        if self.time_dependent and init.t is None:
            init = TransState(init.x_leaf, init.x_trans, init.y_trans, self.t0)
        return simulate(self.L, self.C, init, self.t_end if t_end is None else t_end,
                        self.dt if dt is None else dt, t0=self.t0)

    def sample_states(self, rng: np.random.Generator, size: int) -> TransState:
        if self.sampler is not None:
            return self.sampler(rng, size)
        m, n = self.dims.m, self.dims.n
        t = rng.uniform(self.t0, self.t_end, size) if self.time_dependent else None
        return TransState(rng.normal(size=(size, m)), rng.normal(size=(size, n)),
                          rng.normal(size=(size, n)), t)

    def export(self) -> dict:
        return copy.deepcopy(self.spec)


# -- file format ---------------------------------------------------------------------------


def _require(d: Mapping, key: str, where: str):
    if not isinstance(d, Mapping) or key not in d:
        raise ConfigError(f"{where}: missing field {key!r}")
    return d[key]


def _floats(v, n, where):
    try:
        a = np.asarray(v, dtype=float).reshape(-1)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: expected {n} numbers") from err
    if a.shape != (n,):
        raise ConfigError(f"{where}: expected {n} numbers, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{where}: values must be finite")
    return a


def _guard(spec, dims, params):
    if spec is None:
        return None
    src = _require(spec, "expression", "constraint.guard")
    lo = float(spec.get("min", 0.0))
    (tree,) = _parse_all([src], dims, params, False, "constraint guard", warn=False)
    fn = ex.compile_expr(tree)
    p = dict(params)

    def singular(s: TransState):
        env = _bind(p, dims, split(s.x_leaf, dims.m), split(s.x_trans, dims.n),
                    split(s.y_trans, dims.n), s.t)
        with np.errstate(all="ignore"):
            v = np.asarray(fn(env), dtype=float)
        return ~(v >= lo)

    return singular


def _constraint(spec: Mapping, dims: ChartDims, params: Mapping):
    kind_name = _require(spec, "kind", "constraint")
    try:
        kind = ConstraintKind(kind_name)
    except ValueError:
        raise ConfigError(f"constraint: unknown kind {kind_name!r}") from None
    implicit = None
    if kind is ConstraintKind.NONLINEAR:
        C = constraint_from_exprs(_require(spec, "expressions", "constraint"), dims, params)
    elif kind is ConstraintKind.LINEAR:
        C = lift_linear_expr(_require(spec, "coefficients", "constraint"), dims, params)
    elif kind is ConstraintKind.AFFINE:
        C = lift_affine_expr(_require(spec, "coefficients", "constraint"),
                             _require(spec, "offset", "constraint"), dims, params)
    else:
        ik = ImplicitKind.CON if kind is ConstraintKind.IMPLICIT_CON else ImplicitKind.COV
        implicit = implicit_from_exprs(ik, _require(spec, "expressions", "constraint"),
                                       _require(spec, "branch", "constraint"), dims, params,
                                       tol=float(spec.get("tol", 1e-12)),
                                       max_iter=int(spec.get("max_iter", 50)))
        C = as_constraint_map(implicit)
    C.singular = _guard(spec.get("guard"), dims, params)
    C.source = dict(spec)
    return C, implicit


def from_spec(spec: Mapping) -> Scenario:
    """Build a scenario (without reference checks) from a scenario dict."""
    if not isinstance(spec, Mapping):
        raise ConfigError("scenario must be a JSON object")
    dims_spec = _require(spec, "dims", "scenario")
    try:
        dims = ChartDims(int(_require(dims_spec, "m", "dims")), int(_require(dims_spec, "n", "dims")))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"dims: {err}") from err
    params = spec.get("parameters", {}) or {}
    if not isinstance(params, Mapping):
        raise ConfigError("parameters must be an object of name -> number")
    try:
        params = {str(k): float(v) for k, v in params.items()}
    except (TypeError, ValueError) as err:
        raise ConfigError(f"parameters: {err}") from err
    for k in params:
        if ex.is_variable_name(k):
            raise ConfigError(f"parameter name {k!r} collides with a coordinate name")
    L = lagrangian_from_expr(_require(spec, "lagrangian", "scenario"), dims, params)
    C, implicit = _constraint(_require(spec, "constraint", "scenario"), dims, params)
    if L.time_dependent or C.time_dependent:
        pass
    time = spec.get("time", {}) or {}
    t0 = float(time.get("t0", 0.0))
    t1 = float(time.get("t1", t0 + 1.0))
    dt = float(time.get("dt", 1e-3))
    if not dt > 0:
        raise ConfigError(f"time.dt must be positive, got {dt}")
    if not t1 > t0:
        raise ConfigError(f"time.t1 ({t1}) must exceed time.t0 ({t0})")
    init = _require(spec, "initial", "scenario")
    t_init = init.get("t", t0) if (L.time_dependent or C.time_dependent) else None
    initial = TransState(_floats(_require(init, "x_leaf", "initial"), dims.m, "initial.x_leaf"),
                         _floats(_require(init, "x_trans", "initial"), dims.n, "initial.x_trans"),
                         _floats(_require(init, "y_trans", "initial"), dims.n, "initial.y_trans"),
                         None if t_init is None else float(t_init))
    return Scenario(str(spec.get("name", "custom")), str(spec.get("description", "")), dims, L, C,
                    params, initial, t0, t1, dt, copy.deepcopy(dict(spec)), implicit=implicit)


def load(path) -> Scenario:
    """Load a scenario file; built-in checks are attached when it matches a built-in."""
    try:
        spec = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read scenario file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"scenario file {path} is not valid JSON: {err}") from err
    return scenario_from_dict(spec)


def scenario_from_dict(spec: Mapping) -> Scenario:
    sc = from_spec(spec)
    name = spec.get("name")
    if name in BUILTINS:
        try:
            ref = build(name, spec.get("parameters"))
        except ConfigError:
            return sc
        same = (ref.spec["lagrangian"] == spec.get("lagrangian")
                and ref.spec["constraint"] == spec.get("constraint")
                and ref.spec["dims"] == spec.get("dims"))
        if same:
            sc.checks, sc.oracle = ref.checks, ref.oracle
            sc.paper_annotations, sc.sampler = ref.paper_annotations, ref.sampler
            sc.description = ref.description
    return sc


def export(sc: Scenario, path=None) -> dict:
    spec = sc.export()
    if path is not None:
        Path(path).write_text(json.dumps(spec, indent=2) + "\n")
    return spec


# -- shared check helpers --------------------------------------------------------------------


def _linear_fit_residual(t, v):
    A = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(np.max(np.abs(A @ coef - v))), float(coef[0])


def _monitor_checks(sc, traj, mon):
    return [_check("monitor: max constrained Lagrange residual", mon.max_lagrange, MONITOR_TOL),
            _check("monitor: max theorem-form residual", mon.max_theorem, MONITOR_TOL)]


def _radial_checks(sc, traj, rate, rate_name):
    yb = traj.y_trans
    ang = np.unwrap(np.arctan2(yb[:, 1], yb[:, 0]))
    rho = np.hypot(yb[:, 0], yb[:, 1])
    fit, slope = _linear_fit_residual(traj.t, rho)
    u = yb[0] / np.linalg.norm(yb[0])
    d = traj.x_trans - traj.x_trans[0]
    off_line = np.abs(d[:, 0] * u[1] - d[:, 1] * u[0])
    return [
        _check("polar angle drift of y_trans", np.max(np.abs(ang - ang[0])), 1e-8),
        _check("|y_trans| linear-fit residual", fit, 1e-6),
        _check(f"d|y_trans|/dt vs {rate_name}", abs(slope - rate), 1e-6,
               f"measured {slope:.12g}, oracle {rate:.12g}"),
        _check("transverse path straightness", np.max(off_line), 1e-8),
    ]


# -- built-in scenarios --------------------------------------------------------------------------

DEFAULTS: dict[str, dict[str, float]] = {
    "appell_linear": {"R": 2.0, "r": 1.0, "alpha": 1.0, "beta": 1.0, "I1": 1.0, "I2": 1.0,
                      "gamma": 1.0},
    "appell_nonlinear": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0},
    "appell_hammel": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0, "v00": 0.0,
                      "a0": 0.5, "b0": 0.0, "w0": 3.0},
    "benenti": {"alpha": 1.0, "beta": 2.0, "f": 0.0},
    "marle": {"mass": 1.0, "l": 1.0, "J": 2.0, "g": 1.0, "k": 0.5, "c": 0.0},
    "riemannian_flow": {"s": 0.25, "g0": 1.0, "c1": 1.0, "c2": 0.5, "d1": 0.0, "d2": 0.0,
                        "t0": 1.0, "curved": 0.0},
}

DESCRIPTIONS = {
    "appell_linear": "Appell machine with linear rolling constraints (m=3, n=2)",
    "appell_nonlinear": "Appell-type cone constraint y1 = alpha*|y_trans| (m=1, n=2)",
    "appell_hammel": "Appell-Hammel system in an elevator, time-dependent cone constraint (m=1, n=2)",
    "benenti": "Benenti mechanism, constraint y1*yb3 = yb1*yb2 (m=1, n=3)",
    "marle": "Marle servomechanism, y1 = f(x1, xb1, yb1) (m=1, n=1)",
    "riemannian_flow": "Riemannian flow with a kinetic-energy constraint L0 = phi(t)/2 (m=1, n=2)",
}


def names() -> list[str]:
    return list(DEFAULTS)


def _merge(name, params):
    defaults = DEFAULTS[name]
    p = dict(defaults)
    for k, v in (params or {}).items():
        if k not in defaults:
            raise ConfigError(f"{name}: unknown parameter {k!r} (known: {', '.join(defaults)})")
        try:
            p[k] = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: parameter {k!r} must be a number, got {v!r}") from None
        if not math.isfinite(p[k]):
            raise ConfigError(f"{name}: parameter {k!r} must be finite")
    return p


def _spec(name, dims, lagrangian, constraint, params, initial, time):
    return {"name": name, "description": DESCRIPTIONS[name], "dims": {"m": dims[0], "n": dims[1]},
            "lagrangian": lagrangian, "constraint": constraint, "parameters": dict(params),
            "initial": initial, "time": time}


def _cone_sampler(time_range=None):
    def sample(rng, size):
        rho = rng.uniform(0.3, 2.0, size)
        phi = rng.uniform(-np.pi, np.pi, size)
        yb = np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=1)
        t = None if time_range is None else rng.uniform(*time_range, size)
        return TransState(rng.normal(size=(size, 1)), rng.normal(size=(size, 2)), yb, t)
    return sample


_CONE_GUARD = {"expression": "sqrt(yb1^2 + yb2^2)", "min": 1e-8}


def _appell_linear(p):
    if p["R"] == 0 or p["r"] == 0:
        raise ConfigError("appell_linear: R and r must be nonzero")
    a2 = p["I1"] + p["alpha"] * p["R"] ** 2 + p["beta"] * p["r"] ** 2
    if a2 == 0 or p["I2"] == 0:
        raise ConfigError("appell_linear: I1 + alpha R^2 + beta r^2 and I2 must be nonzero")
    spec = _spec(
        "appell_linear", (3, 2),
        "0.5*alpha*(y1^2 + y2^2) + 0.5*beta*y3^2 + 0.5*I1*yb1^2 + 0.5*I2*yb2^2 + gamma*x3",
        {"kind": "linear", "coefficients": [["R*cos(xb2)", "0"], ["R*sin(xb2)", "0"], ["r", "0"]]},
        p, {"x_leaf": [0.0, 0.0, 0.0], "x_trans": [0.0, 0.0], "y_trans": [1.0, 0.5]},
        {"t0": 0.0, "t1": 1.0, "dt": 1e-4})
    slope = p["r"] * p["gamma"] / a2

    def checks(sc, traj, mon):
        fit, measured = _linear_fit_residual(traj.t, traj.y_trans[:, 0])
        rng = np.random.default_rng(7)
        xb2 = rng.uniform(-np.pi, np.pi, 100)
        s = TransState(np.zeros((100, 3)), np.stack([np.zeros(100), xb2], 1), np.zeros((100, 2)))
        B = geometry.curvature_B(sc.C, s)
        R = sc.params["R"]
        ref = np.zeros((100, 3))
        ref[:, 0], ref[:, 1] = -R * np.sin(xb2), R * np.cos(xb2)
        return [
            _check("y_trans[2] constant", np.max(np.abs(traj.y_trans[:, 1] - traj.y_trans[0, 1])), 1e-10),
            _check("y_trans[1] linear-fit residual", fit, 1e-6),
            _check("dy_trans[1]/dt vs r*gamma/alpha''", abs(measured - slope), 1e-6,
                   f"measured {measured:.12g}, oracle {slope:.12g}"),
            _check("curvature B vs closed form", np.max(np.abs(B[:, :, 0, 1] - ref)), 1e-12),
            _check("curvature B antisymmetry", np.max(np.abs(B + np.swapaxes(B, -1, -2))), 1e-300),
        ]

    def sample(rng, size):
        return TransState(rng.uniform(-2, 2, (size, 3)), rng.uniform(-np.pi, np.pi, (size, 2)),
                          rng.normal(size=(size, 2)))

    return spec, [checks], {"slope_y1": slope}, {
        "dy1/dt": f"displayed -alpha''*r = {-a2 * p['r']:.12g}; oracle r*gamma/alpha'' = {slope:.12g}"}, sample


def _appell_nonlinear(p):
    if p["alpha"] == 0:
        raise ConfigError("appell_nonlinear: alpha must be nonzero")
    spec = _spec(
        "appell_nonlinear", (1, 2),
        "beta/2*(yb1^2 + yb2^2) + gamma/2*y1^2 + delta*x1",
        {"kind": "nonlinear", "expressions": ["alpha*sqrt(yb1^2 + yb2^2)"], "guard": _CONE_GUARD},
        p, {"x_leaf": [0.0], "x_trans": [0.0, 0.0], "y_trans": [1.0, 0.5]},
        {"t0": 0.0, "t1": 1.0, "dt": 1e-4})
    den = p["alpha"] ** 2 * p["gamma"] + p["beta"]
    kappa = p["alpha"] * p["delta"] / den if den != 0 else float("nan")
    alpha_prime = -p["alpha"] / (2 * den) if den != 0 else float("nan")

    def checks(sc, traj, mon):
        return _radial_checks(sc, traj, kappa, "kappa = alpha*delta/(alpha^2*gamma + beta)")

    return spec, [checks], {"kappa": kappa}, {
        "kappa": f"displayed alpha' = -alpha/(2(gamma alpha^2 + beta)) = {alpha_prime:.12g}; "
                 f"oracle kappa = {kappa:.12g}"}, _cone_sampler()


def _appell_hammel(p):
    if p["alpha"] == 0:
        raise ConfigError("appell_hammel: alpha must be nonzero")
    spec = _spec(
        "appell_hammel", (1, 2),
        "beta/2*(yb1^2 + yb2^2) + gamma/2*y1^2 + delta*x1",
        {"kind": "nonlinear",
         "expressions": ["v00 + a0*t + b0*sin(w0*t) + alpha*sqrt(yb1^2 + yb2^2)"],
         "guard": _CONE_GUARD},
        p, {"x_leaf": [0.0], "x_trans": [0.0, 0.0], "y_trans": [1.0, 0.5], "t": 0.0},
        {"t0": 0.0, "t1": 1.0, "dt": 1e-4})
    den = p["alpha"] ** 2 * p["gamma"] + p["beta"]
    rate = p["alpha"] * (p["delta"] - p["gamma"] * p["a0"]) / den if den != 0 else float("nan")

    def checks(sc, traj, mon):
        speed = np.hypot(traj.y_trans[:, 0], traj.y_trans[:, 1])
        fit, slope = _linear_fit_residual(traj.t, speed)
        out = [_check("forms agree: |Lagrange - theorem| along path",
                      np.max(np.abs(mon.lagrange - mon.theorem)), 1e-6)]
        if sc.params["b0"] == 0:
            out += [_check("planar speed linear-fit residual", fit, 1e-6),
                    _check("d(speed)/dt vs alpha(delta - gamma dv0)/(alpha^2 gamma + beta)",
                           abs(slope - rate), 1e-6, f"measured {slope:.12g}, oracle {rate:.12g}")]
        else:
            out.append(CheckResult("planar speed linear-fit residual", None, fit, "n/a",
                                   "v0 has non-constant derivative"))
        return out

    return spec, [checks], {"speed_rate": rate}, {
        "speed_rate": f"displayed alpha*delta + gamma*dv0/dt = "
                      f"{p['alpha'] * p['delta'] + p['gamma'] * p['a0']:.12g}; oracle {rate:.12g}"}, \
        _cone_sampler((0.0, 2.0))


def benenti_displayed_hinv(alpha, beta, yb):
    """The inverse of ``h`` as displayed for the Benenti example (annotation only)."""
    y1, y2, y3 = yb
    ab = alpha * beta
    h11 = -(y1 ** 2 * (y1 ** 2 * ab + y1 ** 2 * beta ** 2 + y2 ** 2 * alpha ** 2 + y2 ** 2 * ab
                       + y3 ** 2 * ab)) / ((y2 * y3) ** 2 * ab * (alpha + beta))
    h12 = -y1 / (y2 * (alpha + beta))
    h13 = -y1 / (y3 * beta)
    return np.array([[h11, h12, h13], [h12, -1 / (alpha + beta), 0.0], [h13, 0.0, -1 / beta]])


def _benenti(p):
    spec = _spec(
        "benenti", (1, 3),
        "alpha/2*(y1^2 + yb1^2) + beta/2*(yb2^2 + yb3^2) + f*(cos(x1) + xb1*xb2 - 0.5*xb3^2)",
        {"kind": "nonlinear", "expressions": ["yb1*yb2/yb3"],
         "guard": {"expression": "yb3^2", "min": 1e-16}},
        p, {"x_leaf": [0.0], "x_trans": [0.0, 0.0, 0.0], "y_trans": [1.0, 0.5, 1.0]},
        {"t0": 0.0, "t1": 1.0, "dt": 1e-4})

    def sample(rng, size):
        yb = rng.normal(size=(size, 3))
        yb[:, 2] = rng.choice([-1.0, 1.0], size) * rng.uniform(0.5, 2.0, size)
        return TransState(rng.normal(size=(size, 1)), rng.normal(size=(size, 3)), yb)

    def checks(sc, traj, mon):
        out = []
        if sc.params["f"] == 0:
            S = semispray(sc.L, sc.C, sample(np.random.default_rng(11), 1000))
            out.append(_check("semispray identically zero (1000 states)", np.max(np.abs(S)), 1e-300))
            d = traj.x_trans - traj.x_trans[0]
            u = traj.y_trans[0] / np.linalg.norm(traj.y_trans[0])
            off = np.linalg.norm(d - np.outer(d @ u, u), axis=1)
            out.append(_check("straight transverse path", np.max(off), 1e-10))
        hinv = h_form(sc.L, sc.C, sc.initial).h_inv
        shown = benenti_displayed_hinv(sc.params["alpha"], sc.params["beta"], sc.initial.y_trans)
        out.append(CheckResult("h inverse vs displayed matrix (diagnostic)", None,
                               float(np.max(np.abs(hinv - shown))), "annotation only"))
        return out

    return spec, [checks], {}, {
        "h_inverse": "the displayed h^{uv} matrix and F components do not match direct evaluation; "
                     "see the diagnostic entry"}, sample


def _marle(p):
    if p["J"] <= p["mass"] * p["l"] ** 2:
        raise ConfigError("marle: need J > mass*l^2 for a regular Lagrangian")
    spec = _spec(
        "marle", (1, 1),
        "mass/2*(y1^2 - 2*l*y1*yb1*sin(xb1)) + J/2*yb1^2 - mass*g*l*sin(xb1)",
        {"kind": "nonlinear", "expressions": ["0.5*k*yb1^2 + c*sin(xb1)"]},
        p, {"x_leaf": [0.0], "x_trans": [0.3], "y_trans": [0.5]},
        {"t0": 0.0, "t1": 1.0, "dt": 1e-4})

    def sample(rng, size):
        return TransState(rng.normal(size=(size, 1)), rng.uniform(-np.pi, np.pi, (size, 1)),
                          rng.normal(size=(size, 1)))

    def checks(sc, traj, mon):
        s = sample(np.random.default_rng(5), 200)
        Ct = geometry.nonlinearity_tensor(sc.C, s)[:, 0, 0, 0]
        out = [_check("C-tensor equals d2f/dyb1^2 = k", np.max(np.abs(Ct - sc.params["k"])), 1e-12)]
        if sc.params["c"] == 0:
            K = geometry.pseudo_curvature_K(sc.C, s)
            out.append(_check("pseudo-curvature K = 0 for f = f(yb1)", np.max(np.abs(K)), 1e-300))
            if sc.params["k"] != 0:
                out.append(_check("C-tensor nonzero", np.min(np.abs(Ct)), 0.0, below=False))
        return out

    return spec, [checks], {}, {}, sample


def _riemannian_flow(p):
    t0 = p["t0"]
    if t0 <= 0:
        raise ConfigError("riemannian_flow: t0 must be positive (phi = 1/t)")
    if p["s"] <= 0 or p["g0"] == 0:
        raise ConfigError("riemannian_flow: need s > 0 and g0 != 0")
    curved = p["curved"] != 0
    c = np.array([p["c1"], p["c2"]])
    d = np.array([p["d1"], p["d2"]])
    if p["s"] * float(c @ c) >= 1.0:
        raise ConfigError("riemannian_flow: need s*|c|^2 < 1 so that the leaf speed is real")
    if curved:
        g0 = "(g0 + 0.1*sin(xb1))"
        metric = "s*(1 + 0.2*cos(xb2))"
    else:
        g0, metric = "g0", "s"
    lag = f"0.5*{g0}^2*y1^2 + 0.5*{metric}*(yb1^2 + yb2^2)"
    con = f"sqrt(1/t - {metric}*(yb1^2 + yb2^2))/{g0}"
    xb0 = c * 2 * math.sqrt(t0) + d
    yb0 = c / math.sqrt(t0)
    spec = _spec("riemannian_flow", (1, 2), lag, {"kind": "nonlinear", "expressions": [con]}, p,
                 {"x_leaf": [0.0], "x_trans": xb0.tolist(), "y_trans": yb0.tolist(), "t": t0},
                 {"t0": t0, "t1": 4.0, "dt": 1e-4})

    def sample(rng, size):
        t = rng.uniform(t0, 4.0, size)
        r = np.sqrt(rng.uniform(0.05, 0.8, size) / (t * p["s"] * (1.3 if curved else 1.0)))
        a = rng.uniform(-np.pi, np.pi, size)
        yb = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        return TransState(rng.normal(size=(size, 1)), rng.normal(size=(size, 2)), yb, t)

    def checks(sc, traj, mon):
        if curved:
            return []
        ref = np.outer(2 * np.sqrt(traj.t), c) + d
        return [_check("x_trans(t) vs c*2*sqrt(t) + d", np.max(np.abs(traj.x_trans - ref)), 1e-6),
                _check("y_trans(t) vs c*sqrt(phi(t))",
                       np.max(np.abs(traj.y_trans - np.outer(1 / np.sqrt(traj.t), c))), 1e-6)]

    return spec, [checks], {}, {}, sample


_BUILDERS = {
    "appell_linear": _appell_linear,
    "appell_nonlinear": _appell_nonlinear,
    "appell_hammel": _appell_hammel,
    "benenti": _benenti,
    "marle": _marle,
    "riemannian_flow": _riemannian_flow,
}
BUILTINS = tuple(_BUILDERS)


def build(name: str, params: Optional[Mapping[str, float]] = None) -> Scenario:
    """Construct a built-in scenario with optional parameter overrides."""
    if name not in _BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; built-ins: {', '.join(BUILTINS)}")
    p = _merge(name, params)
    spec, checks, oracle, annotations, sampler = _BUILDERS[name](p)
    sc = from_spec(spec)
    sc.checks, sc.oracle, sc.paper_annotations, sc.sampler = checks, oracle, annotations, sampler
    sc.description = DESCRIPTIONS[name]
    return sc


# -- implicit variants ---------------------------------------------------------------------------


def appell_implicit(params: Optional[Mapping[str, float]] = None, sign: float = 1.0) -> ImplicitConstraint:
    """Appell cone as a con-constraint ``alpha^2 |y_trans|^2 - y1^2 = 0``."""
    p = _merge("appell_nonlinear", params)
    branch = "1.05*alpha*sqrt(yb1^2 + yb2^2)" if sign > 0 else "-1.05*alpha*sqrt(yb1^2 + yb2^2)"
    return implicit_from_exprs(ImplicitKind.CON, ["alpha^2*(yb1^2 + yb2^2) - y1^2"], [branch],
                               ChartDims(1, 2), p)


def benenti_implicit(params: Optional[Mapping[str, float]] = None) -> ImplicitConstraint:
    """Benenti constraint ``y1*yb3 - yb1*yb2 = 0`` solved for ``y1``."""
    p = _merge("benenti", params)
    return implicit_from_exprs(ImplicitKind.CON, ["y1*yb3 - yb1*yb2"], ["1.05*yb1*yb2/yb3 + 0.01"],
                               ChartDims(1, 3), p)


# -- running checks ---------------------------------------------------------------------------------


@dataclass
class ScenarioReport:
    scenario: str
    checks: list
    trajectory: Optional[Trajectory] = None
    monitor: Optional[MonitorReport] = None
    annotations: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)


def run_reference_checks(sc: Scenario, dt: Optional[float] = None,
                         t_end: Optional[float] = None) -> ScenarioReport:
    """Simulate, monitor and evaluate the scenario's predicates.

    Failures (including a failed simulation) become report entries.
    """
    dt = sc.dt if dt is None else dt
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    try:
        traj = sc.simulate(dt=dt, t_end=t_end)
    except NonholoError as err:
        return ScenarioReport(sc.name, [CheckResult("simulate", False, float("nan"), "completes",
                                                    f"{type(err).__name__}: {err}")],
                              annotations=dict(sc.paper_annotations))
    mon = monitor(traj, sc.L, sc.C)
    results = _monitor_checks(sc, traj, mon)
    for chk in sc.checks:
        try:
            results.extend(chk(sc, traj, mon))
        except NonholoError as err:
            results.append(CheckResult(getattr(chk, "__name__", "check"), False, float("nan"), "runs",
                                       f"{type(err).__name__}: {err}"))
    return ScenarioReport(sc.name, results, traj, mon, dict(sc.paper_annotations))


# -- global invariant suites --------------------------------------------------------------------------


def _rel_dev(a, b) -> float:
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def offshell_deviation(L, C, states: TransState, a, chetaev_sign: float = 1.0) -> float:
    """Max relative deviation between ``residual_eqlagc`` and ``-h·a + F - p·K``."""
    j = Jet(states, a)
    return _rel_dev(residual_eqlagc(L, C, j, chetaev_sign=chetaev_sign), offshell_rhs(L, C, j))


def _fd_gradient(f, z, h):
    n = z.shape[-1]
    g = np.empty(z.shape)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        g[..., i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def ad_fd_deviation(fn: Callable, z: np.ndarray, h: float = 1e-5) -> tuple[float, float]:
    """Relative deviation of AD gradient and Hessian from central differences.

    ``fn`` maps a list of scalars to one scalar.  The Hessian is compared with
    central differences of the AD gradient.
    """
    def value(zz):
        return scalar.value_of(fn(list(np.moveaxis(zz, -1, 0))))

    def ad(zz):
        jets = scalar.seed(zz)
        out = fn(jets)
        nv = zz.shape[-1]
        if not isinstance(out, scalar.Jet2):
            out = scalar.constant(out, nv)
        b = zz.shape[:-1]
        return np.broadcast_to(out.grad, b + (nv,)), np.broadcast_to(out.hess, b + (nv, nv))

    g, H = ad(z)
    g_fd = _fd_gradient(value, z, h)
    n = z.shape[-1]
    H_fd = np.empty(H.shape)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H_fd[..., :, i] = (ad(z + e)[0] - ad(z - e)[0]) / (2 * h)
    return _rel_dev(g, g_fd), _rel_dev(H, H_fd)


def _flat_state(s: TransState, time: bool) -> np.ndarray:
    parts = [s.x_leaf, s.x_trans, s.y_trans]
    if time:
        parts.append(s.t[..., None])
    return np.concatenate(parts, axis=-1)


def model_functions(sc: Scenario):
    """Scalar functions of flat argument lists for the AD-vs-FD suite."""
    m, n = sc.dims.m, sc.dims.n
    time = sc.time_dependent

    def unpack(z):
        x, xb, yb = z[:m], z[m:m + n], z[m + n:m + 2 * n]
        return x, xb, yb, (z[m + 2 * n] if time else None)

    def L_fn(z):  # arguments: x, xb, y, yb[, t]
        x, xb, y, yb = z[:m], z[m:m + n], z[m + n:2 * m + n], z[2 * m + n:2 * m + 2 * n]
        return sc.L(x, xb, y, yb, z[2 * m + 2 * n] if time else None)

    fns = [("L", L_fn)]
    for u in range(m):
        fns.append((f"C{u + 1}", lambda z, u=u: sc.C(*unpack(z))[u]))
    return fns


def _L_points(sc, s: TransState):
    y = sc.C.at(s)
    parts = [s.x_leaf, s.x_trans, y, s.y_trans]
    if sc.time_dependent:
        parts.append(s.t[:, None])
    return np.concatenate(parts, axis=-1)


def invariant_checks(sc: Scenario, seed: int = 0, samples: int = 200,
                     chetaev_sign: float = 1.0) -> list[CheckResult]:
    """Off-shell identity, AD-vs-FD and Chetaev identity on random states of ``sc``."""
    rng = np.random.default_rng(seed)
    s = sc.sample_states(rng, samples)
    a = rng.normal(size=(samples, sc.dims.n))
    out = [_check("off-shell identity (relative)", offshell_deviation(sc.L, sc.C, s, a, chetaev_sign), 1e-9)]

    worst_g = worst_h = 0.0
    z_C = _flat_state(s, sc.time_dependent)
    z_L = _L_points(sc, s)
    for label, fn in model_functions(sc):
        dg, dh = ad_fd_deviation(fn, z_L if label == "L" else z_C)
        worst_g, worst_h = max(worst_g, dg), max(worst_h, dh)
    out.append(_check("AD gradient vs central differences", worst_g, 1e-6))
    out.append(_check("AD Hessian vs central differences", worst_h, 1e-6))

    # Chetaev identity for the constraint written as G = y_leaf - C(x, y_trans)
    m = sc.dims.m
    lam = rng.normal(size=(samples, m))
    d = constraint_derivatives(sc.C, s)
    Cy = d.jac[..., d.layout.yb]
    E_leaf, E_trans = lam, -np.einsum("kun,ku->kn", Cy, lam)
    res = chetaev_residual(sc.C, chetaev_sign * E_leaf, E_trans, s)
    out.append(_check("Chetaev identity for lambda-combinations", np.max(np.abs(res)), 1e-12))
    if sc.implicit is not None:
        E_leaf, E_trans = lambda_combination(sc.implicit, s, lam)
        res = chetaev_residual(sc.C, chetaev_sign * E_leaf, E_trans, s)
        out.append(_check("Chetaev identity (implicit constraint)", np.max(np.abs(res)), 1e-12))
    return out


# -- randomized smooth systems ---------------------------------------------------------------------

_RANDOM_SYSTEMS = [
    # (m, n, lagrangian, constraint expressions, kind, coefficient count)
    (1, 1,
     "0.5*(2 + p1)*y1^2 + 0.5*(2 + p2)*yb1^2 + p3*y1*yb1*cos(x1) + p4*sin(xb1)*x1",
     ["p5*sin(xb1)*yb1 + p6*yb1^2*exp(0.3*x1) + p7*cos(x1)"]),
    (2, 2,
     "0.5*((2 + p1)*y1^2 + (2 + p2)*y2^2 + yb1^2 + yb2^2) + p3*y1*yb2 + p4*x1*xb2 + p5*cos(x2)*y2*yb1",
     ["p6*yb1*cos(xb2) + p7*sqrt(1 + yb1^2 + yb2^2)*x2", "p8*yb1*yb2 + p9*sin(x1)*yb2 + p10*xb1"]),
    (1, 2,
     "0.5*(2 + 0.1*sin(t))*y1^2 + 0.5*(yb1^2 + yb2^2) + p1*t*x1 + p2*y1*yb1 + p3*xb1*xb2",
     ["p4*sin(t)*yb1 + p5*sqrt(1 + yb1^2 + yb2^2)*(1 + 0.2*x1) + p6*t*xb2 + p7*yb2*xb1"]),
    (2, 3,
     "0.5*(y1^2 + y2^2 + yb1^2 + yb2^2 + yb3^2) + p1*y1*yb3*sin(xb2) + p2*x2*y2 + p3*exp(0.2*xb1)",
     ["p4*cos(xb1)*yb1 + p5*x2*yb2 + p6*sin(xb3) + p7*yb3^2*xb2",
      "p8*xb2*yb3 + p9*x1*yb1 + 0.5*p10*x1^2 + p1*yb1*yb2"]),
]


def random_system(index: int, seed: int = 0):
    """One of four randomized smooth ``(L, C)`` pairs with random coefficients."""
    m, n, lag, cons = _RANDOM_SYSTEMS[index % len(_RANDOM_SYSTEMS)]
    rng = np.random.default_rng(seed * 101 + index)
    params = {f"p{i}": float(rng.choice([-1, 1]) * rng.uniform(0.3, 1.0)) for i in range(1, 11)}
    dims = ChartDims(m, n)
    L = lagrangian_from_expr(lag, dims, params)
    C = constraint_from_exprs(cons, dims, params)
    return L, C
