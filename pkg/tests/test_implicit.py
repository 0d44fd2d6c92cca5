import numpy as np
import pytest

from nonholo import scenarios
from nonholo.errors import ConfigError, NoConvergence, SingularJacobian
from nonholo.implicit import (ImplicitKind, as_constraint_map, chetaev_residual, implicit_from_exprs,
                              lambda_combination, solve)
from nonholo.model import ChartDims, TransState, constraint_derivatives, lift_linear_expr


def rel_dev(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def test_appell_branches():
    pos = scenarios.appell_implicit()
    y, its = solve(pos, [0.0], [0.0, 0.0], [3.0, 4.0], return_iterations=True)
    assert y[0] == pytest.approx(5.0, rel=1e-15) and its <= 8
    neg = scenarios.appell_implicit(sign=-1)
    assert solve(neg, [0.0], [0.0, 0.0], [3.0, 4.0])[0] == pytest.approx(-5.0, rel=1e-15)


def test_appell_vertex_is_singular():
    with pytest.raises(SingularJacobian):
        solve(scenarios.appell_implicit(), [0.0], [0.0, 0.0], [0.0, 0.0])


def test_no_convergence_reported():
    ic = implicit_from_exprs(ImplicitKind.CON, ["y1^2 + 1"], ["1"], ChartDims(1, 1), {}, max_iter=6)
    with pytest.raises((NoConvergence, SingularJacobian)):
        solve(ic, [0.0], [0.0], [1.0])


def test_branch_count_mismatch():
    with pytest.raises(ConfigError):
        implicit_from_exprs(ImplicitKind.CON, ["y1 - yb1"], [], ChartDims(1, 1), {})


@pytest.mark.parametrize("which", ["appell", "benenti"])
def test_implicit_matches_closed_form(which):
    if which == "appell":
        sc = scenarios.build("appell_nonlinear", {"alpha": 0.8})
        ic = scenarios.appell_implicit({"alpha": 0.8})
    else:
        sc = scenarios.build("benenti")
        ic = scenarios.benenti_implicit()
    s = sc.sample_states(np.random.default_rng(4), 100)
    exp = constraint_derivatives(sc.C, s)
    imp = constraint_derivatives(as_constraint_map(ic), s)
    assert rel_dev(imp.value, exp.value) < 1e-10
    assert rel_dev(imp.jac, exp.jac) < 1e-8
    assert rel_dev(imp.hess, exp.hess) < 1e-8
    _, its = solve(ic, s.x_leaf, s.x_trans, s.y_trans, return_iterations=True)
    assert its <= 8


def test_linear_implicit_recovers_lift():
    dims = ChartDims(2, 2)
    coeffs = [["cos(xb2)", "x1"], ["0", "sin(xb1)"]]
    lin = lift_linear_expr(coeffs, dims, {})
    ic = implicit_from_exprs(ImplicitKind.CON,
                             ["y1 - cos(xb2)*yb1 - x1*yb2", "y2 - sin(xb1)*yb2"], ["0", "0"], dims, {})
    s = TransState([0.3, -0.2], [0.5, 1.1], [0.7, -1.4])
    a = constraint_derivatives(lin, s)
    b = constraint_derivatives(as_constraint_map(ic), s)
    np.testing.assert_allclose(b.value, a.value, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(b.jac, a.jac, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(b.hess, a.hess, rtol=1e-13, atol=1e-14)


def test_chetaev_appell_con_constraint():
    ic = scenarios.appell_implicit()
    C = as_constraint_map(ic)
    rng = np.random.default_rng(5)
    s = scenarios.build("appell_nonlinear").sample_states(rng, 100)
    lam = rng.normal(size=(100, 1))
    E_leaf, E_trans = lambda_combination(ic, s, lam)
    assert np.max(np.abs(chetaev_residual(C, E_leaf, E_trans, s))) <= 1e-12


def random_cov_constraint(seed=0):
    rng = np.random.default_rng(seed)
    p = {f"c{i}": float(rng.uniform(0.2, 0.6)) for i in range(6)}
    eqs = ["2*y1 + c0*y2 + c1*sin(y1) - yb1*cos(xb1) - c2*yb2^2",
           "c3*y1 + 2.5*y2 + c4*y2^3 - x1*yb2 - c5*exp(0.3*yb1)"]
    ic = implicit_from_exprs(ImplicitKind.COV, eqs, ["0.3*yb1", "0.3*yb2"], ChartDims(2, 2), p)
    return ic


def test_chetaev_random_cov_constraint():
    ic = random_cov_constraint()
    C = as_constraint_map(ic)
    rng = np.random.default_rng(6)
    s = TransState(rng.uniform(-0.5, 0.5, (100, 2)), rng.normal(size=(100, 2)), rng.uniform(-1, 1, (100, 2)))
    lam = rng.normal(size=(100, 2))
    E_leaf, E_trans = lambda_combination(ic, s, lam)
    assert np.max(np.abs(chetaev_residual(C, E_leaf, E_trans, s))) <= 1e-12


def test_chetaev_residual_detects_free_transverse_force():
    C = scenarios.build("appell_nonlinear").C
    s = TransState([0.0], [0.0, 0.0], [1.0, 2.0])
    res = chetaev_residual(C, np.zeros(1), np.array([0.5, -1.0]), s)
    np.testing.assert_array_equal(res, [0.5, -1.0])
