import math

import numpy as np
import pytest

from nonholo import scenarios
from nonholo.errors import ConfigError, DomainError
from nonholo.geometry import nonlinearity_tensor
from nonholo.model import (ChartDims, ConstraintKind, ConstraintMap, TransState, constrained_lagrangian,
                           constraint_from_exprs, constraint_velocity, lagrangian_from_expr, legendre,
                           lift_affine, lift_affine_expr, lift_linear, lift_linear_expr, validate_kind)

D11 = ChartDims(1, 1)


def test_chart_dims_validated():
    with pytest.raises(ConfigError):
        ChartDims(0, 2)
    with pytest.raises(ConfigError):
        ChartDims(1, 0)


def test_trans_state_shape_check():
    s = TransState([0.0], [1.0, 2.0], [3.0, 4.0])
    s.check(ChartDims(1, 2))
    with pytest.raises(ConfigError):
        s.check(ChartDims(2, 2))
    with pytest.raises(ConfigError):
        s.check(ChartDims(1, 2), time_dependent=True)


def appell_linear_C(R=2.0, r=1.0):
    return lift_linear_expr([["R*cos(xb2)", "0"], ["R*sin(xb2)", "0"], ["r", "0"]], ChartDims(3, 2),
                            {"R": R, "r": r})


def test_lift_linear_appell_coefficients():
    C = appell_linear_C()
    s = TransState(np.zeros(3), [0.0, 0.0], [1.0, 0.0])
    assert C.at(s).tolist() == [2.0, 0.0, 1.0]
    assert C.kind is ConstraintKind.LINEAR


def test_lift_linear_zero_and_scaling():
    zero = lift_linear(lambda x, xb, t: [[0.0, 0.0]], ChartDims(1, 2))
    s = TransState([0.3], [0.1, 0.2], [1.5, -2.0])
    assert zero.at(s).tolist() == [0.0]
    C = appell_linear_C()
    s2 = TransState(s.x_leaf.repeat(3), s.x_trans, 2 * s.y_trans)
    np.testing.assert_allclose(C.at(s2), 2 * C.at(TransState(s.x_leaf.repeat(3), s.x_trans, s.y_trans)))


def test_lift_affine_cases():
    dims = ChartDims(1, 2)
    coeffs = lambda x, xb, t: [[xb[0], 2.0]]
    lin = lift_linear(coeffs, dims)
    aff0 = lift_affine(coeffs, lambda x, xb, t: [0.0], dims)
    s = TransState([0.5], [0.7, -1.0], [1.0, 2.0])
    np.testing.assert_array_equal(lin.at(s), aff0.at(s))
    aff = lift_affine(coeffs, lambda x, xb, t: [x[0] * 3], dims)
    assert aff.at(TransState([0.5], [0.7, -1.0], [0.0, 0.0])).tolist() == [1.5]
    const = lift_affine(lambda x, xb, t: [[0.0, 0.0]], lambda x, xb, t: [4.0], dims)
    assert const.at(s).tolist() == [4.0]
    assert aff.kind is ConstraintKind.AFFINE


def test_constraint_velocity_examples():
    C = scenarios.build("appell_nonlinear").C
    assert constraint_velocity(C, TransState([0.0], [0.0, 0.0], [3.0, 4.0])).tolist() == [5.0, 3.0, 4.0]
    zero = constraint_from_exprs(["0"], ChartDims(1, 2), {})
    assert constraint_velocity(zero, TransState([0.0], [0.0, 0.0], [3.0, 4.0])).tolist() == [0.0, 3.0, 4.0]
    B = scenarios.build("benenti").C
    assert constraint_velocity(B, TransState([0.0], [0.0] * 3, [1.0] * 3)).tolist() == [1.0] * 4


def test_constrained_lagrangian_appell():
    sc = scenarios.build("appell_nonlinear", {"alpha": 1.3, "beta": 0.7, "gamma": 2.0, "delta": 0.4})
    Lc = constrained_lagrangian(sc.L, sc.C)
    rng = np.random.default_rng(1)
    s = sc.sample_states(rng, 50)
    a, b, g, d = 1.3, 0.7, 2.0, 0.4
    expected = (b + a * a * g) / 2 * np.sum(s.y_trans ** 2, axis=1) + d * s.x_leaf[:, 0]
    np.testing.assert_allclose(Lc.at(s), expected, rtol=1e-14)


def test_constrained_lagrangian_ignores_C_when_L_has_no_leaf_velocity():
    dims = ChartDims(1, 1)
    L = lagrangian_from_expr("0.5*yb1^2 + x1", dims, {})
    C = constraint_from_exprs(["sin(yb1)"], dims, {})
    s = TransState([2.0], [0.0], [3.0])
    assert constrained_lagrangian(L, C).at(s) == pytest.approx(6.5)


def test_constrained_lagrangian_riemannian_is_phi_over_two():
    sc = scenarios.build("riemannian_flow")
    s = sc.sample_states(np.random.default_rng(2), 100)
    np.testing.assert_allclose(constrained_lagrangian(sc.L, sc.C).at(s), 0.5 / s.t, rtol=1e-13)


def test_constrained_lagrangian_matches_substitution(rng):
    L, C = scenarios.random_system(1, 4)
    s = TransState(rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2)))
    Lc = constrained_lagrangian(L, C).at(s)
    y = C.at(s)
    direct = L(list(s.x_leaf.T), list(s.x_trans.T), list(y.T), list(s.y_trans.T))
    np.testing.assert_allclose(Lc, direct, rtol=1e-15, atol=1e-15)


def test_legendre_examples():
    dims = ChartDims(1, 2)
    L = lagrangian_from_expr("0.5*(y1^2 + yb1^2 + yb2^2)", dims, {})
    C = constraint_from_exprs(["0"], dims, {})
    p = legendre(L, C, TransState([0.0], [0.0, 0.0], [1.0, 2.0]))
    assert p.p_leaf.tolist() == [0.0] and p.p_trans.tolist() == [1.0, 2.0]

    sc = scenarios.build("appell_nonlinear", {"gamma": 2.0})
    p = legendre(sc.L, sc.C, TransState([0.0], [0.0, 0.0], [3.0, 4.0]))
    assert p.p_leaf[0] == pytest.approx(10.0)

    Lx = lagrangian_from_expr("x1^2 + cos(xb1)", dims, {})
    p = legendre(Lx, sc.C, TransState([0.0], [0.0, 0.0], [3.0, 4.0]))
    assert not p.p_leaf.any() and not p.p_trans.any()


def test_validate_kind():
    assert validate_kind(appell_linear_C(), samples=10)
    cone = scenarios.build("appell_nonlinear").C
    mislabeled = ConstraintMap(ConstraintKind.LINEAR, cone.func, cone.dims)
    rep = validate_kind(mislabeled, samples=5)
    assert not rep and any("additive" in v for _, v in rep.violations)
    # C(e1) + C(e2) = 2 but C(e1 + e2) = sqrt(2)
    e = lambda v: mislabeled.at(TransState([0.0], [0.0, 0.0], v))[0]
    assert e([1.0, 0.0]) + e([0.0, 1.0]) == 2 and e([1.0, 1.0]) == pytest.approx(math.sqrt(2))

    aff = lift_affine_expr([["1", "0"]], ["1 + x1^2"], ChartDims(1, 2), {})
    assert validate_kind(aff, samples=5)
    bad = ConstraintMap(ConstraintKind.LINEAR, aff.func, aff.dims)
    rep = validate_kind(bad, samples=5)
    assert not rep and any("y_trans = 0" in v for _, v in rep.violations)


@pytest.mark.parametrize("name", scenarios.BUILTINS)
def test_C_tensor_vanishes_iff_linear_or_affine(name):
    sc = scenarios.build(name)
    s = sc.sample_states(np.random.default_rng(3), 50)
    Ct = nonlinearity_tensor(sc.C, s)
    if sc.C.is_linear_or_affine:
        assert not Ct.any()
    else:
        assert np.max(np.abs(Ct)) > 1e-3


def test_expression_models_reject_bad_names():
    dims = ChartDims(1, 2)
    with pytest.raises(ConfigError):
        constraint_from_exprs(["y1*yb1"], dims, {})       # leaf velocity inside C
    with pytest.raises(ConfigError):
        constraint_from_exprs(["xb3"], dims, {})          # outside the chart
    with pytest.raises(ConfigError):
        lagrangian_from_expr("k*yb1^2", dims, {})         # unbound parameter
    with pytest.raises(ConfigError):
        constraint_from_exprs(["yb1", "yb2"], dims, {})   # wrong count


def test_sqrt_domain_surfaces_as_domain_error():
    C = constraint_from_exprs(["sqrt(1 - yb1^2)"], D11, {})
    with pytest.raises(DomainError):
        C.at(TransState([0.0], [0.0], [2.0]))
