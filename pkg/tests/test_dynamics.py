import numpy as np
import pytest

from nonholo import geometry as g
from nonholo import scenarios
from nonholo.dynamics import (direct_derivatives, force_F, force_F_timedep, h_form, is_C_regular,
                              offshell_rhs, point_data, residual_eqlagc, residual_theorem_form,
                              semispray, triple_product)
from nonholo.errors import Degenerate, TimeDependentInput, WrongTimeFlags
from nonholo.model import (ChartDims, Jet, TransState, constraint_from_exprs, lagrangian_from_expr,
                           lift_affine_expr, lift_linear_expr)

D11 = ChartDims(1, 1)


def trivial(n=1):
    dims = ChartDims(1, n)
    L = lagrangian_from_expr("0.5*(y1^2 + " + " + ".join(f"yb{i + 1}^2" for i in range(n)) + ")", dims, {})
    return L, constraint_from_exprs(["0"], dims, {})


def sample(sc, N, seed=0):
    return sc.sample_states(np.random.default_rng(seed), N)


# -- h -------------------------------------------------------------------------------------------


def test_h_trivial():
    L, C = trivial()
    hf = h_form(L, C, TransState([0.0], [0.0], [1.0]))
    assert hf.h.tolist() == [[-1.0]]


def test_h_appell_linear():
    p = dict(R=2.0, r=1.0, alpha=1.5, beta=0.5, I1=2.0, I2=3.0, gamma=1.0)
    sc = scenarios.build("appell_linear", p)
    a2 = p["I1"] + p["alpha"] * p["R"] ** 2 + p["beta"] * p["r"] ** 2
    hf = h_form(sc.L, sc.C, sample(sc, 20))
    np.testing.assert_allclose(hf.h, np.broadcast_to(np.diag([-a2, -p["I2"]]), (20, 2, 2)), rtol=1e-14)
    assert is_C_regular(sc.L, sc.C, sc.initial)[0]


def test_h_appell_nonlinear_eigen():
    sc = scenarios.build("appell_nonlinear", {"beta": 0.7, "gamma": 1.9})
    s = TransState([0.0], [0.0, 0.0], [0.6, -0.8])
    h = h_form(sc.L, sc.C, s).h
    u = s.y_trans / np.linalg.norm(s.y_trans)
    w = np.array([-u[1], u[0]])
    np.testing.assert_allclose(h @ u, -(0.7 + 1.9) * u, atol=1e-14)
    np.testing.assert_allclose(h @ w, -0.7 * w, atol=1e-14)


@pytest.mark.parametrize("name", scenarios.BUILTINS)
def test_h_symmetric_and_inverse(name):
    sc = scenarios.build(name)
    hf = h_form(sc.L, sc.C, sample(sc, 50))
    assert np.array_equal(hf.h, np.swapaxes(hf.h, -1, -2))
    err = np.max(np.abs(hf.h @ hf.h_inv - np.eye(sc.dims.n)), axis=(-1, -2))
    assert np.all(err <= 1e-10 * hf.cond)


def test_degenerate_cases():
    sc = scenarios.build("appell_nonlinear", {"beta": 0.0})
    ok, cond = is_C_regular(sc.L, sc.C, sc.initial)
    assert not ok and cond > 1e12
    with pytest.raises(Degenerate) as err:
        h_form(sc.L, sc.C, sc.initial)
    assert "cond(h)" in str(err.value)
    with pytest.raises(Degenerate):
        semispray(sc.L, sc.C, sc.initial)
    rf = scenarios.build("riemannian_flow")
    edge = TransState([0.0], [0.0, 0.0], [2.0, 0.0], 1.0)   # s*|yb|^2 = 1/t: leaf speed 0
    ok, _ = is_C_regular(rf.L, rf.C, edge)
    assert not ok


# -- F -----------------------------------------------------------------------------------------


def test_force_zero_without_position_dependence():
    L, C = trivial(2)
    assert not force_F(L, C, TransState([1.0], [2.0, 3.0], [0.5, 0.1])).F.any()


def test_force_appell_nonlinear():
    p = dict(alpha=1.2, beta=1.0, gamma=0.8, delta=0.6)
    sc = scenarios.build("appell_nonlinear", p)
    s = sample(sc, 30)
    rho = np.linalg.norm(s.y_trans, axis=1, keepdims=True)
    np.testing.assert_allclose(force_F(sc.L, sc.C, s).F, -1.2 * 0.6 * s.y_trans / rho, rtol=1e-13)


def test_force_appell_linear():
    sc = scenarios.build("appell_linear", {"gamma": 0.7, "r": 1.5})
    F = force_F(sc.L, sc.C, sample(sc, 10)).F
    np.testing.assert_allclose(F, np.broadcast_to([-1.5 * 0.7, 0.0], (10, 2)), atol=1e-14)


def test_force_time_flags():
    ah = scenarios.build("appell_hammel")
    with pytest.raises(TimeDependentInput):
        force_F(ah.L, ah.C, ah.initial)
    an = scenarios.build("appell_nonlinear")
    with pytest.raises(WrongTimeFlags):
        force_F_timedep(an.L, an.C, an.initial)
    dims = ChartDims(1, 1)
    Lt = lagrangian_from_expr("0.5*(y1^2 + yb1^2)*(1 + t^2)", dims, {})
    Ct = constraint_from_exprs(["t*yb1"], dims, {})
    with pytest.raises(WrongTimeFlags):
        force_F_timedep(Lt, Ct, TransState([0.0], [0.0], [1.0], 0.5))


def test_force_appell_hammel():
    # derived from the direct Chetaev equations; the published display has the
    # opposite sign on the dv0/dt term (see the decisions ledger)
    p = dict(alpha=1.3, beta=0.9, gamma=1.1, delta=0.5, a0=0.4, b0=0.2, w0=2.0)
    sc = scenarios.build("appell_hammel", p)
    s = sample(sc, 30)
    v0dot = p["a0"] + p["b0"] * p["w0"] * np.cos(p["w0"] * s.t)
    rho = np.linalg.norm(s.y_trans, axis=1)
    expected = (-p["alpha"] * (p["delta"] - p["gamma"] * v0dot) / rho)[:, None] * s.y_trans
    np.testing.assert_allclose(force_F_timedep(sc.L, sc.C, s).F, expected, rtol=1e-12)


def test_force_timedep_reduces_without_explicit_time():
    dims = ChartDims(1, 2)
    L = lagrangian_from_expr("0.5*(2*y1^2 + yb1^2 + yb2^2) + x1*xb2", dims, {})
    C = constraint_from_exprs(["sin(xb1)*yb2 + sqrt(1 + yb1^2)"], dims, {})
    Ct = constraint_from_exprs(["sin(xb1)*yb2 + sqrt(1 + yb1^2) + 0*t"], dims, {})
    assert Ct.time_dependent and not C.time_dependent
    rng = np.random.default_rng(1)
    s = TransState(rng.normal(size=(20, 1)), rng.normal(size=(20, 2)), rng.normal(size=(20, 2)))
    st = TransState(s.x_leaf, s.x_trans, s.y_trans, rng.normal(size=20))
    np.testing.assert_array_equal(force_F_timedep(L, Ct, st).F, force_F(L, C, s).F)


# -- S -----------------------------------------------------------------------------------------


def test_semispray_examples():
    L, C = trivial(2)
    assert not semispray(L, C, TransState([0.0], [0.0, 0.0], [1.0, 2.0])).any()
    p = dict(alpha=0.8, beta=1.4, gamma=0.6, delta=1.1)
    sc = scenarios.build("appell_nonlinear", p)
    s = sample(sc, 30)
    kappa = p["alpha"] * p["delta"] / (p["alpha"] ** 2 * p["gamma"] + p["beta"])
    assert sc.oracle["kappa"] == pytest.approx(kappa)
    rho = np.linalg.norm(s.y_trans, axis=1, keepdims=True)
    np.testing.assert_allclose(semispray(sc.L, sc.C, s), kappa * s.y_trans / rho, rtol=1e-13)
    b = scenarios.build("benenti")
    assert not semispray(b.L, b.C, sample(b, 100)).any()


def test_semispray_riemannian_flat():
    sc = scenarios.build("riemannian_flow")
    s = sample(sc, 50)
    # phi = 1/t, S = phi' yb / (2 phi) = -yb/(2t)
    np.testing.assert_allclose(semispray(sc.L, sc.C, s), -s.y_trans / (2 * s.t[:, None]), rtol=1e-12)


def test_semispray_appell_linear_slope():
    sc = scenarios.build("appell_linear")
    S = semispray(sc.L, sc.C, sample(sc, 10))
    np.testing.assert_allclose(S, np.broadcast_to([sc.oracle["slope_y1"], 0.0], (10, 2)), atol=1e-15)


# -- residuals -----------------------------------------------------------------------------------


def systems():
    out = [(f"random{i}", *scenarios.random_system(i, 7)) for i in range(4)]
    out += [(n, scenarios.build(n).L, scenarios.build(n).C) for n in scenarios.BUILTINS]
    return out


def random_states(L, C, rng, N, sc_name):
    if sc_name in scenarios.BUILTINS:
        return scenarios.build(sc_name).sample_states(rng, N)
    m, n = C.dims.m, C.dims.n
    t = rng.uniform(0, 2, N) if (L.time_dependent or C.time_dependent) else None
    return TransState(rng.normal(size=(N, m)), rng.normal(size=(N, n)), rng.normal(size=(N, n)), t)


def fd_lagrange_residual(L, C, j: Jet, h=1e-4):
    """Residual with total time derivatives replaced by differences along a curve."""
    s = j.state
    m, n = C.dims.m, C.dims.n
    td = L.time_dependent or C.time_dependent
    c0 = C.at(s)

    def along(tau):
        st = TransState(s.x_leaf + tau * c0, s.x_trans + tau * s.y_trans,
                        s.y_trans + tau * j.a_trans, None if not td else s.t + tau)
        dd = direct_derivatives(L, C, st)
        return dd.grad, dd.slots()

    (gp, w), (gm, _) = along(h), along(-h)
    g0, _ = along(0.0)
    gp2, gm2 = along(2 * h)[0], along(-2 * h)[0]
    dP = (8 * (gp - gm) - (gp2 - gm2)) / (12 * h)
    E_leaf = dP[..., w["y"]] - g0[..., w["x"]]
    E_trans = dP[..., w["yb"]] - g0[..., w["xb"]]
    Cy = direct_derivatives(L, C, s).C.jac[..., direct_derivatives(L, C, s).C.layout.yb]
    return E_trans + np.einsum("...un,...u->...n", Cy, E_leaf)


@pytest.mark.parametrize("name,L,C", systems(), ids=[s[0] for s in systems()])
def test_lagrange_residual_matches_finite_difference_oracle(name, L, C):
    # the leaf position moves at first order only, so its curvature error is
    # second order in tau and drops out of the symmetric difference
    rng = np.random.default_rng(3)
    s = random_states(L, C, rng, 20, name)
    a = rng.normal(size=(20, C.dims.n))
    j = Jet(s, a)
    ref = fd_lagrange_residual(L, C, j)
    got = residual_eqlagc(L, C, j)
    assert np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref))) < 1e-6


@pytest.mark.parametrize("name,L,C", systems(), ids=[s[0] for s in systems()])
def test_offshell_identity(name, L, C):
    rng = np.random.default_rng(4)
    s = random_states(L, C, rng, 1000, name)
    j = Jet(s, rng.normal(size=(1000, C.dims.n)))
    lhs, rhs = residual_eqlagc(L, C, j), offshell_rhs(L, C, j)
    assert np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))) < 1e-9


@pytest.mark.parametrize("name,L,C", systems(), ids=[s[0] for s in systems()])
def test_root_of_residual_is_semispray(name, L, C):
    rng = np.random.default_rng(5)
    s = random_states(L, C, rng, 40, name)
    reg, _ = is_C_regular(L, C, s)
    s = s.take(np.nonzero(np.asarray(reg) & (np.asarray(is_C_regular(L, C, s)[1]) < 1e8))[0])
    n = C.dims.n
    N = s.batch_shape[0]
    r0 = residual_eqlagc(L, C, Jet(s, np.zeros((N, n))))
    M = np.stack([residual_eqlagc(L, C, Jet(s, np.tile(np.eye(n)[k], (N, 1)))) - r0 for k in range(n)], -1)
    a = np.linalg.solve(M, -r0[..., None])[..., 0]
    S = semispray(L, C, s)
    assert np.max(np.abs(a - S)) / max(1.0, np.max(np.abs(S))) < 1e-12


@pytest.mark.parametrize("name,L,C", systems(), ids=[s[0] for s in systems()])
def test_minus_h_is_triple_product(name, L, C):
    s = random_states(L, C, np.random.default_rng(6), 50, name)
    d = point_data(L, C, s)
    Ct = d.Ctensor
    h = np.einsum("ku,kunw->knw", d.p_leaf, Ct) - d.Lc_hess[:, d.layout.yb, d.layout.yb]
    tp = triple_product(L, C, s)
    # L_c hessian = triple product + p·𝒞, so -h = triple product
    assert np.max(np.abs(-h - tp)) / max(1.0, np.max(np.abs(tp))) < 1e-10


@pytest.mark.parametrize("name", scenarios.BUILTINS)
def test_on_shell_residuals_vanish(name):
    sc = scenarios.build(name)
    s = sample(sc, 200, 8)
    j = Jet(s, semispray(sc.L, sc.C, s))
    assert np.max(np.abs(residual_eqlagc(sc.L, sc.C, j))) < 1e-9
    assert np.max(np.abs(residual_theorem_form(sc.L, sc.C, j))) < 1e-9


def test_theorem_form_linear_uses_yB():
    sc = scenarios.build("appell_linear")
    s = sample(sc, 20)
    a = np.random.default_rng(1).normal(size=(20, 2))
    d = point_data(sc.L, sc.C, s)
    R = np.einsum("kunw,kw->kun", g.curvature_B(sc.C, s), s.y_trans)
    lay = d.layout
    H, gL = d.Lc_hess, d.Lc_grad
    dp = (np.einsum("knv,kv->kn", H[:, lay.yb, lay.x], d.C.value)
          + np.einsum("knw,kw->kn", H[:, lay.yb, lay.xb], s.y_trans)
          + np.einsum("knw,kw->kn", H[:, lay.yb, lay.yb], a))
    expected = (dp - gL[:, lay.xb] - np.einsum("kun,ku->kn", d.Cy, gL[:, lay.x])
                - np.einsum("ku,kun->kn", d.p_leaf, R))
    np.testing.assert_allclose(residual_theorem_form(sc.L, sc.C, Jet(s, a)), expected, atol=1e-12)


def test_theorem_form_affine_adds_gamma():
    dims = ChartDims(1, 2)
    L = lagrangian_from_expr("0.5*(2*y1^2 + yb1^2 + 3*yb2^2) + sin(x1)*xb2", dims, {})
    C = lift_affine_expr([["cos(xb2)", "x1"]], ["xb1*x1"], dims, {})
    rng = np.random.default_rng(2)
    s = TransState(rng.normal(size=(30, 1)), rng.normal(size=(30, 2)), rng.normal(size=(30, 2)))
    a = rng.normal(size=(30, 2))
    j = Jet(s, a)
    d = point_data(L, C, s)
    R = np.einsum("kunw,kw->kun", g.curvature_B(C, s), s.y_trans) + g.gamma_affine(C, s)
    # theorem form - Lagrange residual = p·𝒞(a - S) vanishes here, and R = K exactly
    np.testing.assert_allclose(d.K, R, atol=1e-12)
    np.testing.assert_allclose(residual_theorem_form(L, C, j), residual_eqlagc(L, C, j), atol=1e-10)
