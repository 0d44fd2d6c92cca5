import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonholo import expr as ex
from nonholo import scalar
from nonholo.errors import DomainError, ExprSyntaxError, UnboundNameError
from nonholo.expr import Add, Call, Mul, Neg, Num, Param, Pow, Var


def test_parse_cone_constraint_tree():
    tree = ex.parse("a*sqrt(yb1^2+yb2^2)")
    assert tree == Mul(Param("a"), Call("sqrt", Add(Pow(Var("yb1"), Num(2)), Pow(Var("yb2"), Num(2)))))


def test_precedence():
    assert ex.evaluate("1+2*3", {}) == 7
    assert ex.parse("-x1^2") == Neg(Pow(Var("x1"), Num(2)))
    assert ex.evaluate("-x1^2", {"x1": 3.0}) == -9
    assert ex.evaluate("2^3^2", {}) == 512
    assert ex.evaluate("8/4/2", {}) == 1
    assert ex.evaluate("8-4-2", {}) == 2
    assert ex.evaluate("(1+2)*3", {}) == 9
    assert ex.evaluate("2^-1", {}) == 0.5


def test_syntax_errors_carry_offset():
    with pytest.raises(ExprSyntaxError) as err:
        ex.parse("1 + * 2")
    assert err.value.offset == 4
    with pytest.raises(ExprSyntaxError) as err:
        ex.parse("x1 $ 2")
    assert err.value.offset == 3
    with pytest.raises(ExprSyntaxError):
        ex.parse("")
    with pytest.raises(ExprSyntaxError):
        ex.parse("(x1 + 2")
    with pytest.raises(ExprSyntaxError) as err:
        ex.parse("foo(x1)")
    assert "unknown function" in str(err.value)


def test_eval_appell_coefficient():
    assert ex.evaluate("R*yb1*cos(xb2)", {"R": 2.0, "yb1": 1.0, "xb2": 0.0}) == 2.0


def test_eval_over_jets_benenti():
    jets = scalar.seed([1.0, 1.0, 1.0])
    out = ex.evaluate("yb1*yb2/yb3", dict(zip(["yb1", "yb2", "yb3"], jets)))
    assert out.value == 1.0
    assert out.grad.tolist() == [1.0, 1.0, -1.0]


def test_constant_has_zero_gradient():
    jets = scalar.seed([0.4, 2.0])
    out = ex.evaluate("3*2 + 1", {"x1": jets[0]})
    assert not isinstance(out, scalar.Jet2) or not out.grad.any()


def test_unbound_and_domain_errors():
    with pytest.raises(UnboundNameError):
        ex.evaluate("x1 + q", {"x1": 1.0})
    with pytest.raises(DomainError):
        ex.evaluate("sqrt(x1)", {"x1": -1.0})
    with pytest.raises(DomainError):
        ex.evaluate("log(x1)", {"x1": 0.0})


def test_abs_warns_nonsmooth():
    tree = ex.parse("abs(x1)")
    assert ex.uses_nonsmooth(tree)
    with pytest.warns(ex.NonSmoothWarning):
        ex.warn_if_nonsmooth(tree, "lagrangian")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ex.warn_if_nonsmooth(ex.parse("sqrt(x1)"), "lagrangian")


def test_variable_names():
    for good in ("x1", "xb12", "y3", "yb2", "t"):
        assert ex.is_variable_name(good)
    for param in ("alpha", "x", "xb", "R", "t0"):
        assert not ex.is_variable_name(param)
    assert ex.free_names(ex.parse("alpha*x1 + sin(t)")) == {"alpha", "x1", "t"}


def test_bind_params_folds_constants():
    tree = ex.bind_params(ex.parse("0.5*k*yb1^2 + c*sin(2)"), {"k": 4.0, "c": 1.0})
    assert ex.free_names(tree) == {"yb1"}
    assert ex.evaluate(tree, {"yb1": 3.0}) == pytest.approx(18 + math.sin(2))


def test_symbolic_diff_matches_ad():
    tree = ex.parse("sin(x1)*yb1^2 + exp(xb1*yb1)/(1 + x1^2)")
    names = ["x1", "xb1", "yb1"]
    pt = [0.3, -0.7, 1.1]
    jets = scalar.seed(pt)
    ad = ex.evaluate(tree, dict(zip(names, jets)))
    for k, n in enumerate(names):
        d = ex.evaluate(ex.diff(tree, n), dict(zip(names, pt)))
        assert d == pytest.approx(ad.grad[k], rel=1e-13)


def test_real_and_jet_values_agree():
    tree = ex.parse("alpha*sqrt(yb1^2 + yb2^2) + tan(xb1)/3 - log(2 + cos(x1))")
    env = {"alpha": 1.7, "yb1": 0.4, "yb2": -1.3, "xb1": 0.2, "x1": 2.0}
    plain = ex.evaluate(tree, env)
    jets = scalar.seed(list(env.values()))
    jet = ex.evaluate(tree, dict(zip(env, jets)))
    assert float(jet.value) == pytest.approx(plain, rel=2.3e-16, abs=0)


# -- fuzz: parse, print, parse ------------------------------------------------------------

NAMES = ["x1", "xb2", "yb1", "t", "alpha", "R"]


def _trees():
    leaves = st.one_of(
        st.floats(0, 1e6, allow_nan=False).map(lambda v: Num(float(round(v, 3)))),
        st.sampled_from(NAMES).map(lambda n: Var(n) if ex.is_variable_name(n) else Param(n)),
    )

    def extend(children):
        return st.one_of(
            st.builds(Neg, children),
            st.builds(Call, st.sampled_from(sorted(ex.FUNCTIONS)), children),
            *[st.builds(cls, children, children) for cls in (ex.Add, ex.Sub, ex.Mul, ex.Div, ex.Pow)],
        )

    return st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(_trees())
def test_roundtrip(tree):
    src = ex.to_source(tree)
    again = ex.parse(src)
    assert again == tree
    assert ex.to_source(again) == src


def test_roundtrip_negative_literals():
    for tree in (Pow(Num(-2.0), Num(2.0)), Mul(Var("x1"), Num(-1.5)), Neg(Num(-3.0))):
        src = ex.to_source(tree)
        assert ex.evaluate(ex.parse(src), {"x1": 2.0}) == ex.evaluate(tree, {"x1": 2.0})
