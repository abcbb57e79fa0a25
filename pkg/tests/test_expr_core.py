"""Parser, exact differentiation and dual-number evaluation."""

import math

import pytest
from hypothesis import given, settings, strategies as st

import jetflow.expr_core as ec


LAG2 = ec.SymbolTable.lagrangian(2)
MOM1 = ec.SymbolTable.momentum(1)


def test_symbol_tables():
    assert LAG2.names == ("t", "q1", "q2", "v1", "v2")
    assert ec.SymbolTable.momentum(2).names == ("t", "q1", "q2", "p1", "p2")
    assert LAG2.index("v2") == 4
    with pytest.raises(ec.UnknownSymbolError):
        LAG2.index("z9")


def test_parse_value_oracle():
    f = ec.parse("0.5*v1^2 + q2*v1", LAG2)
    # 0.5*0.25 + 2*0.5 at (t, q1, q2, v1, v2) = (.3, 1, 2, .5, -1)
    assert f.ev([0.3, 1.0, 2.0, 0.5, -1.0]) == pytest.approx(1.125, abs=0)


def test_unary_minus_binds_looser_than_power():
    f = ec.parse("-v1^2", LAG2)
    assert f.ev([0.0, 0.0, 0.0, 3.0, 0.0]) == -9.0


def test_power_right_associative_and_folded():
    f = ec.parse("2^3^2", LAG2)
    assert isinstance(f, ec.Const)
    assert f.ev([0.0] * 5) == 512.0


def test_parse_errors_carry_offsets():
    with pytest.raises(ec.ExprSyntaxError) as err:
        ec.parse("q1 + * v1", LAG2)
    assert err.value.offset == 5
    with pytest.raises(ec.ExprSyntaxError):
        ec.parse("(q1", LAG2)
    with pytest.raises(ec.ExprSyntaxError):
        ec.parse("q1 $ 2", LAG2)
    with pytest.raises(ec.UnknownSymbolError) as err:
        ec.parse("q1 + q3", LAG2)
    assert err.value.name == "q3"
    assert err.value.offset == 5


def test_variable_exponent_rejected():
    with pytest.raises(ec.ExprSyntaxError):
        ec.parse("q1^v1", LAG2)


def test_constant_folding():
    assert isinstance(ec.parse("2*3 + 1", LAG2), ec.Const)
    assert isinstance(ec.parse("q1^1", LAG2), ec.Var)
    one = ec.parse("q1^0", LAG2)
    assert isinstance(one, ec.Const) and one.ev([0.0] * 5) == 1.0
    assert isinstance(ec.parse("0*q1 + v1", LAG2), ec.Var)


def test_diff_oracles():
    f = ec.parse("0.5*v1^2 + q2*v1", LAG2)
    x = [0.3, 1.0, 2.0, 0.5, -1.0]
    assert ec.diff(f, "q2").ev(x) == 0.5          # v1
    assert ec.diff(f, "v1").ev(x) == 2.5          # v1 + q2
    assert ec.diff(f, "v2").ev(x) == 0.0
    g = ec.parse("t/q1", LAG2)
    assert ec.diff(g, "q1").ev(x) == pytest.approx(-0.3, abs=1e-15)


def test_diff_chain_rule():
    f = ec.parse("sin(q1^2)", MOM1)
    x = [0.0, 0.7, 0.0]
    want = 2.0 * 0.7 * math.cos(0.49)
    assert ec.diff(f, "q1").ev(x) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("source,bad", [
    ("log(q1)", [0.0, -1.0, 0.0]),
    ("sqrt(q1)", [0.0, -1.0, 0.0]),
    ("1/q1", [0.0, 0.0, 0.0]),
    ("q1^-1", [0.0, 0.0, 0.0]),
    ("q1^0.5", [0.0, -1.0, 0.0]),
])
def test_domain_errors(source, bad):
    f = ec.parse(source, MOM1)
    with pytest.raises(ec.DomainError):
        f.ev(bad)


def test_dual_arithmetic_matches_symbolic_derivative():
    exprs = ["q1^3 - 2*q1", "sin(q1)*cos(p1)", "exp(0.3*q1) + q1*p1",
             "q1/(2 + p1^2)"]
    pts = [[0.1, 0.8, -0.4], [1.0, -1.2, 0.5], [0.0, 2.0, 1.5]]
    for source in exprs:
        f = ec.parse(source, MOM1)
        for x in pts:
            for k, name in enumerate(MOM1.names):
                seed = [0.0] * 3
                seed[k] = 1.0
                _, deriv = ec.eval_dual(f.ev, x, seed)
                assert deriv == pytest.approx(ec.diff(f, name).ev(x),
                                              rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-2.0, 2.0), y=st.floats(-2.0, 2.0))
def test_dual_product_and_chain_property(x, y):
    f = ec.parse("q1^2*p1 + sin(q1*p1)", MOM1)
    z = [0.0, x, y]
    _, deriv = ec.eval_dual(f.ev, z, [0.0, 1.0, 0.0])
    want = 2.0 * x * y + y * math.cos(x * y)
    assert deriv == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_nested_duals_second_derivative():
    f = ec.parse("sin(q1)", MOM1)
    F = ec.ScalarField(f.ev, 3)
    e1 = [0.0, 1.0, 0.0]

    def first(z):
        return F.eval_dual(list(z), e1)[1]

    val, second = ec.ScalarField(first, 3).eval_dual([0.0, 0.6, 0.0], e1)
    assert val == pytest.approx(math.cos(0.6), abs=1e-14)
    assert second == pytest.approx(-math.sin(0.6), abs=1e-14)


def test_eval_dual_on_plain_callable():
    value, deriv = ec.eval_dual(lambda z: z[0] * z[1], [2.0, 3.0],
                                [1.0, 0.0])
    assert (value, deriv) == (6.0, 3.0)


def test_scalar_field_gradient():
    F = ec.ScalarField.from_expr(ec.parse("q1^2 + q1*p1", MOM1), MOM1,
                                 name="F")
    g = F.gradient([0.0, 1.5, -2.0])
    assert g == pytest.approx([0.0, 2.0 * 1.5 - 2.0, 1.5], abs=1e-14)
    assert F.name == "F"
    assert F([0.0, 1.5, -2.0]) == pytest.approx(1.5 ** 2 - 3.0, abs=1e-14)


def test_form_field_directional_and_partials():
    def comps(z):
        return [z[0] * z[1], z[1] ** 2, z[2]]

    form = ec.FormField(comps, dim=3, degree=1)
    z = [0.5, 2.0, -1.0]
    along = form.directional(z, [0.0, 1.0, 0.0])
    assert along == pytest.approx([0.5, 4.0, 0.0], abs=1e-14)
    P = form.partials(z)
    # P[k][i] = d comps_i / d z_k
    assert P[0][0] == pytest.approx(2.0, abs=1e-14)
    assert P[1][0] == pytest.approx(0.5, abs=1e-14)
    assert P[1][1] == pytest.approx(4.0, abs=1e-14)
    assert P[2][2] == pytest.approx(1.0, abs=1e-14)


def test_form_field_rejects_bad_degree():
    with pytest.raises(ValueError):
        ec.FormField(lambda z: [0.0], dim=1, degree=3)
