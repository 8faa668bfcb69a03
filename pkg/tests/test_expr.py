import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperback.errors import ExpressionEvaluationError, ExpressionSyntaxError, UnknownIdentifier
from hyperback.expr import (
    BinOp,
    Call,
    Expression,
    FUNCTIONS,
    Neg,
    Num,
    Var,
    evaluate,
    parse_expression,
    to_source,
)


def ev(src, **env):
    return float(Expression(src)(**env))


def test_basic_evaluation():
    assert ev("2*x+1", x=0.5) == 2.0
    assert abs(ev("sin(x)^2+cos(x)^2", x=0.37) - 1.0) <= 1e-12
    assert ev("z1 - z2", z1=3, z2=1) == 2.0
    assert abs(ev("pi") - math.pi) < 1e-15
    assert abs(ev("sqrt(4) + exp(0) + tanh(0)") - 3.0) < 1e-15


def test_precedence_and_associativity():
    assert ev("2^3^2") == 512.0
    assert ev("-2^2") == -4.0
    assert ev("2^-1") == 0.5
    assert ev("1 - 2 - 3") == -4.0
    assert ev("8 / 4 / 2") == 1.0
    assert ev("2 + 3 * 4") == 14.0
    assert ev("(2 + 3) * 4") == 20.0
    assert ev("--3") == 3.0
    assert parse_expression("-x^2") == Neg(BinOp("^", Var("x"), Num(2.0)))


def test_number_formats():
    assert ev("1e-3") == 1e-3
    assert ev(".5 + 2.") == 2.5
    assert ev("1.5E+2") == 150.0


def test_syntax_error_offset():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression("1+*2")
    assert info.value.offset == 2
    assert "number" in info.value.expected
    for bad, off in (("(x", 2), ("x)", 1), ("sin x", 4), ("2 $ 3", 2)):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression(bad)
        assert info.value.offset == off
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("   ")


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expression("y + 1")
    assert info.value.name == "y"
    with pytest.raises(UnknownIdentifier):
        parse_expression("log(x)")


def test_evaluation_errors():
    with pytest.raises(ExpressionEvaluationError):
        ev("1/x", x=0.0)
    with pytest.raises(ExpressionEvaluationError):
        ev("sqrt(x)", x=-1.0)
    with pytest.raises(UnknownIdentifier):
        ev("z1 + x", x=1.0)


def test_vectorised_profile():
    f = Expression("1 + 0*x").of_x()
    x = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(f(x), np.ones(5))
    with pytest.raises(UnknownIdentifier):
        Expression("z1").of_x()


def nodes(depth=4):
    leaf = st.one_of(
        st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(Num),
        st.sampled_from(["x", "z1", "z2", "pi"]).map(Var),
    )
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            kids.map(Neg),
            st.tuples(st.sampled_from("+-*/^"), kids, kids).map(lambda t: BinOp(*t)),
            st.tuples(st.sampled_from(sorted(FUNCTIONS)), kids).map(lambda t: Call(*t)),
        ),
        max_leaves=12,
    )


@settings(max_examples=1000, deadline=None)
@given(nodes())
def test_print_parse_round_trip(tree):
    assert parse_expression(to_source(tree)) == tree


@settings(max_examples=200, deadline=None)
@given(nodes(), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_round_trip_preserves_value(tree, x, z1, z2):
    env = dict(x=x, z1=z1, z2=z2)
    try:
        a = evaluate(tree, **env)
    except ExpressionEvaluationError:
        return
    b = evaluate(parse_expression(to_source(tree)), **env)
    assert np.array_equal(a, b, equal_nan=True)
