import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from moser_transport import (
    EvaluationDomainError,
    ExpressionSyntaxError,
    parse_density_expression,
)
from moser_transport.expressions import BinOp, Call, Neg, Num, Var


def test_example_formula_value():
    ast = parse_density_expression("2*x^2*m + 5*(1-x^2)*m^4")
    assert ast.evaluate(x=1.0, m=1.0) == pytest.approx(2.0)


def test_identity_expression():
    ast = parse_density_expression("m")
    assert ast.evaluate(x=0.0, m=0.5) == 0.5


def test_singular_point_raises():
    ast = parse_density_expression("sin(1/m)")
    with pytest.raises(EvaluationDomainError):
        ast.evaluate(x=0.0, m=0.0)


def test_precedence_and_associativity():
    assert parse_density_expression("2+3*4^2", variables=()).evaluate() == 50.0
    assert parse_density_expression("-2^2", variables=()).evaluate() == -4.0
    # ^ is right-associative
    assert parse_density_expression("2^3^2", variables=()).evaluate() == 512.0
    assert parse_density_expression("2-3-4", variables=()).evaluate() == -5.0
    assert parse_density_expression("16/4/2", variables=()).evaluate() == 2.0


def test_constants_and_functions():
    assert parse_density_expression("cos(pi)", variables=()).evaluate() == pytest.approx(-1.0)
    assert parse_density_expression("log(e)", variables=()).evaluate() == pytest.approx(1.0)
    assert parse_density_expression("min(2, 3) + max(4, 1)", variables=()).evaluate() == 6.0


def test_syntax_error_carries_offset():
    with pytest.raises(ExpressionSyntaxError) as err:
        parse_density_expression("2*x +* 3")
    assert err.value.offset == 5


def test_unknown_identifier():
    with pytest.raises(ExpressionSyntaxError):
        parse_density_expression("2*y", variables=("x", "m"))


def test_arity_mismatch():
    with pytest.raises(ExpressionSyntaxError):
        parse_density_expression("sin(x, m)")
    with pytest.raises(ExpressionSyntaxError):
        parse_density_expression("min(x)")


def test_domain_errors():
    with pytest.raises(EvaluationDomainError):
        parse_density_expression("log(0-1)", variables=()).evaluate()
    with pytest.raises(EvaluationDomainError):
        parse_density_expression("sqrt(0-1)", variables=()).evaluate()
    with pytest.raises(EvaluationDomainError):
        parse_density_expression("0^(0-1)", variables=()).evaluate()


def test_array_evaluation_matches_scalar():
    ast = parse_density_expression("2*x^2*m + 5*(1-x^2)*m^4")
    ms = np.linspace(0.0, 1.0, 7)
    arr = ast.evaluate(x=0.3, m=ms)
    for i, m in enumerate(ms):
        assert arr[i] == pytest.approx(ast.evaluate(x=0.3, m=float(m)))


_leaves = st.one_of(
    st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(Num),
    st.sampled_from(["x", "m", "pi"]).map(Var),
)


def _nodes(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/"), children, children).map(
            lambda t: BinOp(t[0], t[1], t[2])
        ),
        children.map(Neg),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "abs"]), children).map(
            lambda t: Call(t[0], (t[1],))
        ),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(
            lambda t: Call(t[0], (t[1], t[2]))
        ),
    )


ast_strategy = st.recursive(_leaves, _nodes, max_leaves=12)


@given(root=ast_strategy)
def test_pretty_print_reparses_to_same_ast(root):
    text = str(root)
    reparsed = parse_density_expression(text, variables=("x", "m"))
    assert reparsed.root == root


@given(root=ast_strategy, x=st.floats(0.1, 2.0), m=st.floats(0.1, 1.0))
def test_pretty_print_preserves_value(root, x, m):
    env = {"x": x, "m": m}
    try:
        expected = root.evaluate(env)
    except EvaluationDomainError:
        return
    if not math.isfinite(float(np.asarray(expected))):
        return
    got = parse_density_expression(str(root), variables=("x", "m")).evaluate(**env)
    assert float(got) == pytest.approx(float(expected), rel=1e-12, abs=1e-12)
