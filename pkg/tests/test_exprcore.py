import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptsr.errors import DimensionMismatch, ParseError, UnknownSymbol
from conceptsr.exprcore import (
    Binary,
    Constant,
    OperatorSet,
    Unary,
    Variable,
    complexity,
    compile_with_constants,
    constants,
    depth,
    describe_grammar,
    evaluate,
    format_expr,
    get_at,
    iter_nodes,
    node_paths,
    parse,
    random_expr,
    replace_at,
    simplify,
    variables_used,
    with_constants,
)

FULL = OperatorSet(binary_ops=("add", "sub", "mul", "div", "pow"),
                   unary_ops=("neg", "sin", "cos", "exp", "log", "sqrt"), variable_names=("x1", "x2", "x3"))
OPS = OperatorSet(variable_names=("x1", "x2", "x3"))


def test_parse_precedence_and_associativity():
    e = parse("x1 + x2 * x3", OPS)
    assert e == Binary("add", Variable(0, "x1"), Binary("mul", Variable(1, "x2"), Variable(2, "x3")))
    e = parse("x1 - x2 - x3", OPS)
    assert format_expr(e) == "((x1 - x2) - x3)"
    e = parse("x1 ^ 2 ^ 3", FULL)
    assert format_expr(e) == "(x1 ^ (2.0 ^ 3.0))"


def test_parse_accepts_double_star_and_pi():
    e = parse("x1 ** 2 * pi", FULL)
    assert format_expr(e) == f"((x1 ^ 2.0) * {math.pi!r})"


def test_negative_literals():
    assert parse("-2.5", OPS) == Constant(-2.5)
    assert parse("x1 * -3", OPS) == Binary("mul", Variable(0, "x1"), Constant(-3.0))
    # without a neg operator, a negated variable becomes -1 * x
    e = parse("-x1", OPS)
    assert np.allclose(evaluate(e, np.array([[2.0, 0, 0]])), [-2.0])
    assert parse("-x1", FULL) == Unary("neg", Variable(0, "x1"))


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 x2", "", "sin()", "x1 + * x2", "3..4"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse(text, OPS)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as exc:
        parse("x1 + )", OPS)
    assert exc.value.position is not None


@pytest.mark.parametrize("text", ["y + 1", "tanh(x1)", "x1 ^ 2"])
def test_unknown_symbols(text):
    with pytest.raises(UnknownSymbol):
        parse(text, OPS)


def test_complexity_is_node_count():
    assert complexity(parse("x1", OPS)) == 1
    assert complexity(parse("sin(x1) + 2", OPS)) == 4
    e = parse("(x1 * x2) / (x3 + 1)", OPS)
    assert complexity(e) == 7
    assert complexity(e) == 1 + sum(complexity(c) for c in (e.left, e.right))
    assert depth(e) == 3


def test_paths_and_replacement():
    e = parse("x1 + sin(x2)", OPS)
    paths = node_paths(e)
    assert [p for p, _ in paths] == [(), (0,), (1,), (1, 0)]
    assert get_at(e, (1, 0)) == Variable(1, "x2")
    e2 = replace_at(e, (1, 0), Constant(1.0))
    assert format_expr(e2) == "(x1 + sin(1.0))"
    assert format_expr(e) == "(x1 + sin(x2))"
    assert variables_used(e2) == {"x1"}
    assert len(list(iter_nodes(e))) == complexity(e)


def test_constants_roundtrip():
    e = parse("2 * x1 + 3", OPS)
    assert constants(e) == [2.0, 3.0]
    e2 = with_constants(e, [5.0, -1.0])
    assert format_expr(e2) == "((5.0 * x1) + (-1.0))"
    f = compile_with_constants(e, ("x1", "x2", "x3"))
    cols = np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]])
    assert np.allclose(f(cols, np.array([5.0, -1.0])), [4.0, 9.0])


def test_evaluate_total_and_dimension_checks():
    e = parse("log(x1) / x2", OPS)
    out = evaluate(e, np.array([[-1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [math.e, 1.0, 0.0]]))
    assert math.isnan(out[0]) and not math.isfinite(out[1]) and out[2] == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        evaluate(e, np.ones((3, 1)))


def test_constant_expression_broadcasts():
    assert evaluate(Constant(2.0), np.ones((4, 3))).shape == (4,)


def test_describe_grammar():
    assert describe_grammar(OperatorSet(("add", "mul"), ("sin",), ("x1",))) == "binary: +, *; unary: sin; variables: x1"


def test_simplify_rules():
    cases = {
        "x1 + 0": "x1",
        "1 * x1": "x1",
        "x1 * 0": "0.0",
        "x1 - x1": "0.0",
        "x1 / x1": "1.0",
        "2 + 3": "5.0",
        "sin(0) + x2": "x2",
    }
    for text, want in cases.items():
        assert format_expr(simplify(parse(text, OPS))) == want
    assert simplify(parse("-(-x1)", FULL)) == Variable(0, "x1")


def test_simplify_keeps_non_finite_folds():
    e = parse("log(0 - 1) + x1", OPS)
    assert complexity(simplify(e)) <= complexity(e)


# ---------------------------------------------------------------------------
# properties

exprs = st.builds(lambda seed, d: random_expr(FULL, d, np.random.default_rng(seed)),
                  st.integers(0, 2**32 - 1), st.integers(1, 5))
POINTS = np.random.default_rng(7).uniform(0.2, 3.0, size=(64, 3))


@settings(max_examples=200, deadline=None)
@given(exprs)
def test_format_parse_roundtrip(e):
    again = parse(format_expr(e), FULL)
    assert again == e
    assert format_expr(again) == format_expr(e)


@settings(max_examples=200, deadline=None)
@given(exprs)
def test_simplify_preserves_values_and_never_grows(e):
    s = simplify(e)
    assert complexity(s) <= complexity(e)
    a, b = evaluate(e, POINTS), evaluate(s, POINTS)
    ok = np.isfinite(a) & np.isfinite(b)
    assert np.allclose(a[ok], b[ok], rtol=1e-12, atol=1e-12 * (1 + np.abs(a[ok]).max(initial=0)))
