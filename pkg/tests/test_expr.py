import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebroid_mech.errors import (DomainError, EmptyExpressionError, ExprSyntaxError, UnboundVariableError,
                                   UnknownFunctionError)
from algebroid_mech.expr import EvalContext, Expr, ExprArray, eval_jet, fd_derivative, parse

from helpers import VARS, random_expression, random_point


# ---------------------------------------------------------------- parsing

@pytest.mark.parametrize("src, names", [
    ("y1*y1/2", ("y1",)),
    ("sin(x1) + 2", ("x1",)),
    ("x2 * x1 + x2", ("x2", "x1")),
    ("3.5e-2", ()),
])
def test_free_vars(src, names):
    assert parse(src).free_vars == names


def test_free_vars_listed_once():
    e = parse("x1 * x1 + sin(x1) - x1^x1")
    assert e.free_vars == ("x1",)


@pytest.mark.parametrize("src, value", [
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("(-2)^2", 4.0),
    ("2*-3", -6.0),
    ("8/4/2", 1.0),
    ("1 - 2 - 3", -4.0),
    ("1 + 2 * 3", 7.0),
    ("-(1 + 2)^2", -9.0),
    ("abs(-3) + sqrt(16)", 7.0),
    ("exp(0) + log(1) + tan(0) + cos(0)", 2.0),
])
def test_precedence_and_associativity(src, value):
    assert parse(src).evaluate({}) == value


@pytest.mark.parametrize("src, offset", [
    ("x1 + ", 5),
    ("(x1", 3),
    ("x1 $ 2", 3),
    ("2 3", 2),
    ("x1 * )", 5),
])
def test_syntax_error_offsets(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src)
    assert info.value.offset == offset


def test_offsets_count_bytes():
    # the Greek letter takes two bytes in UTF-8
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + α")
    assert info.value.offset == 5
    with pytest.raises(ExprSyntaxError) as info:
        parse("α")
    assert info.value.offset == 0


def test_unknown_function_and_empty_input():
    with pytest.raises(UnknownFunctionError) as info:
        parse("x1 + foo(x1)")
    assert info.value.name == "foo" and info.value.offset == 5
    with pytest.raises(EmptyExpressionError):
        parse("   ")


# ------------------------------------------------------------- evaluation

def test_jet_examples():
    j = eval_jet(parse("y1*y1/2"), EvalContext({"y1": 3.0}, ("y1",)))
    assert j.value == 4.5 and j.grad.tolist() == [3.0] and j.hess.tolist() == [[1.0]]
    j = eval_jet(parse("sin(x1)"), EvalContext({"x1": 0.0}, ("x1",)))
    assert j.value == 0.0 and j.grad.tolist() == [1.0] and j.hess.tolist() == [[0.0]]


def test_jet_matches_finite_differences_exp_product():
    e = parse("exp(x1*y1)")
    ctx = EvalContext({"x1": 0.7, "y1": -1.3}, ("x1", "y1"))
    j = eval_jet(e, ctx)
    for a, u in enumerate(ctx.seed_vars):
        assert abs(j.grad[a] - fd_derivative(e, ctx, u)) <= 1e-6
        for b, v in enumerate(ctx.seed_vars):
            fd = fd_derivative(e, ctx, u, order=2, h=1e-4, var2=v)
            assert abs(j.hess[a, b] - fd) <= 1e-6
    # hand derivatives
    x, y = 0.7, -1.3
    ex = math.exp(x * y)
    assert np.allclose(j.grad, [y * ex, x * ex], rtol=1e-15)
    assert np.allclose(j.hess, [[y * y * ex, ex + x * y * ex], [ex + x * y * ex, x * x * ex]], rtol=1e-14)


@pytest.mark.parametrize("src, x, order, h, expected", [
    ("x1^3", 2.0, 1, 1e-5, 12.0),
    ("x1^3", 2.0, 2, 1e-4, 12.0),
    ("cos(x1)", 0.0, 2, 1e-4, -1.0),
])
def test_fd_examples(src, x, order, h, expected):
    assert fd_derivative(parse(src), EvalContext({"x1": x}), "x1", order, h) == pytest.approx(expected, abs=1e-6)


def test_seeds_need_bindings_and_unbound_variables_fail():
    with pytest.raises(UnboundVariableError):
        eval_jet(parse("x1 + x2"), EvalContext({"x1": 1.0}, ("x1",)))
    with pytest.raises(UnboundVariableError):
        eval_jet(parse("x1"), EvalContext({"x1": 1.0}, ("x1", "y7")))


def test_unseeded_bindings_are_constants():
    j = eval_jet(parse("x1 * x2^2"), EvalContext({"x1": 2.0, "x2": 3.0}, ("x1",)))
    assert j.grad.tolist() == [9.0] and j.hess.tolist() == [[0.0]] and j.seed_vars == ("x1",)


@pytest.mark.parametrize("src, env, fragment", [
    ("1 + log(x1 - 1)", {"x1": 1.0}, "log(x1 - 1)"),
    ("sqrt(x1) * 2", {"x1": -1.0}, "sqrt(x1)"),
    ("3 / (x1 - 2)", {"x1": 2.0}, "3 / (x1 - 2)"),
    ("x1^0.5", {"x1": -4.0}, "x1^0.5"),
    ("x1^-1", {"x1": 0.0}, "x1^(-1)"),
])
def test_domain_errors_name_the_subexpression(src, env, fragment):
    with pytest.raises(DomainError) as info:
        parse(src).evaluate(env)
    assert info.value.subexpression == fragment
    with pytest.raises(DomainError):
        eval_jet(parse(src), EvalContext(env, tuple(env)))


def test_abs_and_sqrt_are_not_differentiable_at_zero():
    with pytest.raises(DomainError):
        eval_jet(parse("abs(x1)"), EvalContext({"x1": 0.0}, ("x1",)))
    with pytest.raises(DomainError):
        eval_jet(parse("sqrt(x1)"), EvalContext({"x1": 0.0}, ("x1",)))
    assert parse("abs(x1) + sqrt(x1)").evaluate({"x1": 0.0}) == 0.0


def test_power_rules():
    j = eval_jet(parse("x1^x2"), EvalContext({"x1": 2.0, "x2": 3.0}, ("x1", "x2")))
    assert j.value == 8.0
    assert np.allclose(j.grad, [12.0, 8.0 * math.log(2.0)])
    j = eval_jet(parse("(-2)^x1"), EvalContext({"x1": 3.0}))
    assert j.value == -8.0


# ------------------------------------------------------ symbolic helpers

def test_symbolic_diff_agrees_with_jets():
    e = parse("sin(x1 * y1) / (2 + x1^2) - exp(y1) * x1")
    env = {"x1": 0.4, "y1": -0.9}
    j = eval_jet(e, EvalContext(env, ("x1", "y1")))
    assert e.diff("x1").evaluate(env) == pytest.approx(j.grad[0], rel=1e-13)
    assert e.diff("y1").diff("x1").evaluate(env) == pytest.approx(j.hess[1, 0], rel=1e-12)
    assert e.diff("z9").is_constant


def test_substitute_and_arithmetic():
    e = parse("a * x1 + b")
    f = e.substitute({"a": 2.0, "b": "x1^2"})
    assert f.free_vars == ("x1",)
    assert f.evaluate({"x1": 3.0}) == 15.0
    g = Expr.var("x1") * 2 - 1
    assert g.evaluate({"x1": 4.0}) == 7.0
    assert (2 / Expr.var("x1")).evaluate({"x1": 4.0}) == 0.5
    assert parse("x1 + 0") == parse("x1 + 0") and hash(parse("x1")) == hash(Expr.var("x1"))


def test_expr_array_values_and_gradient():
    arr = ExprArray.build([["x1 * x2", "1"], ["sin(x1)", "x2"]], (2, 2))
    val, d = arr.gradient({"x1": 0.5, "x2": 2.0}, ("x1", "x2"))
    assert np.allclose(val, [[1.0, 1.0], [math.sin(0.5), 2.0]])
    assert np.allclose(d[0, 0], [2.0, 0.5]) and np.allclose(d[1, 0], [math.cos(0.5), 0.0])
    assert np.allclose(d[0, 1], 0.0)


# ------------------------------------------------------------- properties

@st.composite
def expressions(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    return random_expression(rng, depth=draw(st.integers(1, 4))), random_point(rng)


@settings(max_examples=200, deadline=None)
@given(expressions())
def test_print_parse_round_trip(case):
    src, env = case
    e = parse(src)
    again = parse(str(e))
    assert str(again) == str(e)
    assert again.evaluate(env) == pytest.approx(e.evaluate(env), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(expressions())
def test_jets_against_finite_differences(case):
    src, env = case
    e = parse(src)
    ctx = EvalContext(env, VARS)
    j = eval_jet(e, ctx)
    assert j.value == pytest.approx(e.evaluate(env), rel=1e-14, abs=1e-14)
    assert np.array_equal(j.hess, j.hess.T)
    assert j.grad.shape == (3,) and j.hess.shape == (3, 3)
    for a, u in enumerate(VARS):
        fd = fd_derivative(e, ctx, u)
        assert abs(j.grad[a] - fd) <= 1e-6 * (1 + abs(j.grad[a]))
        for b, v in enumerate(VARS):
            fd2 = fd_derivative(e, ctx, u, order=2, h=1e-4, var2=v)
            assert abs(j.hess[a, b] - fd2) <= 1e-4 * (1 + abs(j.hess[a, b]))


# ------------------------------------------------------------ shared trees

def _shared_tower(depth):
    e = parse("sin(x1) + x2 * y1")
    for _ in range(depth):
        e = e * e / (1 + e * e) + e
    return e


def test_shared_subtrees_evaluate_like_their_text():
    e = _shared_tower(12)
    env = {"x1": 0.3, "x2": -0.7, "y1": 1.1}
    v = math.sin(0.3) - 0.7 * 1.1
    for _ in range(12):
        v = v * v / (1 + v * v) + v
    assert e.evaluate(env) == pytest.approx(v, rel=1e-14)
    d = e.diff("x1")
    ctx = EvalContext(env, ("x1",))
    assert d.evaluate(env) == pytest.approx(eval_jet(e, ctx).grad[0], rel=1e-12)
    assert d.evaluate(env) == pytest.approx(fd_derivative(e, ctx, "x1"), rel=1e-6)


def test_concurrent_evaluation_of_shared_subtrees():
    from concurrent.futures import ThreadPoolExecutor
    e = _shared_tower(8)
    d = e.diff("x2")
    rng = np.random.default_rng(4)
    envs = [dict(zip(VARS, p)) for p in rng.uniform(-1, 1, (400, 3)).tolist()]
    expected = [(e.evaluate(env), d.evaluate(env)) for env in envs]
    with ThreadPoolExecutor(8) as pool:
        for _ in range(3):
            got = list(pool.map(lambda env: (e.evaluate(env), d.evaluate(env)), envs))
            assert got == expected
