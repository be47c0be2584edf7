"""
Tests for the expression language.
"""

import math
import warnings

import numpy as np
import pytest

from skewflow.error_handler import EvaluationWarning, ParseError, UnboundVariableError, UnknownFunctionError
from skewflow.expr import FUNCTIONS, BinOp, Neg, Num, Var, compile_expr, evaluate, free_variables, parse, to_text


@pytest.mark.unit
class TestParse:
    """Precedence, associativity and diagnostics."""

    def test_unary_minus_binds_looser_than_power(self):
        assert parse("-x1^2") == Neg(BinOp("^", Var("x1"), Num(2.0)))
        assert evaluate(parse("-x1^2"), {"x1": 3.0}) == -9.0

    def test_power_is_right_associative(self):
        assert evaluate(parse("2^3^2"), {}) == 512.0

    def test_negative_exponent(self):
        assert evaluate(parse("2^-1"), {}) == 0.5

    def test_products_before_sums(self):
        assert evaluate(parse("1 + 2*3 - 4/2"), {}) == 5.0

    def test_scientific_literal(self):
        assert evaluate(parse("1.5e-3 * 2"), {}) == pytest.approx(3e-3)

    def test_malformed_operator_reports_byte_offset(self):
        with pytest.raises(ParseError) as info:
            parse("x1 +* 2")
        assert info.value.offset == 4
        assert "byte 4" in str(info.value)

    def test_offset_counts_utf8_bytes(self):
        with pytest.raises(ParseError) as info:
            parse("é + $")
        assert info.value.offset == 5

    def test_unknown_function(self):
        with pytest.raises(UnknownFunctionError) as info:
            parse("1 + tanh(x1)")
        assert info.value.name == "tanh"
        assert info.value.offset == 4

    def test_missing_parenthesis(self):
        with pytest.raises(ParseError):
            parse("sin(x1")

    def test_empty_input(self):
        with pytest.raises(ParseError):
            parse("   ")

    def test_trailing_tokens(self):
        with pytest.raises(ParseError) as info:
            parse("x1 x2")
        assert info.value.offset == 3


@pytest.mark.unit
class TestEvaluate:

    def test_pretty_printer_reparses_to_same_tree(self):
        tree = parse("-x1^3 + cos(2*pi*w1)*x1^2 - 0.05*(sin(2*pi*w2)*x1 + 1)")
        assert parse(to_text(tree)) == tree

    def test_free_variables(self):
        assert free_variables(parse("x1*sin(w2) + pi")) == frozenset({"x1", "w2"})

    def test_cbrt_is_real(self):
        assert evaluate(parse("cbrt(-8)"), {}) == -2.0

    def test_constant_pi(self):
        assert evaluate(parse("cos(pi)"), {}) == -1.0

    def test_unbound_variable(self):
        with pytest.raises(UnboundVariableError):
            evaluate(parse("x1 + x2"), {"x1": 1.0})

    def test_division_by_zero_warns_and_propagates(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            value = evaluate(parse("1/x1"), {"x1": 0.0})
        assert math.isinf(value)
        assert any(issubclass(w.category, EvaluationWarning) for w in caught)

    def test_arrays_broadcast(self):
        values = evaluate(parse("x1^2 + w1"), {"x1": np.array([1.0, 2.0]), "w1": 0.5})
        np.testing.assert_allclose(values, [1.5, 4.5])

    def test_compiled_matches_interpreted(self):
        tree = parse("-x1^3 + (cos(2*pi*w1) + cos(2*pi*w2))*x1^2 + 0.05*(sin(2*pi*w2)*x1 + cos(2*pi*w1))")
        env = {"x1": np.linspace(-2, 2, 7), "w1": 0.3, "w2": 0.7}
        np.testing.assert_allclose(compile_expr(tree)(env), evaluate(tree, env), rtol=1e-15)


LITERALS = ("0", "3", "0.25", ".5", "12.", "1.5e-3", "2E+4", "7e2")
NAMES = ("x1", "x2", "w1", "w2", "pi")


def random_expression(rng, depth=0):
    """Well-formed source text drawn from the expression grammar."""
    if depth >= 4 or rng.random() < 0.25:
        pool = LITERALS if rng.random() < 0.5 else NAMES
        return str(pool[int(rng.integers(len(pool)))])
    kind = int(rng.integers(5))
    if kind == 0:
        return "-" + random_expression(rng, depth + 1)
    if kind == 1:
        func = sorted(FUNCTIONS)[int(rng.integers(len(FUNCTIONS)))]
        return f"{func}({random_expression(rng, depth + 1)})"
    if kind == 2:
        return "(" + random_expression(rng, depth + 1) + ")"
    if kind == 3:
        chain = [random_expression(rng, depth + 2) for _ in range(int(rng.integers(2, 4)))]
        return "^".join(chain)
    op = "+-*/"[int(rng.integers(4))]
    return f"{random_expression(rng, depth + 1)} {op} {random_expression(rng, depth + 1)}"


@pytest.mark.unit
class TestRoundTrip:

    def test_printed_random_expressions_reparse_identically(self):
        rng = np.random.default_rng(20240611)
        seen_ops = set()
        for _ in range(1000):
            text = random_expression(rng)
            tree = parse(text)
            assert parse(to_text(tree)) == tree, text
            seen_ops.update(c for c in text if c in "+-*/^(")
        assert seen_ops == set("+-*/^(")

    def test_right_associative_power_chain_survives_printing(self):
        tree = parse("x1^2^3")
        assert tree == BinOp("^", Var("x1"), BinOp("^", Num(2.0), Num(3.0)))
        assert parse(to_text(tree)) == tree

    def test_scientific_literal_survives_printing(self):
        tree = parse("1.5e-7 * x1")
        assert parse(to_text(tree)) == tree
