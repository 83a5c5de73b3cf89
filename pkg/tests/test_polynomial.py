"""
Tests for core.polynomial: ring axioms, calculus, integrals and the textual form.
"""

import math
import unittest

import numpy as np

from core.polynomial import (
    Box,
    DimensionMismatchError,
    Polynomial,
    PolynomialError,
    UnknownVariableError,
    VariableMismatchError,
    gauss_box_integral,
    monomial_basis,
    monomial_box_integral,
    parse_polynomial,
)

XYZ = ("x", "y", "z")


def random_polynomial(rng, variables, max_degree, integer=True, terms=5):
    basis = monomial_basis(variables, max_degree)
    picks = rng.choice(len(basis), size=min(terms, len(basis)), replace=False)
    if integer:
        coeffs = rng.integers(-5, 6, size=len(picks)).astype(float)
    else:
        coeffs = rng.normal(size=len(picks))
    return Polynomial(variables, {basis[i]: c for i, c in zip(picks, coeffs)})


class TestRingAxioms(unittest.TestCase):
    """Integer coefficients keep every identity exact in floating point."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_ring_axioms_random(self):
        for _ in range(1000):
            p, q, r = (random_polynomial(self.rng, XYZ, 3) for _ in range(3))
            self.assertEqual(p + q, q + p)
            self.assertEqual(p * q, q * p)
            self.assertEqual((p + q) + r, p + (q + r))
            self.assertEqual((p * q) * r, p * (q * r))
            self.assertEqual(p * (q + r), p * q + p * r)
            self.assertTrue((p - p).is_zero())

    def test_product_rule_random(self):
        for _ in range(1000):
            p, q = (random_polynomial(self.rng, XYZ, 3) for _ in range(2))
            for name in XYZ:
                lhs = (p * q).differentiate(name)
                rhs = p.differentiate(name) * q + p * q.differentiate(name)
                self.assertEqual(lhs, rhs)

    def test_identity_elements(self):
        p = random_polynomial(self.rng, XYZ, 4)
        self.assertEqual(p + Polynomial.zero(XYZ), p)
        self.assertEqual(p * Polynomial.constant(XYZ, 1.0), p)
        self.assertTrue((p * Polynomial.zero(XYZ)).is_zero())

    def test_power_matches_repeated_product(self):
        x = Polynomial.variable(XYZ, "x")
        y = Polynomial.variable(XYZ, "y")
        p = x + 2 * y - 1
        self.assertEqual(p ** 3, p * p * p)
        self.assertEqual(p ** 0, Polynomial.constant(XYZ, 1.0))
        with self.assertRaises(ValueError):
            p ** -1


class TestStructure(unittest.TestCase):
    def test_monomial_basis_graded_lex(self):
        basis = monomial_basis(("x", "y"), 2)
        self.assertEqual(basis, [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)])

    def test_monomial_basis_size(self):
        for n in range(1, 5):
            for d in range(0, 5):
                names = tuple(f"v{i}" for i in range(n))
                self.assertEqual(len(monomial_basis(names, d)), math.comb(n + d, d))

    def test_monomial_basis_embedding(self):
        basis = monomial_basis(("y",), 2, ambient=("x", "y"))
        self.assertEqual(basis, [(0, 0), (0, 1), (0, 2)])

    def test_degree_and_used_variables(self):
        p = parse_polynomial("x^2*y + z - 3", XYZ)
        self.assertEqual(p.degree(), 3)
        self.assertEqual(p.degree_in(["x"]), 2)
        self.assertEqual(p.used_variables(), ("x", "y", "z"))
        self.assertEqual(Polynomial.zero(XYZ).degree(), 0)

    def test_mismatched_variables_raise(self):
        p = Polynomial.variable(("x",), "x")
        q = Polynomial.variable(("y",), "y")
        with self.assertRaises(VariableMismatchError):
            p + q
        with self.assertRaises(VariableMismatchError):
            p * q

    def test_unknown_variable(self):
        with self.assertRaises(UnknownVariableError):
            Polynomial.variable(("x",), "y")
        with self.assertRaises(UnknownVariableError):
            Polynomial.variable(("x",), "x").differentiate("y")

    def test_embed_and_project(self):
        p = parse_polynomial("x^2 + 1", ("x",))
        lifted = p.embed(("w", "x"))
        self.assertEqual(lifted.coefficient((0, 2)), 1.0)
        self.assertEqual(lifted.project(("x",)), p)
        with self.assertRaises(UnknownVariableError):
            lifted.project(("w",))

    def test_prune(self):
        p = Polynomial(("x",), {(0,): 1.0, (1,): 1e-16, (2,): -1e-3})
        pruned = p.prune(1e-12)
        self.assertEqual(pruned.monomials(), [(0,), (2,)])


class TestCalculus(unittest.TestCase):
    def test_differentiate(self):
        p = parse_polynomial("3*x^3*y - 2*y^2 + x", ("x", "y"))
        self.assertEqual(p.differentiate("x"), parse_polynomial("9*x^2*y + 1", ("x", "y")))
        self.assertEqual(p.differentiate("y"), parse_polynomial("3*x^3 - 4*y", ("x", "y")))

    def test_hessian_symmetric(self):
        rng = np.random.default_rng(3)
        p = random_polynomial(rng, XYZ, 4, terms=10)
        H = p.hessian()
        for i in range(3):
            for j in range(3):
                self.assertEqual(H[i][j], H[j][i])

    def test_substitute(self):
        p = parse_polynomial("x^2 + x*u", ("x", "u"))
        y = Polynomial.variable(("x", "y"), "y")
        result = p.substitute({"u": y + 1})
        self.assertEqual(result, parse_polynomial("x^2 + x*y + x", ("x", "y")))

    def test_substitute_then_evaluate(self):
        rng = np.random.default_rng(17)
        outer = ("x", "u")
        inner = ("x", "y")
        for _ in range(100):
            p = random_polynomial(rng, outer, 4, integer=False, terms=8)
            bound = random_polynomial(rng, inner, 2, integer=False, terms=4)
            composed = p.substitute({"u": bound})
            point = rng.uniform(-1.5, 1.5, size=2)
            expected = p.evaluate([point[0], bound.evaluate(point)])
            value = composed.evaluate(point)
            self.assertLessEqual(abs(value - expected), 1e-9 * (1.0 + abs(expected)))

    def test_substitute_unbound_missing(self):
        p = parse_polynomial("x + u", ("x", "u"))
        with self.assertRaises(UnknownVariableError):
            p.substitute({"u": Polynomial.variable(("y",), "y")})


class TestEvaluation(unittest.TestCase):
    def test_evaluate_and_batch_agree(self):
        rng = np.random.default_rng(11)
        p = random_polynomial(rng, XYZ, 4, integer=False, terms=12)
        points = rng.normal(size=(50, 3))
        batch = p.evaluate_batch(points)
        for point, value in zip(points, batch):
            self.assertAlmostEqual(p.evaluate(point), value, places=10)

    def test_evaluate_wrong_dimension(self):
        p = Polynomial.variable(XYZ, "x")
        with self.assertRaises(DimensionMismatchError):
            p.evaluate([1.0, 2.0])
        with self.assertRaises(DimensionMismatchError):
            p.evaluate_batch(np.zeros((3, 2)))

    def test_box_integral_known_value(self):
        p = parse_polynomial("x^2 + y", ("x", "y"))
        box = Box((0.0, 0.0), (1.0, 2.0))
        # int x^2 = 1/3 * 2, int y = 1 * 2
        self.assertAlmostEqual(p.integrate_over_box(box), 2.0 / 3.0 + 2.0, places=14)
        self.assertEqual(monomial_box_integral((0, 0), box), 2.0)

    def test_box_integral_matches_quadrature(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = random_polynomial(rng, ("x", "y"), 8, integer=False, terms=8)
            lo = rng.uniform(-2.0, 0.0, size=2)
            hi = lo + rng.uniform(0.5, 2.0, size=2)
            box = Box(tuple(lo), tuple(hi))
            exact = p.integrate_over_box(box)
            quad = gauss_box_integral(p, box, order=5)
            self.assertLessEqual(abs(exact - quad), 1e-9 * max(1.0, abs(exact)))

    def test_box_validation(self):
        with self.assertRaises(ValueError):
            Box((1.0,), (0.0,))
        with self.assertRaises(DimensionMismatchError):
            Box((0.0, 0.0), (1.0,))
        box = Box((-1.0, 0.0), (1.0, 2.0))
        self.assertEqual(len(box.vertices()), 4)
        self.assertEqual(box.volume(), 4.0)
        np.testing.assert_array_equal(box.clip(np.array([5.0, -1.0])), [1.0, 0.0])


class TestTextForm(unittest.TestCase):
    def test_parse_parentheses_and_powers(self):
        p = parse_polynomial("(x + 1)^2 - 2*(x - y)", ("x", "y"))
        expected = parse_polynomial("x^2 + 1 + 2*y", ("x", "y"))
        self.assertEqual(p, expected)

    def test_text_round_trip_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = random_polynomial(rng, XYZ, 4, integer=False, terms=8)
            self.assertEqual(parse_polynomial(p.to_text(), XYZ), p)

    def test_zero_text(self):
        self.assertEqual(Polynomial.zero(XYZ).to_text(), "0")
        self.assertTrue(parse_polynomial("0", XYZ).is_zero())

    def test_parse_errors(self):
        with self.assertRaises(UnknownVariableError):
            parse_polynomial("x + q", ("x",))
        with self.assertRaises(PolynomialError):
            parse_polynomial("x^1.5", ("x",))
        with self.assertRaises(PolynomialError):
            parse_polynomial("(x + 1", ("x",))
        with self.assertRaises(PolynomialError):
            parse_polynomial("x $ 2", ("x",))


if __name__ == "__main__":
    unittest.main()
