"""
Sparse Multivariate Polynomials for sosreach

This module provides the polynomial arithmetic every other part of the
toolkit is written in: set descriptions, value functions, controllers,
multipliers and the expressions handed to the SOS compiler.

A polynomial lives over an ordered tuple of variable names and stores a map
from exponent tuples to double-precision coefficients. Terms whose
coefficient is exactly zero are dropped; nothing else is pruned unless
``prune`` is called explicitly.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

# Exponent vector (e1, ..., en) for x1^e1 ... xn^en
Monomial = Tuple[int, ...]

PRUNE_TOLERANCE = 1e-14


class PolynomialError(Exception):
    """Base class for polynomial errors."""


class VariableMismatchError(PolynomialError):
    """Operands live over different variable tuples."""


class UnknownVariableError(PolynomialError):
    """A variable name is not part of the ambient variable tuple."""


class DimensionMismatchError(PolynomialError):
    """A point or box has the wrong number of entries."""


def monomial_key(monomial: Monomial) -> Tuple[int, Tuple[int, ...]]:
    """Sort key implementing graded lexicographic order."""
    return sum(monomial), tuple(-e for e in monomial)


def monomial_degree(monomial: Monomial) -> int:
    return sum(monomial)


def multiply_monomials(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def _compositions(total: int, parts: int):
    """Exponent tuples of the given total degree, in lexicographic-descending order."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def monomial_basis(
    variables: Sequence[str],
    max_degree: int,
    ambient: Optional[Sequence[str]] = None,
) -> List[Monomial]:
    """
    All monomials of total degree <= max_degree in graded-lex order.

    Args:
        variables: Variables the monomials may use
        max_degree: Maximum total degree (>= 0)
        ambient: Optional larger variable tuple to embed the exponents into

    Returns:
        List of C(n + max_degree, max_degree) exponent tuples
    """
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    variables = tuple(variables)
    basis = [
        m for d in range(max_degree + 1) for m in _compositions(d, len(variables))
    ]
    if ambient is None:
        return basis
    ambient = tuple(ambient)
    positions = []
    for name in variables:
        if name not in ambient:
            raise UnknownVariableError(f"variable {name!r} not in {ambient}")
        positions.append(ambient.index(name))
    embedded = []
    for m in basis:
        exps = [0] * len(ambient)
        for pos, e in zip(positions, m):
            exps[pos] = e
        embedded.append(tuple(exps))
    return sorted(embedded, key=monomial_key)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: closed interval [lo_i, hi_i] per variable."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise DimensionMismatchError("lower and upper bounds differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"box interval [{lo}, {hi}] is empty")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in zip(self.lower, self.upper)]))

    def vertices(self) -> np.ndarray:
        """All 2^n corners, shape (2^n, n)."""
        if self.dimension == 0:
            return np.zeros((1, 0))
        corners = itertools.product(*zip(self.lower, self.upper))
        return np.array(list(corners), dtype=float)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return lo + (hi - lo) * rng.random((count, self.dimension))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all(
            (points >= np.asarray(self.lower)) & (points <= np.asarray(self.upper)),
            axis=1,
        )

    def clip(self, point: np.ndarray) -> np.ndarray:
        return np.clip(point, self.lower, self.upper)


class Polynomial:
    """
    Immutable sparse polynomial over an ordered tuple of named variables.

    Attributes:
        variables: Ordered variable names
        terms: Mapping monomial -> coefficient, no exact zeros stored
    """

    __slots__ = ("_variables", "_terms")

    def __init__(self, variables: Iterable[str], terms: Optional[Mapping[Monomial, float]] = None):
        self._variables = tuple(variables)
        n = len(self._variables)
        clean: Dict[Monomial, float] = {}
        for mono, coeff in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != n:
                raise DimensionMismatchError(
                    f"monomial {mono} does not match {n} variables"
                )
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            coeff = float(coeff)
            if coeff != 0.0:
                clean[mono] = coeff
        self._terms = clean

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, variables: Iterable[str]) -> "Polynomial":
        return cls(variables, {})

    @classmethod
    def constant(cls, variables: Iterable[str], value: float) -> "Polynomial":
        variables = tuple(variables)
        return cls(variables, {(0,) * len(variables): value})

    @classmethod
    def variable(cls, variables: Iterable[str], name: str) -> "Polynomial":
        variables = tuple(variables)
        if name not in variables:
            raise UnknownVariableError(f"variable {name!r} not in {variables}")
        mono = tuple(1 if v == name else 0 for v in variables)
        return cls(variables, {mono: 1.0})

    @classmethod
    def from_basis(
        cls, variables: Iterable[str], basis: Sequence[Monomial], coefficients: Sequence[float]
    ) -> "Polynomial":
        terms: Dict[Monomial, float] = {}
        for mono, coeff in zip(basis, coefficients):
            terms[mono] = terms.get(mono, 0.0) + float(coeff)
        return cls(variables, terms)

    # -- basic properties -------------------------------------------------

    @property
    def variables(self) -> Tuple[str, ...]:
        return self._variables

    @property
    def terms(self) -> Dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, monomial: Monomial) -> float:
        return self._terms.get(tuple(monomial), 0.0)

    def monomials(self) -> List[Monomial]:
        return sorted(self._terms, key=monomial_key)

    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(m) for m in self._terms)

    def degree_in(self, names: Iterable[str]) -> int:
        """Maximum total degree in the given subset of variables."""
        idx = [self._index(n) for n in names]
        if not self._terms:
            return 0
        return max(sum(m[i] for i in idx) for m in self._terms)

    def used_variables(self) -> Tuple[str, ...]:
        used = set()
        for mono in self._terms:
            used.update(i for i, e in enumerate(mono) if e)
        return tuple(v for i, v in enumerate(self._variables) if i in used)

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def _index(self, name: str) -> int:
        try:
            return self._variables.index(name)
        except ValueError:
            raise UnknownVariableError(
                f"variable {name!r} not in {self._variables}"
            ) from None

    def _check_same(self, other: "Polynomial") -> None:
        if self._variables != other._variables:
            raise VariableMismatchError(
                f"variable sets differ: {self._variables} vs {other._variables}"
            )

    # -- ring operations --------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self._variables, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_same(other)
        result = dict(self._terms)
        for mono, coeff in other._terms.items():
            result[mono] = result.get(mono, 0.0) + coeff
        return Polynomial(self._variables, result)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_same(other)
        result: Dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                mono = multiply_monomials(m1, m2)
                result[mono] = result.get(mono, 0.0) + c1 * c2
        return Polynomial(self._variables, result)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return NotImplemented

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(self._variables, 1.0)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            base = base * base
            exponent >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        factor = float(factor)
        return Polynomial(
            self._variables, {m: c * factor for m, c in self._terms.items()}
        )

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._variables == other._variables and self._terms == other._terms

    def __hash__(self):
        return hash((self._variables, frozenset(self._terms.items())))

    # -- calculus and composition ----------------------------------------

    def differentiate(self, name: str) -> "Polynomial":
        i = self._index(name)
        result: Dict[Monomial, float] = {}
        for mono, coeff in self._terms.items():
            e = mono[i]
            if e == 0:
                continue
            lowered = mono[:i] + (e - 1,) + mono[i + 1:]
            result[lowered] = result.get(lowered, 0.0) + coeff * e
        return Polynomial(self._variables, result)

    def gradient(self, names: Optional[Sequence[str]] = None) -> List["Polynomial"]:
        names = self._variables if names is None else names
        return [self.differentiate(n) for n in names]

    def hessian(self, names: Optional[Sequence[str]] = None) -> List[List["Polynomial"]]:
        names = self._variables if names is None else names
        grad = self.gradient(names)
        return [[g.differentiate(n) for n in names] for g in grad]

    def substitute(self, bindings: Mapping[str, "Polynomial"]) -> "Polynomial":
        """
        Compose: replace each bound variable by a polynomial.

        All bound polynomials share one target variable tuple; unbound
        variables of this polynomial must also exist there.
        """
        if not bindings:
            return self
        for name in bindings:
            self._index(name)
        targets = {p.variables for p in bindings.values()}
        if len(targets) != 1:
            raise VariableMismatchError("substituted polynomials use different variables")
        target = targets.pop()

        factors: List[Polynomial] = []
        for name in self._variables:
            if name in bindings:
                factors.append(bindings[name])
            elif name in target:
                factors.append(Polynomial.variable(target, name))
            else:
                factors.append(None)

        powers: Dict[Tuple[int, int], Polynomial] = {}

        def power(i: int, e: int) -> Polynomial:
            key = (i, e)
            if key not in powers:
                base = factors[i]
                if base is None:
                    raise UnknownVariableError(
                        f"variable {self._variables[i]!r} is neither bound nor in {target}"
                    )
                powers[key] = base ** e
            return powers[key]

        result = Polynomial.zero(target)
        for mono, coeff in self._terms.items():
            term = Polynomial.constant(target, coeff)
            for i, e in enumerate(mono):
                if e:
                    term = term * power(i, e)
            result = result + term
        return result

    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Lift into a variable tuple containing every used variable."""
        variables = tuple(variables)
        if variables == self._variables:
            return self
        mapping = []
        for i, name in enumerate(self._variables):
            if name in variables:
                mapping.append(variables.index(name))
            else:
                mapping.append(None)
        result: Dict[Monomial, float] = {}
        for mono, coeff in self._terms.items():
            exps = [0] * len(variables)
            for i, e in enumerate(mono):
                if e == 0:
                    continue
                if mapping[i] is None:
                    raise UnknownVariableError(
                        f"variable {self._variables[i]!r} is used but not in {variables}"
                    )
                exps[mapping[i]] = e
            result[tuple(exps)] = coeff
        return Polynomial(variables, result)

    project = embed

    def prune(self, tolerance: float = PRUNE_TOLERANCE) -> "Polynomial":
        return Polynomial(
            self._variables,
            {m: c for m, c in self._terms.items() if abs(c) >= tolerance},
        )

    # -- evaluation -------------------------------------------------------

    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != len(self._variables):
            raise DimensionMismatchError(
                f"point has {len(point)} entries, expected {len(self._variables)}"
            )
        total = 0.0
        for mono, coeff in self._terms.items():
            term = coeff
            for x, e in zip(point, mono):
                if e:
                    term *= float(x) ** e
            total += term
        return total

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of a (N, n) array."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != len(self._variables):
            raise DimensionMismatchError(
                f"points have {points.shape[1]} columns, expected {len(self._variables)}"
            )
        values = np.zeros(points.shape[0])
        for mono, coeff in self._terms.items():
            term = np.full(points.shape[0], coeff)
            for i, e in enumerate(mono):
                if e:
                    term *= points[:, i] ** e
            values += term
        return values

    def integrate_over_box(self, box: Box) -> float:
        """Exact integral over a box by the per-variable power rule."""
        if box.dimension != len(self._variables):
            raise DimensionMismatchError(
                f"box has {box.dimension} dimensions, expected {len(self._variables)}"
            )
        return sum(
            coeff * monomial_box_integral(mono, box) for mono, coeff in self._terms.items()
        )

    # -- text -------------------------------------------------------------

    def to_text(self) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for mono in self.monomials():
            coeff = self._terms[mono]
            factors = [repr(abs(coeff))]
            for name, e in zip(self._variables, mono):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            body = "*".join(factors)
            if not pieces:
                pieces.append(body if coeff > 0 else f"-{body}")
            else:
                pieces.append(f"+ {body}" if coeff > 0 else f"- {body}")
        return " ".join(pieces)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Polynomial({self._variables}, {self.to_text()!r})"


def monomial_box_integral(monomial: Monomial, box: Box) -> float:
    value = 1.0
    for e, lo, hi in zip(monomial, box.lower, box.upper):
        value *= (hi ** (e + 1) - lo ** (e + 1)) / (e + 1)
    return value


# Module-level forms of the core operations


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def differentiate(p: Polynomial, name: str) -> Polynomial:
    return p.differentiate(name)


def substitute(p: Polynomial, bindings: Mapping[str, Polynomial]) -> Polynomial:
    return p.substitute(bindings)


def evaluate(p: Polynomial, point: Sequence[float]) -> float:
    return p.evaluate(point)


def integrate_over_box(p: Polynomial, box: Box) -> float:
    return p.integrate_over_box(box)


def prune(p: Polynomial, tolerance: float = PRUNE_TOLERANCE) -> Polynomial:
    return p.prune(tolerance)


# Text parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str, variables: Tuple[str, ...]):
        self.variables = variables
        self.tokens: List[Tuple[str, str]] = []
        pos = 0
        text = text.strip()
        while pos < len(text):
            match = _TOKEN.match(text, pos)
            if not match or match.end() == pos:
                raise PolynomialError(f"cannot parse polynomial near {text[pos:]!r}")
            kind = match.lastgroup
            self.tokens.append((kind, match.group(kind)))
            pos = match.end()
            while pos < len(text) and text[pos].isspace():
                pos += 1
        self.i = 0

    def peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> Tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise PolynomialError("unexpected end of polynomial text")
        self.i += 1
        return tok

    def parse(self) -> Polynomial:
        result = self.expression()
        if self.peek() is not None:
            raise PolynomialError(f"unexpected token {self.peek()[1]!r}")
        return result

    def expression(self) -> Polynomial:
        result = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def term(self) -> Polynomial:
        result = self.unary()
        while self.peek() == ("op", "*"):
            self.take()
            result = result * self.unary()
        return result

    def unary(self) -> Polynomial:
        if self.peek() == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            kind, value = self.take()
            if kind != "num" or not value.isdigit():
                raise PolynomialError(f"exponent must be a non-negative integer, got {value!r}")
            base = base ** int(value)
        return base

    def atom(self) -> Polynomial:
        kind, value = self.take()
        if kind == "num":
            return Polynomial.constant(self.variables, float(value))
        if kind == "name":
            if value not in self.variables:
                raise UnknownVariableError(f"variable {value!r} not in {self.variables}")
            return Polynomial.variable(self.variables, value)
        if value == "(":
            inner = self.expression()
            if self.take() != ("op", ")"):
                raise PolynomialError("missing closing parenthesis")
            return inner
        raise PolynomialError(f"unexpected token {value!r}")


def parse_polynomial(text, variables: Sequence[str]) -> Polynomial:
    """Parse the textual serialization (or any hand-written sum of products)."""
    variables = tuple(variables)
    if isinstance(text, (int, float)):
        return Polynomial.constant(variables, float(text))
    return _Parser(str(text), variables).parse()


def gauss_box_integral(p: Polynomial, box: Box, order: int) -> float:
    """Tensor-product Gauss-Legendre quadrature, used to cross-check integrals."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        half = 0.5 * (hi - lo)
        axes.append((lo + half * (nodes + 1.0), half * weights))
    total = 0.0
    for combo in itertools.product(*[range(order)] * box.dimension):
        point = [axes[d][0][i] for d, i in enumerate(combo)]
        weight = math.prod(axes[d][1][i] for d, i in enumerate(combo))
        total += weight * p.evaluate(point)
    return total
