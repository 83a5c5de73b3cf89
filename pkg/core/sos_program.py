"""
SOS Program Compiler for sosreach

Builds symbolic sum-of-squares programs (decision polynomials, "expression
is SOS" constraints, polynomial identities and a linear objective) and
compiles them into the standard-form SDP of ``core.sdp``. Solutions are
mapped back to concrete polynomials and Gram matrices.

Expressions must stay affine in the decision variables. A product of two
expressions that both carry decision variables is rejected; callers freeze
one factor instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from core.conic_solver import ConicSolution, SolverSettings, SolverStatus
from core.conic_solver import solve as solve_conic
from core.polynomial import (
    Monomial,
    Polynomial,
    UnknownVariableError,
    VariableMismatchError,
    monomial_basis,
    monomial_degree,
    monomial_key,
    multiply_monomials,
)
from core.sdp import SQRT2, SdpProblem, svec_index, svec_length

logger = logging.getLogger(__name__)

EXTRACT_TOLERANCE = 1e-12


class SosProgramError(Exception):
    """Base class for SOS program construction and extraction errors."""


class DegreeOverflowError(SosProgramError):
    """An expression monomial is outside the span of the Gram basis products."""


class BilinearityError(SosProgramError):
    """Two factors of a product both carry decision variables."""


class EmptyProgramError(SosProgramError):
    """The program has no constraints to compile."""


class InfeasibleSolutionError(SosProgramError):
    """Values were requested from a solution without a feasible point."""


@dataclass(frozen=True)
class DecisionPolynomial:
    """Polynomial with one scalar decision variable per basis monomial."""

    name: str
    variables: Tuple[str, ...]
    basis: Tuple[Monomial, ...]
    var_ids: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.basis)

    def expr(self) -> "PolyExpression":
        linear = {m: {vid: 1.0} for m, vid in zip(self.basis, self.var_ids)}
        return PolyExpression(self.variables, linear, Polynomial.zero(self.variables))


class PolyExpression:
    """
    Affine expression in decision variables with polynomial coefficients.

    ``linear`` maps monomial -> {decision variable id -> coefficient};
    ``constant`` is the decision-free part.
    """

    __slots__ = ("variables", "linear", "constant")

    def __init__(
        self,
        variables: Sequence[str],
        linear: Optional[Mapping[Monomial, Mapping[int, float]]] = None,
        constant: Optional[Polynomial] = None,
    ):
        self.variables = tuple(variables)
        self.linear: Dict[Monomial, Dict[int, float]] = {}
        for mono, coeffs in (linear or {}).items():
            kept = {vid: float(c) for vid, c in coeffs.items() if c != 0.0}
            if kept:
                self.linear[tuple(mono)] = kept
        self.constant = constant if constant is not None else Polynomial.zero(self.variables)
        if self.constant.variables != self.variables:
            raise VariableMismatchError(
                f"constant part over {self.constant.variables}, expected {self.variables}"
            )

    @classmethod
    def known(cls, poly: Polynomial) -> "PolyExpression":
        return cls(poly.variables, None, poly)

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "PolyExpression":
        return cls(variables)

    def _coerce(self, other) -> "PolyExpression":
        if isinstance(other, PolyExpression):
            if other.variables != self.variables:
                raise VariableMismatchError(
                    f"expressions over {self.variables} and {other.variables}"
                )
            return other
        if isinstance(other, Polynomial):
            if other.variables != self.variables:
                raise VariableMismatchError(
                    f"expression over {self.variables}, polynomial over {other.variables}"
                )
            return PolyExpression.known(other)
        if isinstance(other, (int, float)):
            return PolyExpression.known(Polynomial.constant(self.variables, other))
        raise TypeError(f"cannot combine an expression with {type(other).__name__}")

    @property
    def is_known(self) -> bool:
        return not self.linear

    def decision_ids(self) -> List[int]:
        ids = set()
        for coeffs in self.linear.values():
            ids.update(coeffs)
        return sorted(ids)

    def monomials(self) -> List[Monomial]:
        monos = set(self.linear) | set(self.constant.terms)
        return sorted(monos, key=monomial_key)

    def degree(self) -> int:
        return max((monomial_degree(m) for m in self.monomials()), default=0)

    def used_variables(self) -> Tuple[str, ...]:
        used = set()
        for mono in self.monomials():
            used.update(i for i, e in enumerate(mono) if e)
        return tuple(v for i, v in enumerate(self.variables) if i in used)

    def __add__(self, other):
        other = self._coerce(other)
        linear = {m: dict(c) for m, c in self.linear.items()}
        for mono, coeffs in other.linear.items():
            slot = linear.setdefault(mono, {})
            for vid, c in coeffs.items():
                slot[vid] = slot.get(vid, 0.0) + c
        return PolyExpression(self.variables, linear, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def scale(self, factor: float) -> "PolyExpression":
        factor = float(factor)
        linear = {m: {vid: c * factor for vid, c in cs.items()} for m, cs in self.linear.items()}
        return PolyExpression(self.variables, linear, self.constant.scale(factor))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        other = self._coerce(other)
        if not self.is_known and not other.is_known:
            raise BilinearityError(
                "product of two expressions that both carry decision variables"
            )
        if self.is_known:
            return other._times_known(self.constant)
        return self._times_known(other.constant)

    __rmul__ = __mul__

    def _times_known(self, poly: Polynomial) -> "PolyExpression":
        linear: Dict[Monomial, Dict[int, float]] = {}
        for m1, coeffs in self.linear.items():
            for m2, c2 in poly.items():
                slot = linear.setdefault(multiply_monomials(m1, m2), {})
                for vid, c1 in coeffs.items():
                    slot[vid] = slot.get(vid, 0.0) + c1 * c2
        return PolyExpression(self.variables, linear, self.constant * poly)

    def differentiate(self, name: str) -> "PolyExpression":
        if name not in self.variables:
            raise UnknownVariableError(f"variable {name!r} not in {self.variables}")
        i = self.variables.index(name)
        linear: Dict[Monomial, Dict[int, float]] = {}
        for mono, coeffs in self.linear.items():
            e = mono[i]
            if e == 0:
                continue
            lowered = mono[:i] + (e - 1,) + mono[i + 1:]
            slot = linear.setdefault(lowered, {})
            for vid, c in coeffs.items():
                slot[vid] = slot.get(vid, 0.0) + c * e
        return PolyExpression(self.variables, linear, self.constant.differentiate(name))

    def evaluate(self, values: np.ndarray) -> Polynomial:
        """Concrete polynomial once every decision variable has a value."""
        terms = dict(self.constant.terms)
        for mono, coeffs in self.linear.items():
            terms[mono] = terms.get(mono, 0.0) + sum(c * values[vid] for vid, c in coeffs.items())
        return Polynomial(self.variables, terms)


Expression = Union[PolyExpression, Polynomial, float, int]


@dataclass
class SosConstraint:
    name: str
    expression: PolyExpression
    gram_basis: List[Monomial]

    @property
    def gram_dimension(self) -> int:
        return len(self.gram_basis)


@dataclass
class _Equality:
    name: str
    expression: PolyExpression


@dataclass
class SosSolution:
    """Solver outcome mapped back onto the program's decision variables."""

    status: SolverStatus
    values: Optional[np.ndarray]
    grams: Dict[str, np.ndarray] = field(default_factory=dict)
    gram_bases: Dict[str, List[Monomial]] = field(default_factory=dict)
    objective: float = float("nan")
    stats: Dict[str, object] = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.status.has_solution and self.values is not None

    def _require(self) -> np.ndarray:
        if not self.has_solution:
            raise InfeasibleSolutionError(
                f"solution status is {self.status.value}; no values to extract"
            )
        return self.values

    def extract(self, dp: DecisionPolynomial) -> Polynomial:
        values = self._require()
        coeffs = [values[vid] for vid in dp.var_ids]
        return Polynomial.from_basis(dp.variables, dp.basis, coeffs).prune(EXTRACT_TOLERANCE)

    def scalar(self, dp: DecisionPolynomial) -> float:
        values = self._require()
        if len(dp.var_ids) != 1:
            raise SosProgramError(f"{dp.name} is not a scalar decision variable")
        value = float(values[dp.var_ids[0]])
        return 0.0 if abs(value) < EXTRACT_TOLERANCE else value

    def evaluate(self, expression: PolyExpression) -> Polynomial:
        return expression.evaluate(self._require())


class SosProgram:
    """
    Symbolic SOS program over a fixed ambient variable tuple.

    Example:
        prog = SosProgram(["x"])
        c = prog.declare_scalar("c")
        prog.assert_sos(Polynomial.variable(["x"], "x") ** 2 + 1 - c.expr())
        prog.maximize(c)
        solution = prog.solve()
    """

    def __init__(self, variables: Sequence[str], name: str = "sos"):
        self.variables = tuple(variables)
        self.name = name
        self._kinds: List[str] = []  # "free" | "nonneg" per decision variable id
        self._decisions: List[DecisionPolynomial] = []
        self._constraints: List[Union[SosConstraint, _Equality]] = []
        self._objective: Dict[int, float] = {}
        self.coefficient_bound: Optional[float] = None

    # -- declarations -----------------------------------------------------

    def _new_ids(self, count: int, kind: str) -> Tuple[int, ...]:
        start = len(self._kinds)
        self._kinds.extend([kind] * count)
        return tuple(range(start, start + count))

    def declare_poly(self, basis: Sequence[Monomial], name: Optional[str] = None) -> DecisionPolynomial:
        basis = [tuple(m) for m in basis]
        if not basis:
            raise SosProgramError("decision polynomial basis must be non-empty")
        for mono in basis:
            if len(mono) != len(self.variables):
                raise SosProgramError(
                    f"basis monomial {mono} does not match {len(self.variables)} variables"
                )
        basis = sorted(set(basis), key=monomial_key)
        name = name or f"p{len(self._decisions)}"
        dp = DecisionPolynomial(name, self.variables, tuple(basis), self._new_ids(len(basis), "free"))
        self._decisions.append(dp)
        return dp

    def declare_scalar(self, name: Optional[str] = None, nonneg: bool = False) -> DecisionPolynomial:
        zero = (0,) * len(self.variables)
        name = name or f"s{len(self._decisions)}"
        dp = DecisionPolynomial(
            name, self.variables, (zero,), self._new_ids(1, "nonneg" if nonneg else "free")
        )
        self._decisions.append(dp)
        return dp

    def declare_sos_poly(
        self, gram_basis: Sequence[Monomial], name: Optional[str] = None
    ) -> DecisionPolynomial:
        """Decision polynomial constrained SOS through its own Gram block."""
        gram_basis = sorted({tuple(m) for m in gram_basis}, key=monomial_key)
        products = {multiply_monomials(a, b) for a in gram_basis for b in gram_basis}
        dp = self.declare_poly(products, name)
        self.assert_sos(dp.expr(), gram_basis=gram_basis, name=f"{dp.name}.sos")
        return dp

    @property
    def decisions(self) -> List[DecisionPolynomial]:
        return list(self._decisions)

    @property
    def constraints(self) -> List[SosConstraint]:
        return [c for c in self._constraints if isinstance(c, SosConstraint)]

    # -- constraints ------------------------------------------------------

    def _as_expression(self, expr: Expression) -> PolyExpression:
        if isinstance(expr, PolyExpression):
            if expr.variables != self.variables:
                raise VariableMismatchError(
                    f"expression over {expr.variables}, program over {self.variables}"
                )
            return expr
        return PolyExpression.zero(self.variables) + expr

    def default_gram_basis(self, expression: PolyExpression) -> List[Monomial]:
        half = math.ceil(expression.degree() / 2)
        return monomial_basis(expression.used_variables(), half, self.variables)

    def assert_sos(
        self,
        expression: Expression,
        gram_basis: Optional[Sequence[Monomial]] = None,
        name: Optional[str] = None,
    ) -> SosConstraint:
        expression = self._as_expression(expression)
        if gram_basis is None:
            gram_basis = self.default_gram_basis(expression)
        else:
            gram_basis = sorted({tuple(m) for m in gram_basis}, key=monomial_key)
        name = name or f"sos{len(self._constraints)}"
        reachable = {multiply_monomials(a, b) for a in gram_basis for b in gram_basis}
        for mono in expression.monomials():
            if mono not in reachable:
                raise DegreeOverflowError(
                    f"constraint {name}: monomial {mono} is outside the Gram basis span "
                    f"(basis degree {max(map(monomial_degree, gram_basis), default=0)})"
                )
        constraint = SosConstraint(name, expression, list(gram_basis))
        self._constraints.append(constraint)
        logger.debug(
            "program=%s constraint=%s gram_dim=%d degree=%d",
            self.name, name, len(gram_basis), expression.degree(),
        )
        return constraint

    def assert_poly_eq(self, lhs: Expression, rhs: Expression, name: Optional[str] = None) -> None:
        difference = self._as_expression(lhs) - self._as_expression(rhs)
        self._constraints.append(_Equality(name or f"eq{len(self._constraints)}", difference))

    def assert_nonneg(self, expression: Expression, name: Optional[str] = None) -> None:
        """Scalar (degree-0) expression >= 0, through a nonnegative slack."""
        expression = self._as_expression(expression)
        if expression.degree() > 0:
            raise SosProgramError("assert_nonneg takes degree-0 expressions only")
        slack = self.declare_scalar(f"{name or 'nonneg'}.slack", nonneg=True)
        self.assert_poly_eq(expression, slack.expr(), name)

    def maximize(self, dp: DecisionPolynomial, weights: Optional[Sequence[float]] = None) -> None:
        """Add sum_i weights_i * coefficient_i of dp to the maximization objective."""
        if weights is None:
            weights = [1.0] * len(dp.var_ids)
        if len(weights) != len(dp.var_ids):
            raise SosProgramError(f"{len(weights)} weights for {len(dp.var_ids)} coefficients")
        for vid, w in zip(dp.var_ids, weights):
            self._objective[vid] = self._objective.get(vid, 0.0) + float(w)

    def minimize(self, dp: DecisionPolynomial, weights: Optional[Sequence[float]] = None) -> None:
        if weights is None:
            weights = [1.0] * len(dp.var_ids)
        self.maximize(dp, [-float(w) for w in weights])

    def bound_free_coefficients(self, limit: float) -> None:
        """Add |c| <= limit on every free decision coefficient at compile time."""
        if limit <= 0:
            raise ValueError("coefficient bound must be positive")
        self.coefficient_bound = float(limit)

    # -- compilation ------------------------------------------------------

    def compile(self) -> SdpProblem:
        if not self._constraints:
            raise EmptyProgramError(f"program {self.name} has no constraints")

        free_ids = [i for i, k in enumerate(self._kinds) if k == "free"]
        nonneg_ids = [i for i, k in enumerate(self._kinds) if k == "nonneg"]
        column: Dict[int, int] = {}
        for col, vid in enumerate(free_ids):
            column[vid] = col
        n_free = len(free_ids)
        for col, vid in enumerate(nonneg_ids):
            column[vid] = n_free + col
        n_bound = 2 * n_free if self.coefficient_bound is not None else 0
        n_nonneg = len(nonneg_ids) + n_bound

        sos = self.constraints
        psd_dims = [c.gram_dimension for c in sos]
        offsets = []
        offset = n_free + n_nonneg
        for n in psd_dims:
            offsets.append(offset)
            offset += svec_length(n)
        n_columns = offset

        rows: List[int] = []
        cols: List[int] = []
        vals: List[float] = []
        rhs: List[float] = []
        labels: List[str] = []
        block = 0
        for constraint in self._constraints:
            expr = constraint.expression
            gram_terms: Dict[Monomial, List[Tuple[int, float]]] = {}
            if isinstance(constraint, SosConstraint):
                basis = constraint.gram_basis
                n = len(basis)
                for q in range(n):
                    for p in range(q, n):
                        mono = multiply_monomials(basis[p], basis[q])
                        weight = 1.0 if p == q else SQRT2
                        gram_terms.setdefault(mono, []).append(
                            (offsets[block] + svec_index(p, q, n), weight)
                        )
                block += 1
            monos = sorted(set(expr.monomials()) | set(gram_terms), key=monomial_key)
            for mono in monos:
                r = len(rhs)
                # gram . products - decision part = known part
                for col, weight in gram_terms.get(mono, ()):
                    rows.append(r)
                    cols.append(col)
                    vals.append(weight)
                for vid, coeff in sorted(expr.linear.get(mono, {}).items()):
                    rows.append(r)
                    cols.append(column[vid])
                    vals.append(-coeff)
                rhs.append(expr.constant.coefficient(mono))
                labels.append(f"{constraint.name}:{mono}")

        if self.coefficient_bound is not None:
            base = n_free + len(nonneg_ids)
            for k in range(n_free):
                for sign, slack in ((1.0, base + 2 * k), (-1.0, base + 2 * k + 1)):
                    r = len(rhs)
                    rows.extend([r, r])
                    cols.extend([k, slack])
                    vals.extend([sign, 1.0])
                    rhs.append(self.coefficient_bound)
                    labels.append(f"bound:{k}:{'+' if sign > 0 else '-'}")

        c = np.zeros(n_columns)
        for vid, weight in self._objective.items():
            c[column[vid]] -= weight
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n_columns))
        A.sum_duplicates()
        problem = SdpProblem(
            n_free=n_free,
            n_nonneg=n_nonneg,
            psd_dims=tuple(psd_dims),
            A=A,
            b=np.array(rhs, dtype=float),
            c=c,
            row_labels=labels,
            block_labels=[con.name for con in sos],
        )
        logger.debug(
            "program=%s compiled rows=%d columns=%d blocks=%s",
            self.name, problem.n_rows, problem.n_columns, list(psd_dims),
        )
        return problem

    def interpret(self, problem: SdpProblem, result: ConicSolution) -> SosSolution:
        """Map a conic solution of ``compile()`` output back onto decision variables."""
        if not result.status.has_solution:
            return SosSolution(status=result.status, values=None, stats=dict(result.stats))
        free, nonneg, blocks = problem.split(result.x)
        values = np.zeros(len(self._kinds))
        f = n = 0
        for vid, kind in enumerate(self._kinds):
            if kind == "free":
                values[vid] = free[f]
                f += 1
            else:
                values[vid] = nonneg[n]
                n += 1
        sos = self.constraints
        if result.psd_blocks and len(result.psd_blocks) == len(sos):
            blocks = result.psd_blocks
        grams = {con.name: np.asarray(Q) for con, Q in zip(sos, blocks)}
        bases = {con.name: list(con.gram_basis) for con in sos}
        return SosSolution(
            status=result.status,
            values=values,
            grams=grams,
            gram_bases=bases,
            objective=-result.objective,
            stats=dict(result.stats),
        )

    def solve(self, settings: Optional[SolverSettings] = None) -> SosSolution:
        problem = self.compile()
        result = solve_conic(problem, settings)
        solution = self.interpret(problem, result)
        logger.info(
            "program=%s status=%s objective=%s rows=%d blocks=%d",
            self.name, solution.status.value,
            f"{solution.objective:.6g}" if solution.has_solution else "nan",
            problem.n_rows, len(problem.psd_dims),
        )
        return solution


def gram_polynomial(variables: Sequence[str], basis: Sequence[Monomial], gram: np.ndarray) -> Polynomial:
    """The polynomial nu(x)^T Q nu(x) for a Gram basis nu."""
    terms: Dict[Monomial, float] = {}
    n = len(basis)
    for p in range(n):
        for q in range(n):
            mono = multiply_monomials(basis[p], basis[q])
            terms[mono] = terms.get(mono, 0.0) + float(gram[p, q])
    return Polynomial(variables, terms)


def certificate_residual(
    expression: Polynomial, basis: Sequence[Monomial], gram: np.ndarray
) -> Tuple[float, float]:
    """
    Re-check one SOS certificate without a solver.

    Returns:
        (max |coefficient| of expression - nu^T Q nu, smallest eigenvalue of Q)
    """
    gram = np.asarray(gram, dtype=float)
    if gram.shape != (len(basis), len(basis)):
        raise ValueError(
            f"Gram matrix shape {gram.shape} does not match basis length {len(basis)}"
        )
    sym = 0.5 * (gram + gram.T)
    residual = expression - gram_polynomial(expression.variables, basis, sym)
    lam_min = float(np.linalg.eigvalsh(sym).min()) if len(basis) else 0.0
    return residual.max_abs_coefficient(), lam_min


def certificate_passes(
    expression: Polynomial,
    basis: Sequence[Monomial],
    gram: np.ndarray,
    residual_tolerance: float = 1e-6,
    eigenvalue_tolerance: float = 1e-8,
) -> bool:
    residual, lam_min = certificate_residual(expression, basis, gram)
    scale = 1.0 + expression.max_abs_coefficient()
    return residual <= residual_tolerance * scale and lam_min >= -eigenvalue_tolerance


def solve(program: SosProgram, settings: Optional[SolverSettings] = None) -> SosSolution:
    return program.solve(settings)


def compile_program(program: SosProgram) -> SdpProblem:
    return program.compile()


def extract(solution: SosSolution, dp: DecisionPolynomial) -> Polynomial:
    return solution.extract(dp)
