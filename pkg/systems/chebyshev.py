"""
Chebyshev approximations of sin and cos on [-a, a].

The series of sin(a w) and cos(a w) in Chebyshev polynomials T_k(w) have
Bessel-function coefficients:

    sin(a w) = 2 sum_{k odd}  (-1)^((k-1)/2) J_k(a) T_k(w)
    cos(a w) = J_0(a) + 2 sum_{k even >= 2} (-1)^(k/2) J_k(a) T_k(w)

Truncating after T_3 (sin) and T_2 (cos) gives the cubic and quadratic
approximants used to make kinematic-car dynamics polynomial.
"""

import math
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev
from scipy.special import jv

from core.polynomial import Polynomial


def chebyshev_coefficients(kind: str, angle_bound: float, degree: int) -> np.ndarray:
    """Coefficients c_0..c_degree of the T_k(w) series, w = theta / angle_bound."""
    if not 0.0 < angle_bound <= math.pi / 2:
        raise ValueError("angle_bound must lie in (0, pi/2]")
    coeffs = np.zeros(degree + 1)
    for k in range(degree + 1):
        if kind == "sin" and k % 2 == 1:
            coeffs[k] = 2.0 * (-1) ** ((k - 1) // 2) * jv(k, angle_bound)
        elif kind == "cos" and k % 2 == 0:
            coeffs[k] = (1.0 if k == 0 else 2.0 * (-1) ** (k // 2)) * jv(k, angle_bound)
        elif kind not in ("sin", "cos"):
            raise ValueError(f"unknown function {kind!r}")
    return coeffs


def _to_polynomial(
    coeffs: np.ndarray, angle_bound: float, variable: str, variables: Optional[Sequence[str]]
) -> Polynomial:
    variables = tuple(variables) if variables is not None else (variable,)
    power = chebyshev.cheb2poly(coeffs)
    theta = Polynomial.variable(variables, variable)
    result = Polynomial.zero(variables)
    for k, c in enumerate(power):
        if c != 0.0:
            result = result + (theta ** k).scale(c / angle_bound ** k)
    return result


def chebyshev_sin(
    angle_bound: float, variable: str = "theta", variables: Optional[Sequence[str]] = None
) -> Polynomial:
    """Odd cubic approximant of sin(theta) on [-angle_bound, angle_bound]."""
    return _to_polynomial(chebyshev_coefficients("sin", angle_bound, 3), angle_bound, variable, variables)


def chebyshev_cos(
    angle_bound: float, variable: str = "theta", variables: Optional[Sequence[str]] = None
) -> Polynomial:
    """Even quadratic approximant of cos(theta) on [-angle_bound, angle_bound]."""
    return _to_polynomial(chebyshev_coefficients("cos", angle_bound, 2), angle_bound, variable, variables)


def approximation_error(kind: str, angle_bound: float, samples: int = 10000) -> float:
    """Max |f(theta) - approximant(theta)| on a uniform sweep of the interval."""
    theta = np.linspace(-angle_bound, angle_bound, samples)
    if kind == "sin":
        approx, exact = chebyshev_sin(angle_bound), np.sin(theta)
    else:
        approx, exact = chebyshev_cos(angle_bound), np.cos(theta)
    return float(np.max(np.abs(approx.evaluate_batch(theta[:, None]) - exact)))
