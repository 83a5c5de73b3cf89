"""
Two kinematic cars.

Joint state z = (xa1, xa2, xa3, xd1, xd2, xd3) with positions and headings;
the attacker controls (va, wa), the defender (vd, wd). sin and cos of the
headings are replaced by Chebyshev approximants valid on
[-angle_bound, angle_bound], which the region of interest enforces.
"""

import math
from typing import Any, Dict, Optional, Sequence

from config.loader import (
    Dynamics,
    Hyperparameters,
    MultiplierDegrees,
    ProblemSetup,
    uniform_times,
)
from core.polynomial import Box, Polynomial, parse_polynomial
from systems.chebyshev import chebyshev_cos, chebyshev_sin

STATES = ("xa1", "xa2", "xa3", "xd1", "xd2", "xd3")
CONTROLS = ("va", "wa")
DISTURBANCES = ("vd", "wd")

DEFAULT_PARAMS: Dict[str, Any] = {
    "va_max": 5.0,
    "wa_max": 3.0,
    "vd_max": 3.0,
    "wd_max": 1.0,
    "capture_radius": 0.25,
    "target": "xa1^2 + xa2^2 - 0.25",
    "angle_bound": math.pi / 4,
    "start": -1.0,
    "steps": 10,
}


def default_hyperparameters() -> Hyperparameters:
    return Hyperparameters(
        deg_V=4,
        deg_K=3,
        lambda_lyap=10.0,
        lambda_it=10.0,
        alpha=2.0,
        delta_slack=1e-5,
        delta_conv=1e-5,
        max_iter=10,
    )


def default_multipliers() -> MultiplierDegrees:
    return MultiplierDegrees(
        lyap_D=2, lyap_R=0, lyap_T=0, lyap_ROI=2,
        ca_T=0, ca_A=2, ca_ROI=2,
        ctrl_R=0, ctrl_D=0, ctrl_ROI=2,
        it_T=0, it_ROI=2,
    )


def _bounded_rows(variables, speed: str, rate: str, speed_max: float, rate_max: float):
    v = Polynomial.variable(variables, speed)
    w = Polynomial.variable(variables, rate)
    return [-v, v - speed_max, w - rate_max, -w - rate_max]


def build(
    va_max: float = 5.0,
    wa_max: float = 3.0,
    vd_max: float = 3.0,
    wd_max: float = 1.0,
    capture_radius: float = 0.25,
    target: Optional[str] = None,
    angle_bound: float = math.pi / 4,
    roi: Optional[Box] = None,
    start: float = -1.0,
    steps: int = 10,
    times: Optional[Sequence[float]] = None,
    hyperparameters: Optional[Hyperparameters] = None,
    multipliers: Optional[MultiplierDegrees] = None,
) -> ProblemSetup:
    if min(va_max, vd_max) <= 0:
        raise ValueError("speed bounds must be positive")
    if min(wa_max, wd_max) < 0 or capture_radius < 0:
        raise ValueError("turn-rate bounds and capture_radius must be non-negative")

    all_vars = STATES + CONTROLS + DISTURBANCES

    def var(name: str) -> Polynomial:
        return Polynomial.variable(all_vars, name)

    cos_a = chebyshev_cos(angle_bound, "xa3", all_vars)
    sin_a = chebyshev_sin(angle_bound, "xa3", all_vars)
    cos_d = chebyshev_cos(angle_bound, "xd3", all_vars)
    sin_d = chebyshev_sin(angle_bound, "xd3", all_vars)
    f = [
        var("va") * cos_a,
        var("va") * sin_a,
        var("wa"),
        var("vd") * cos_d,
        var("vd") * sin_d,
        var("wd"),
    ]
    dynamics = Dynamics(list(STATES), list(CONTROLS), list(DISTURBANCES), f)

    xa1, xa2, _, xd1, xd2, _ = (Polynomial.variable(STATES, v) for v in STATES)
    # captured within capture_radius: avoid set is {avoid <= 0}
    avoid = (xa1 - xd1) ** 2 + (xa2 - xd2) ** 2 - capture_radius ** 2

    if roi is None:
        a = float(angle_bound)
        roi = Box((-2.0, -0.5, -a, -2.0, -0.5, -a), (0.0, 0.5, a, 0.0, 0.5, a))
    return ProblemSetup(
        name="kinematic_cars",
        dynamics=dynamics,
        target=parse_polynomial(target or DEFAULT_PARAMS["target"], STATES),
        avoid=avoid,
        disturbance_set=_bounded_rows(DISTURBANCES, "vd", "wd", vd_max, wd_max),
        control_set=_bounded_rows(CONTROLS, "va", "wa", va_max, wa_max),
        roi=roi,
        times=list(times) if times is not None else uniform_times(start, steps),
        hyperparameters=hyperparameters or default_hyperparameters(),
        multipliers=multipliers or default_multipliers(),
        disturbance_box=Box((0.0, -wd_max), (vd_max, wd_max)),
        control_box=Box((0.0, -wa_max), (va_max, wa_max)),
    )
