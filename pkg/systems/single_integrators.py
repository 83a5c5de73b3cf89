"""
Two single-integrator players in the plane.

Joint state z = (xa1, xa2, xd1, xd2): attacker position driven by u,
defender position driven by d, |u_i| <= u_max, |d_i| <= d_max. The attacker
must reach a target around the origin without coming within the capture
radius of the defender.
"""

from typing import Any, Dict, Optional, Sequence

from config.loader import (
    Dynamics,
    Hyperparameters,
    MultiplierDegrees,
    ProblemSetup,
    uniform_times,
)
from core.polynomial import Box, Polynomial, parse_polynomial

STATES = ("xa1", "xa2", "xd1", "xd2")
CONTROLS = ("u1", "u2")
DISTURBANCES = ("d1", "d2")

DEFAULT_PARAMS: Dict[str, Any] = {
    "u_max": 2.0,
    "d_max": 1.0,
    "capture_radius": 0.5,
    "target": "xa1^4 + xa2^4 - 1",
    "roi_half_width": 3.0,
    "start": -2.0,
    "steps": 8,
}


def default_hyperparameters() -> Hyperparameters:
    return Hyperparameters(
        deg_V=4,
        deg_K=3,
        lambda_lyap=5.0,
        lambda_it=20.0,
        alpha=1.5,
        delta_slack=1e-9,
        delta_conv=1e-3,
        max_iter=30,
    )


def default_multipliers() -> MultiplierDegrees:
    # keeps every row at degree 4 + deg_K - 1 or lower
    return MultiplierDegrees(
        lyap_D=2, lyap_R=0, lyap_T=0, lyap_ROI=2,
        ca_T=0, ca_A=2, ca_ROI=2,
        ctrl_R=0, ctrl_D=0, ctrl_ROI=2,
        it_T=0, it_ROI=2,
    )


def build(
    u_max: float = 2.0,
    d_max: float = 1.0,
    capture_radius: float = 0.5,
    target: Optional[str] = None,
    roi_half_width: float = 3.0,
    start: float = -2.0,
    steps: int = 8,
    times: Optional[Sequence[float]] = None,
    hyperparameters: Optional[Hyperparameters] = None,
    multipliers: Optional[MultiplierDegrees] = None,
) -> ProblemSetup:
    if u_max <= 0:
        raise ValueError("u_max must be positive")
    if d_max < 0 or capture_radius < 0:
        raise ValueError("d_max and capture_radius must be non-negative")

    all_vars = STATES + CONTROLS + DISTURBANCES
    f = [Polynomial.variable(all_vars, v) for v in CONTROLS + DISTURBANCES]
    dynamics = Dynamics(list(STATES), list(CONTROLS), list(DISTURBANCES), f)

    xa1, xa2, xd1, xd2 = (Polynomial.variable(STATES, v) for v in STATES)
    # captured within capture_radius: avoid set is {avoid <= 0}
    avoid = (xa1 - xd1) ** 2 + (xa2 - xd2) ** 2 - capture_radius ** 2

    disturbance_set = [
        Polynomial.variable(DISTURBANCES, d) ** 2 - d_max ** 2 for d in DISTURBANCES
    ]
    control_set = []
    for u in CONTROLS:
        ui = Polynomial.variable(CONTROLS, u)
        control_set.extend([ui - u_max, -ui - u_max])

    w = float(roi_half_width)
    return ProblemSetup(
        name="single_integrators",
        dynamics=dynamics,
        target=parse_polynomial(target or DEFAULT_PARAMS["target"], STATES),
        avoid=avoid,
        disturbance_set=disturbance_set,
        control_set=control_set,
        roi=Box((-w,) * 4, (w,) * 4),
        times=list(times) if times is not None else uniform_times(start, steps),
        hyperparameters=hyperparameters or default_hyperparameters(),
        multipliers=multipliers or default_multipliers(),
        disturbance_box=Box((-d_max,) * 2, (d_max,) * 2),
        control_box=Box((-u_max,) * 2, (u_max,) * 2),
    )
