"""
One-dimensional integrator x' = u, |u| <= u_max, no disturbance.

From a target interval [-r, r] the exact reach set after time T is
[-(r + u_max T), r + u_max T], which makes this the reference toy for
containment checks.
"""

from typing import Any, Dict, Optional, Sequence

from config.loader import Dynamics, Hyperparameters, ProblemSetup, uniform_times
from core.polynomial import Box, Polynomial

DEFAULT_PARAMS: Dict[str, Any] = {
    "u_max": 1.0,
    "target_radius": 0.5,
    "roi_half_width": 3.0,
    "dt": 0.5,
    "steps": 2,
}


def default_hyperparameters() -> Hyperparameters:
    return Hyperparameters(
        deg_V=2,
        deg_K=1,
        lambda_lyap=5.0,
        lambda_it=20.0,
        alpha=1.5,
        delta_slack=1e-7,
        delta_conv=1e-3,
        max_iter=15,
    )


def analytic_reach_interval(target_radius: float, u_max: float, horizon: float):
    reach = target_radius + u_max * horizon
    return -reach, reach


def build(
    u_max: float = 1.0,
    target_radius: float = 0.5,
    roi_half_width: float = 3.0,
    dt: float = 0.5,
    steps: int = 2,
    times: Optional[Sequence[float]] = None,
    hyperparameters: Optional[Hyperparameters] = None,
) -> ProblemSetup:
    if u_max <= 0 or target_radius <= 0 or dt <= 0:
        raise ValueError("u_max, target_radius and dt must be positive")
    x = Polynomial.variable(("x",), "x")
    u = Polynomial.variable(("u",), "u")
    dynamics = Dynamics(["x"], ["u"], [], [Polynomial.variable(("x", "u"), "u")])
    w = float(roi_half_width)
    return ProblemSetup(
        name="integrator_1d",
        dynamics=dynamics,
        target=x ** 2 - target_radius ** 2,
        control_set=[u - u_max, -u - u_max],
        roi=Box((-w,), (w,)),
        times=list(times) if times is not None else uniform_times(-dt * steps, steps),
        hyperparameters=hyperparameters or default_hyperparameters(),
        disturbance_box=Box((), ()),
        control_box=Box((-u_max,), (u_max,)),
    )
