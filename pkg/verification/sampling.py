"""
Sampling audit of the implications a stage certifies, plus the plain decrease:

    lyapunov   on the boundary band of {V_k <= rho_k} outside the target, the
               certified decrease (with its L_R term) holds against every
               disturbance vertex
    decrease   the plain discrete decrease on the same band; reported only,
               off the boundary it may dip by up to |L_R| times the band
    avoid      outside the target, the avoid set lies outside {V_k < rho_k}
    control    K_k(z) satisfies every control row inside {V_k <= rho_k}

Samples are uniform over the region of interest. For dynamics affine in d the
worst disturbance over the box is a vertex, so vertices suffice; otherwise
Latin-hypercube interior samples are added and the audit is sampling-only.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.stats import qmc

from config.loader import ProblemSetup, VerificationSettings
from core.reach_avoid import Solution, stage_decrease

logger = logging.getLogger(__name__)

AUDITS = ("lyapunov", "decrease", "avoid", "control")
INTERIOR_DISTURBANCE_SAMPLES = 32
SET_TOLERANCE = 1e-9


@dataclass
class AuditCheck:
    stage: int
    audit: str
    checked: int
    violations: int
    worst_margin: float
    enforced: bool = True

    @property
    def passed(self) -> bool:
        return self.violations == 0 or not self.enforced


@dataclass
class AuditReport:
    checks: List[AuditCheck] = field(default_factory=list)
    samples: int = 0
    tolerance: float = 1e-6
    sampling_only: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.checks if c.enforced)

    def summary_line(self) -> str:
        return (
            f"audit passed={str(self.passed).lower()} samples_per_stage={self.samples} "
            f"violations={self.violations} tolerance={self.tolerance:g} "
            f"sampling_only={str(self.sampling_only).lower()}"
        )


def disturbance_candidates(setup: ProblemSetup, rng: np.random.Generator) -> np.ndarray:
    """Disturbance values the Lyapunov audit is checked against, shape (P, p)."""
    box = setup.disturbance_box
    if box.dimension == 0:
        return np.zeros((1, 0))
    points = box.vertices()
    if not setup.dynamics.is_affine_in_disturbance():
        lo, hi = np.asarray(box.lower), np.asarray(box.upper)
        if np.all(hi > lo):
            sampler = qmc.LatinHypercube(d=box.dimension, seed=rng)
            interior = qmc.scale(sampler.random(INTERIOR_DISTURBANCE_SAMPLES), lo, hi)
        else:
            interior = box.sample(rng, INTERIOR_DISTURBANCE_SAMPLES)
        points = np.vstack([points, interior])
    admissible = setup.in_disturbance_set(points, SET_TOLERANCE)
    if not admissible.any():
        raise ValueError("no disturbance box vertex lies inside the disturbance set")
    return points[admissible]


def _worst(values: np.ndarray) -> float:
    return float(values.min()) if values.size else float("inf")


def audit_stage(
    solution: Solution, k: int, n_samples: int, seed: int, settings: VerificationSettings
) -> List[AuditCheck]:
    setup = solution.setup
    stage = solution.stage(k)
    next_stage = solution.stage(k + 1)
    tol = settings.audit_tolerance
    rng = np.random.default_rng([seed, k])
    z = setup.roi.sample(rng, n_samples)
    level = stage.level().evaluate_batch(z)
    outside_target = setup.target.evaluate_batch(z) > 0.0

    # lyapunov
    band = settings.band * (1.0 + abs(stage.rho))
    on_band = z[(np.abs(level) <= band) & outside_target]
    margins = np.full(len(on_band), np.inf)
    plain_margins = np.full(len(on_band), np.inf)
    if len(on_band):
        decrease = stage_decrease(setup, stage, next_stage)
        plain = stage_decrease(setup, stage, next_stage, boundary_term=False)
        for d in disturbance_candidates(setup, rng):
            points = np.hstack([on_band, np.tile(d, (len(on_band), 1))])
            margins = np.minimum(margins, decrease.evaluate_batch(points))
            plain_margins = np.minimum(plain_margins, plain.evaluate_batch(points))
    checks = [
        AuditCheck(k, "lyapunov", len(on_band), int(np.sum(margins < -tol)), _worst(margins)),
        AuditCheck(
            k, "decrease", len(on_band), int(np.sum(plain_margins < -tol)), _worst(plain_margins),
            enforced=False,
        ),
    ]

    # avoid
    in_avoid = setup.avoid.evaluate_batch(z) <= 0.0
    avoid_margins = level[in_avoid & outside_target]
    checks.append(
        AuditCheck(k, "avoid", len(avoid_margins), int(np.sum(avoid_margins < -tol)), _worst(avoid_margins))
    )

    # control
    inside = z[level <= 0.0]
    control_margins = np.full(len(inside), np.inf)
    if len(inside) and stage.K:
        u = np.column_stack([K.evaluate_batch(inside) for K in stage.K])
        for row in setup.control_set:
            control_margins = np.minimum(control_margins, -row.evaluate_batch(u))
    checks.append(
        AuditCheck(k, "control", len(inside), int(np.sum(control_margins < -tol)), _worst(control_margins))
    )

    for check in checks:
        logger.debug(
            "stage=%d audit=%s checked=%d violations=%d worst_margin=%.3e",
            k, check.audit, check.checked, check.violations, check.worst_margin,
        )
    return checks


def sample_audit(
    solution: Solution,
    n_samples: Optional[int] = None,
    seed: int = 0,
    settings: Optional[VerificationSettings] = None,
    threads: int = 1,
) -> AuditReport:
    """
    Run the audits on every synthesized stage.

    Args:
        n_samples: Uniform ROI samples per stage (defaults to settings.audit_samples)
        seed: Base seed; stage k draws from default_rng([seed, k])
    """
    settings = settings or solution.setup.verification
    n_samples = settings.audit_samples if n_samples is None else n_samples
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    report = AuditReport(
        samples=n_samples,
        tolerance=settings.audit_tolerance,
        sampling_only=not solution.setup.dynamics.is_affine_in_disturbance(),
    )
    stages = sorted(solution.synthesized(), reverse=True)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = pool.map(lambda k: audit_stage(solution, k, n_samples, seed, settings), stages)
        for checks in results:
            report.checks.extend(checks)
    for check in report.checks:
        if not check.passed:
            logger.warning(
                "stage=%d audit=%s status=violated violations=%d worst_margin=%.3e",
                check.stage, check.audit, check.violations, check.worst_margin,
            )
    logger.info(report.summary_line())
    return report
