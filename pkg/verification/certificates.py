"""
Certificate re-check.

Every persisted Gram matrix is compared against the row polynomial rebuilt
from the stage data alone: the coefficient residual of row - nu^T Q nu and
the smallest eigenvalue of Q. No solver is involved.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

from config.loader import VerificationSettings
from core.reach_avoid import Solution, stage_rows
from core.solution_store import CertificateDataError
from core.sos_program import certificate_residual

logger = logging.getLogger(__name__)

FINAL_ROW = "final"


@dataclass
class RowCheck:
    stage: int
    row: str
    residual: float
    lam_min: float
    passed: bool
    detail: str = ""


@dataclass
class CertificateReport:
    rows: List[RowCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> List[RowCheck]:
        return [r for r in self.rows if not r.passed]

    @property
    def worst_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)

    @property
    def worst_eigenvalue(self) -> float:
        return min((r.lam_min for r in self.rows), default=0.0)

    def summary_line(self) -> str:
        return (
            f"certificates passed={str(self.passed).lower()} rows={len(self.rows)} "
            f"failed={len(self.failures)} worst_residual={self.worst_residual:.3e} "
            f"worst_lambda_min={self.worst_eigenvalue:.3e}"
        )


def check_final_stage(solution: Solution) -> RowCheck:
    """V_N - rho_N - phi_T must vanish coefficient by coefficient."""
    setup = solution.setup
    stage = solution.stage(solution.final_index)
    residual = (stage.V - stage.rho - setup.target).max_abs_coefficient()
    return RowCheck(
        stage=stage.index,
        row=FINAL_ROW,
        residual=residual,
        lam_min=0.0,
        passed=residual == 0.0,
    )


def check_stage(solution: Solution, k: int, settings: VerificationSettings) -> List[RowCheck]:
    setup = solution.setup
    stage = solution.stage(k)
    if not stage.certificates:
        raise CertificateDataError(f"stage {k} carries no certificate data")
    rows = stage_rows(setup, stage, solution.stage(k + 1))
    checks = []
    for name, expression in rows.items():
        cert = stage.certificates.get(name)
        if cert is None:
            checks.append(RowCheck(k, name, float("inf"), float("-inf"), False, "missing certificate"))
            continue
        try:
            residual, lam_min = certificate_residual(expression, cert.basis, cert.gram)
        except ValueError as exc:
            checks.append(RowCheck(k, name, float("inf"), float("-inf"), False, str(exc)))
            continue
        scale = 1.0 + expression.max_abs_coefficient()
        passed = (
            residual <= settings.residual_tolerance * scale
            and lam_min >= -settings.eigenvalue_tolerance
        )
        checks.append(RowCheck(k, name, residual, lam_min, passed))
    return checks


def check_certificates(
    solution: Solution,
    settings: Optional[VerificationSettings] = None,
    threads: int = 1,
) -> CertificateReport:
    """
    Re-check every stage and constraint row of a solution.

    Raises:
        CertificateDataError: If a synthesized stage has no certificates
    """
    settings = settings or solution.setup.verification
    report = CertificateReport(rows=[check_final_stage(solution)])
    stages = sorted(solution.synthesized(), reverse=True)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: check_stage(solution, k, settings), stages))
    else:
        results = [check_stage(solution, k, settings) for k in stages]
    for checks in results:
        report.rows.extend(checks)
    for failure in report.failures:
        logger.warning(
            "stage=%d row=%s status=failed residual=%.3e lambda_min=%.3e detail=%s",
            failure.stage, failure.row, failure.residual, failure.lam_min, failure.detail or "-",
        )
    logger.info(report.summary_line())
    return report
