"""
Plain-text verification reports.

Each check renders as a block of human-readable lines grouped by stage,
followed by one machine-readable ``key=value`` summary line.
"""

from collections import defaultdict
from typing import Dict, List, Optional

from verification.certificates import CertificateReport, RowCheck
from verification.grid_oracle import ContainmentReport, GridOracle
from verification.sampling import AuditCheck, AuditReport
from verification.simulation import SimulationReport


class ReportFormatter:
    """
    Formats verification results.

    Args:
        show_passing: Also list rows that passed (failures are always listed)
    """

    def __init__(self, show_passing: bool = False):
        self.show_passing = show_passing

    def certificates(self, report: CertificateReport) -> str:
        lines = ["== certificate re-check =="]
        grouped = self._group_by_stage(report.rows)
        for stage in sorted(grouped, reverse=True):
            rows = grouped[stage]
            failed = [r for r in rows if not r.passed]
            lines.append(f"stage {stage}: {len(rows) - len(failed)}/{len(rows)} rows pass")
            listed = rows if self.show_passing else failed
            for row in sorted(listed, key=lambda r: (r.passed, -r.residual)):
                lines.append(self._format_row(row))
        lines.append(report.summary_line())
        return "\n".join(lines)

    def audit(self, report: AuditReport) -> str:
        lines = ["== sampling audit =="]
        if report.sampling_only:
            lines.append("dynamics are not affine in d: disturbance check is sampling-only")
        grouped = self._group_by_stage(report.checks)
        for stage in sorted(grouped, reverse=True):
            parts = [self._format_audit(c) for c in grouped[stage]]
            lines.append(f"stage {stage}: " + "; ".join(parts))
        lines.append(report.summary_line())
        return "\n".join(lines)

    def oracle(self, oracle: GridOracle, containment: Optional[ContainmentReport] = None) -> str:
        lines = ["== grid oracle =="]
        for k in sorted(oracle.masks, reverse=True):
            lines.append(f"stage {k}: oracle fraction of grid {oracle.fraction(k):.4f}")
        lines.append("successors leaving the region of interest count as outside R")
        lines.append(oracle.summary_line())
        if containment is not None:
            for s in containment.stages:
                flag = "" if s.fraction >= containment.threshold else "  BELOW THRESHOLD"
                lines.append(
                    f"stage {s.stage}: {s.inside}/{s.qualifying} qualifying samples inside "
                    f"(fraction {s.fraction:.4f}){flag}"
                )
            lines.append(containment.summary_line())
        return "\n".join(lines)

    def simulation(self, report: SimulationReport) -> str:
        lines = [f"== closed-loop simulation (policy {report.policy}) =="]
        for i, outcome in enumerate(report.outcomes):
            if outcome.verdict != "reached" or self.show_passing:
                hit = "-" if outcome.first_hit is None else f"{outcome.first_hit:.4g}"
                lines.append(f"run {i}: {outcome.verdict} at s={hit}")
        lines.append(report.summary_line())
        return "\n".join(lines)

    @staticmethod
    def _group_by_stage(items) -> Dict[int, List]:
        grouped = defaultdict(list)
        for item in items:
            grouped[item.stage].append(item)
        return dict(grouped)

    @staticmethod
    def _format_row(row: RowCheck) -> str:
        status = "pass" if row.passed else "FAIL"
        detail = f" ({row.detail})" if row.detail else ""
        return (
            f"  {status} {row.row}: residual={row.residual:.3e} "
            f"lambda_min={row.lam_min:.3e}{detail}"
        )

    @staticmethod
    def _format_audit(check: AuditCheck) -> str:
        worst = "n/a" if check.checked == 0 else f"{check.worst_margin:.3e}"
        note = "" if check.enforced else " (reported only)"
        return f"{check.audit} {check.violations}/{check.checked} violations, worst margin {worst}{note}"
