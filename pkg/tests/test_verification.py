"""
Tests for the verification package: certificate re-check, sampling audit,
grid oracle and closed-loop simulation.
"""

import csv
import dataclasses
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core.reach_avoid import Certificate
from core.solution_store import CertificateDataError
from systems import integrator_1d
from tests.helpers import certified_integrator_solution, grid_game_setup, poly
from verification.certificates import FINAL_ROW, check_certificates, check_final_stage
from verification.grid_oracle import (
    build_grid_oracle,
    containment_check,
    discretize_actions,
    exhaustive_game_search,
    interpolation_margin,
)
from verification.report import ReportFormatter
from verification.sampling import AuditCheck, AuditReport, disturbance_candidates, sample_audit
from verification.simulation import (
    CAPTURED,
    REACHED,
    TIMEOUT,
    DisturbancePolicy,
    make_policy,
    rk4_step,
    sample_initial_states,
    simulate,
    simulate_batch,
    write_trajectory_csv,
)


class TestCertificates(unittest.TestCase):
    def setUp(self):
        self.solution = certified_integrator_solution()

    def test_hand_certificates_pass(self):
        report = check_certificates(self.solution)
        self.assertTrue(report.passed, report.summary_line())
        # final row plus ten rows per synthesized stage
        self.assertEqual(len(report.rows), 21)
        self.assertLess(report.worst_residual, 1e-12)
        self.assertEqual(report.rows[0].row, FINAL_ROW)

    def test_threads_do_not_change_result(self):
        single = check_certificates(self.solution)
        pooled = check_certificates(self.solution, threads=4)
        self.assertEqual(
            [(r.stage, r.row, r.passed) for r in single.rows],
            [(r.stage, r.row, r.passed) for r in pooled.rows],
        )

    def test_corrupted_gram_fails(self):
        stage = self.solution.stage(1)
        stage.certificates["ca"] = Certificate([(0,), (1,)], np.diag([0.0, 0.9]))
        report = check_certificates(self.solution)
        self.assertFalse(report.passed)
        self.assertEqual([(f.stage, f.row) for f in report.failures], [(1, "ca")])
        self.assertAlmostEqual(report.failures[0].residual, 0.1)

    def test_indefinite_gram_fails(self):
        # nu^T Q nu = x^2 exactly, but Q has eigenvalues +-0.5
        basis = [(0,), (1,), (2,)]
        gram = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
        self.solution.stage(0).certificates["V.sos"] = Certificate(basis, gram)
        report = check_certificates(self.solution)
        failure = report.failures[0]
        self.assertEqual((failure.stage, failure.row), (0, "V.sos"))
        self.assertEqual(failure.residual, 0.0)
        self.assertAlmostEqual(failure.lam_min, -0.5)

    def test_missing_certificate(self):
        del self.solution.stage(0).certificates["it"]
        report = check_certificates(self.solution)
        self.assertEqual([f.detail for f in report.failures], ["missing certificate"])

    def test_stage_without_certificates(self):
        self.solution.stage(0).certificates.clear()
        with self.assertRaises(CertificateDataError):
            check_certificates(self.solution)

    def test_final_stage_identity(self):
        self.assertTrue(check_final_stage(self.solution).passed)
        final = self.solution.stage(2)
        self.solution.stages[2] = dataclasses.replace(final, V=final.V + poly("1e-12*x"))
        self.assertFalse(check_final_stage(self.solution).passed)


class TestSamplingAudit(unittest.TestCase):
    def test_hand_solution_passes(self):
        report = sample_audit(certified_integrator_solution(), n_samples=5000, seed=1)
        self.assertTrue(report.passed, report.summary_line())
        self.assertFalse(report.sampling_only)
        self.assertEqual(len(report.checks), 8)
        lyapunov = [c for c in report.checks if c.audit == "lyapunov"]
        self.assertTrue(all(c.worst_margin >= 0.5 for c in lyapunov if c.checked))
        # plain decrease 2x^2 - 0.625 at stage 1, within 2 * band of 0.5 on the band
        plain = {c.stage: c for c in report.checks if c.audit == "decrease"}
        self.assertFalse(plain[1].enforced)
        self.assertEqual(plain[1].checked, lyapunov[0].checked)
        self.assertGreater(plain[1].worst_margin, 0.49)
        self.assertGreater(plain[0].worst_margin, 1.1)

    def test_plain_decrease_is_reported_only(self):
        checks = [
            AuditCheck(1, "lyapunov", 10, 0, 0.1),
            AuditCheck(1, "decrease", 10, 3, -0.02, enforced=False),
        ]
        report = AuditReport(checks=checks, samples=100)
        self.assertTrue(report.passed)
        self.assertEqual(report.violations, 0)
        self.assertIn(
            "decrease 3/10 violations, worst margin -2.000e-02 (reported only)",
            ReportFormatter().audit(report),
        )

    def test_aggressive_controller_violates_bounds(self):
        solution = certified_integrator_solution()
        solution.stages[0] = dataclasses.replace(solution.stage(0), K=[poly("-2*x")])
        report = sample_audit(solution, n_samples=5000, seed=1)
        self.assertFalse(report.passed)
        failed = {(c.stage, c.audit) for c in report.checks if not c.passed}
        self.assertIn((0, "control"), failed)

    def test_seeded_audit_is_reproducible(self):
        solution = certified_integrator_solution()
        a = sample_audit(solution, n_samples=2000, seed=7)
        b = sample_audit(solution, n_samples=2000, seed=7, threads=2)
        self.assertEqual(
            [(c.checked, c.worst_margin) for c in a.checks],
            [(c.checked, c.worst_margin) for c in b.checks],
        )

    def test_disturbance_candidates_are_vertices(self):
        setup = grid_game_setup()
        candidates = disturbance_candidates(setup, np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(candidates[:, 0]), [-1.0, 1.0])
        empty = disturbance_candidates(integrator_1d.build(), np.random.default_rng(0))
        self.assertEqual(empty.shape, (1, 0))


class TestGridOracle(unittest.TestCase):
    def test_matches_exhaustive_search_1d(self):
        setup = integrator_1d.build()
        oracle = build_grid_oracle(setup, resolution=13)
        exact = exhaustive_game_search(setup, oracle.axes, oracle.controls, oracle.disturbances)
        for k in range(setup.n_stages + 1):
            np.testing.assert_array_equal(oracle.masks[k], exact[k])

    def test_matches_exhaustive_search_2d(self):
        setup = grid_game_setup()
        oracle = build_grid_oracle(setup, threads=2)
        self.assertEqual(oracle.shape, (5, 5))
        exact = exhaustive_game_search(setup, oracle.axes, oracle.controls, oracle.disturbances)
        for k in range(setup.n_stages + 1):
            np.testing.assert_array_equal(oracle.masks[k], exact[k])
        # the avoid node (0, 1) is never winning
        self.assertFalse(any(oracle.masks[k][2, 4] for k in oracle.masks))

    def test_integrator_interval_growth(self):
        setup = integrator_1d.build()
        oracle = build_grid_oracle(setup, resolution=61)
        axis = oracle.axes[0]
        self.assertTrue(oracle.is_monotone())
        for k, horizon in ((2, 0.0), (1, 0.5), (0, 1.0)):
            members = axis[oracle.masks[k]]
            _, hi = integrator_1d.analytic_reach_interval(0.5, 1.0, horizon)
            self.assertAlmostEqual(members.max(), hi, delta=oracle.spacing[0])
            self.assertAlmostEqual(members.min(), -hi, delta=oracle.spacing[0])
        self.assertIn("monotone=true", oracle.summary_line())

    def test_invalid_arguments(self):
        setup = integrator_1d.build()
        with self.assertRaises(ValueError):
            build_grid_oracle(setup, resolution=2)
        with self.assertRaises(ValueError):
            discretize_actions(None, 1, 3, setup.in_control_set)
        self.assertEqual(discretize_actions(None, 0, 3, setup.in_control_set).shape, (1, 0))

    def test_interpolation_margin_quadratic(self):
        margin = interpolation_margin(poly("x^2"), np.array([[0.5], [-1.0]]), np.array([0.1]))
        # |2x| h + 1/2 * 2 * h^2
        np.testing.assert_allclose(margin, [0.11, 0.21])


class TestContainment(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.setup = integrator_1d.build()
        cls.oracle = build_grid_oracle(cls.setup, resolution=61)

    def test_hand_solution_contained(self):
        solution = certified_integrator_solution(self.setup)
        report = containment_check(solution, self.oracle, n_samples=4000, seed=3)
        self.assertTrue(report.passed, report.summary_line())
        self.assertEqual([s.stage for s in report.stages], [2, 1, 0])
        for s in report.stages:
            self.assertGreater(s.qualifying, 0)
            self.assertEqual(s.fraction, 1.0)

    def test_inflated_level_detected(self):
        solution = certified_integrator_solution(self.setup)
        solution.stages[0] = dataclasses.replace(solution.stage(0), rho=4.0)
        report = containment_check(solution, self.oracle, n_samples=4000, seed=3)
        self.assertFalse(report.passed)
        self.assertLess(report.worst_fraction, 0.9)
        self.assertIn("containment passed=false", report.summary_line())

    def test_mismatched_setup(self):
        other = integrator_1d.build(steps=3)
        solution = certified_integrator_solution(self.setup)
        with self.assertRaises(ValueError):
            containment_check(solution, build_grid_oracle(other, resolution=13))


class TestSimulation(unittest.TestCase):
    def setUp(self):
        self.solution = certified_integrator_solution()

    def test_start_in_target(self):
        outcome = simulate(self.solution, [0.3])
        self.assertEqual(outcome.verdict, REACHED)
        self.assertEqual(outcome.first_hit, -1.0)
        self.assertEqual(len(outcome.trajectory.times), 1)

    def test_reaches_from_inside(self):
        outcome = simulate(self.solution, [0.9], substeps=20)
        self.assertEqual(outcome.verdict, REACHED)
        # u = -x held per substep of 0.025: x shrinks by 0.975 and drops below 0.5 after 24 substeps
        self.assertAlmostEqual(outcome.first_hit, -1.0 + 0.6, places=6)

    def test_start_in_avoid(self):
        setup = dataclasses.replace(self.solution.setup, avoid=poly("(x - 2)^2 - 0.25"))
        solution = dataclasses.replace(self.solution, setup=setup)
        outcome = simulate(solution, [2.0])
        self.assertEqual(outcome.verdict, CAPTURED)
        self.assertEqual(outcome.first_hit, -1.0)

    def test_timeout_outside(self):
        outcome = simulate(self.solution, [2.9])
        self.assertEqual(outcome.verdict, TIMEOUT)
        self.assertIsNone(outcome.first_hit)
        # |u| is clamped to 1 over a horizon of 1
        self.assertAlmostEqual(outcome.trajectory.states[-1][0], 1.9, places=9)

    def test_batch(self):
        initial = sample_initial_states(self.solution, 8, seed=2)
        self.assertTrue(np.all(np.abs(initial) < 1.0))
        report = simulate_batch(self.solution, initial, "random", seed=2, threads=2)
        self.assertTrue(report.passed)
        self.assertEqual(report.summary_line(), "reached=8 captured=0 timeout=0")

    def test_sample_initial_states_exhausted(self):
        solution = certified_integrator_solution()
        solution.stages[0] = dataclasses.replace(solution.stage(0), rho=-1.0)
        with self.assertRaises(ValueError):
            sample_initial_states(solution, 4, max_draws=5000)

    def test_trajectory_csv(self):
        outcome = simulate(self.solution, [0.9], substeps=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.csv"
            write_trajectory_csv(self.solution.setup, outcome, path)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["time", "x", "u"])
        self.assertEqual(rows[1][:2], ["-1", "0.9"])
        self.assertEqual(rows[-1][2], "")

    def test_rk4_linear(self):
        setup = self.solution.setup
        z = rk4_step(setup, np.array([0.0]), np.array([1.0]), np.zeros(0), 0.25)
        np.testing.assert_allclose(z, [0.25])

    def test_unknown_policy(self):
        with self.assertRaises(ValueError):
            make_policy("adversarial", self.solution, np.random.default_rng(0))
        with self.assertRaises(TypeError):
            DisturbancePolicy(self.solution, np.random.default_rng(0))

    def test_initial_state_validation(self):
        with self.assertRaises(ValueError) as ctx:
            simulate(self.solution, [3.5])
        self.assertIn("region of interest", str(ctx.exception))
        with self.assertRaises(ValueError):
            simulate(self.solution, [0.0, 0.0])
        # the ROI boundary itself is allowed
        self.assertEqual(simulate(self.solution, [-3.0]).verdict, TIMEOUT)


class TestReports(unittest.TestCase):
    def test_sections_end_with_summary(self):
        solution = certified_integrator_solution()
        formatter = ReportFormatter()
        certificates = check_certificates(solution)
        text = formatter.certificates(certificates)
        self.assertIn("stage 1: 10/10 rows pass", text)
        self.assertEqual(text.splitlines()[-1], certificates.summary_line())

        audit = sample_audit(solution, n_samples=500)
        self.assertEqual(formatter.audit(audit).splitlines()[-1], audit.summary_line())

        report = simulate_batch(solution, np.array([[0.9], [2.9]]))
        text = ReportFormatter().simulation(report)
        self.assertIn("run 1: timeout at s=-", text)
        self.assertNotIn("run 0", text)
        self.assertEqual(text.splitlines()[-1], "reached=1 captured=0 timeout=1")

    def test_failures_listed(self):
        solution = certified_integrator_solution()
        solution.stage(1).certificates["ca"] = Certificate([(0,), (1,)], np.diag([0.0, 0.9]))
        text = ReportFormatter().certificates(check_certificates(solution))
        self.assertIn("FAIL ca", text)
        self.assertIn("stage 1: 9/10 rows pass", text)


if __name__ == "__main__":
    unittest.main()
