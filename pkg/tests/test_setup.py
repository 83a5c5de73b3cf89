"""
Tests for config.loader and the built-in systems.
"""

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from config.loader import (
    ConfigError,
    ConfigLoader,
    Hyperparameters,
    MultiplierDegrees,
    infer_box,
    uniform_times,
)
from core.polynomial import Box, Polynomial, parse_polynomial
from core.reach_avoid import init_final_stage
from systems import integrator_1d, kinematic_cars, single_integrators
from systems.chebyshev import approximation_error, chebyshev_coefficients, chebyshev_sin

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
EXAMPLES = (
    "single_integrators.yml",
    "single_integrators_reduced.yml",
    "kinematic_cars.yml",
    "integrator_1d.yml",
    "integrator_1d_explicit.yml",
)


class TestConfigLoader(unittest.TestCase):
    def setUp(self):
        self.loader = ConfigLoader()

    def test_example_configs_load(self):
        for name in EXAMPLES:
            with self.subTest(config=name):
                setup = self.loader.load_setup(str(CONFIG_DIR / name))
                self.assertGreater(setup.n_stages, 0)
                self.assertEqual(setup.times[-1], 0.0)

    def test_system_overrides(self):
        setup = self.loader.load_setup(str(CONFIG_DIR / "single_integrators_reduced.yml"))
        self.assertEqual(setup.name, "single_integrators_reduced")
        self.assertEqual(setup.n_stages, 4)
        self.assertEqual(setup.hyperparameters.deg_K, 1)
        # untouched hyperparameters keep the builder defaults
        self.assertEqual(setup.hyperparameters.max_iter, 30)
        self.assertEqual(setup.verification.audit_samples, 100000)

    def test_explicit_matches_builder(self):
        explicit = self.loader.load_setup(str(CONFIG_DIR / "integrator_1d_explicit.yml"))
        built = integrator_1d.build()
        self.assertEqual(explicit.states, built.states)
        self.assertEqual(explicit.target, built.target)
        self.assertEqual(explicit.times, built.times)
        self.assertEqual(explicit.control_box, built.control_box)
        self.assertEqual(explicit.dynamics.f, built.dynamics.f)

    def test_odd_value_degree_rejected(self):
        text = (CONFIG_DIR / "integrator_1d_explicit.yml").read_text()
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup(text.replace("deg_V: 2", "deg_V: 3"))
        self.assertEqual(ctx.exception.field, "hyperparameters")

    def test_missing_value_degree_rejected(self):
        text = (CONFIG_DIR / "integrator_1d_explicit.yml").read_text()
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup(text.replace("  deg_V: 2\n", ""))
        self.assertEqual(ctx.exception.field, "hyperparameters.deg_V")
        self.assertIn("missing required field", str(ctx.exception))
        head, tail = text.split("hyperparameters:")
        no_section = head + tail[tail.index("multipliers:"):]
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup(no_section)
        self.assertEqual(ctx.exception.field, "hyperparameters.deg_V")

    def test_builder_config_keeps_system_degree(self):
        setup = self.loader.parse_setup("system: integrator_1d\nhyperparameters:\n  deg_K: 1\n")
        self.assertEqual(setup.hyperparameters.deg_V, integrator_1d.build().hyperparameters.deg_V)

    def test_unknown_field(self):
        text = (CONFIG_DIR / "integrator_1d.yml").read_text()
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup(text + "\nsolver:\n  warp_speed: 9\n")
        self.assertEqual(ctx.exception.field, "solver.warp_speed")

    def test_unknown_system(self):
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup("system: {name: double_pendulum}\n")
        self.assertEqual(ctx.exception.field, "system.name")

    def test_bad_polynomial(self):
        text = (CONFIG_DIR / "integrator_1d_explicit.yml").read_text()
        with self.assertRaises(ConfigError) as ctx:
            self.loader.parse_setup(text.replace('"x^2 - 0.25"', '"x^2 - q"'))
        self.assertEqual(ctx.exception.field, "target")

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            self.loader.load_setup("does/not/exist.yml")

    def test_invalid_yaml(self):
        with self.assertRaises(ConfigError):
            self.loader.parse_setup("name: [unclosed")

    def test_dump_round_trip(self):
        for setup in (integrator_1d.build(), single_integrators.build(), kinematic_cars.build()):
            with self.subTest(system=setup.name):
                text = self.loader.dump_setup(setup)
                reloaded = self.loader.parse_setup(text)
                self.assertEqual(reloaded.target, setup.target)
                self.assertEqual(reloaded.avoid, setup.avoid)
                self.assertEqual(reloaded.dynamics.f, setup.dynamics.f)
                self.assertEqual(reloaded.times, setup.times)
                self.assertEqual(self.loader.dump_setup(reloaded), text)

    def test_save_example_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "example.yml"
            self.loader.save_example_config(str(path), system="integrator_1d")
            setup = self.loader.load_setup(str(path))
            self.assertEqual(setup.states, ("x",))


class TestSettings(unittest.TestCase):
    def test_hyperparameter_validation(self):
        with self.assertRaises(ValueError):
            Hyperparameters(deg_V=3)
        with self.assertRaises(ValueError):
            Hyperparameters(alpha=0.5)
        with self.assertRaises(ValueError):
            Hyperparameters(gradient_stage="previous")

    def test_multiplier_degrees(self):
        with self.assertRaises(ValueError):
            MultiplierDegrees(ca_A=1)
        # the boundary multiplier is free and may have odd degree
        MultiplierDegrees(lyap_R=1)
        setup = single_integrators.build()
        resolved = setup.multipliers.resolve(setup)
        self.assertEqual(resolved["lyap_R"], 0)
        self.assertEqual(resolved["ca_A"], 2)
        defaults = MultiplierDegrees().resolve(integrator_1d.build())
        self.assertEqual(defaults["lyap_D"], 2)
        self.assertEqual(defaults["ca_T"], 0)
        self.assertEqual(defaults["it_ROI"], 0)

    def test_uniform_times(self):
        self.assertEqual(uniform_times(-1.0, 2), [-1.0, -0.5, 0.0])
        self.assertEqual(uniform_times(-2.0, 0), [0.0])
        with self.assertRaises(ValueError):
            uniform_times(-1.0, -1)

    def test_infer_box(self):
        rows = [parse_polynomial("u - 2", ("u",)), parse_polynomial("-u - 1", ("u",))]
        box = infer_box(rows, ("u",))
        self.assertEqual(box.lower, (-1.0,))
        self.assertEqual(box.upper, (2.0,))
        disk = [parse_polynomial("d^2 - 4", ("d",))]
        self.assertEqual(infer_box(disk, ("d",)).upper, (2.0,))
        self.assertIsNone(infer_box([parse_polynomial("u - 1", ("u",))], ("u",)))


class TestSystems(unittest.TestCase):
    def test_final_condition_is_target(self):
        for setup in (integrator_1d.build(), single_integrators.build(), kinematic_cars.build()):
            with self.subTest(system=setup.name):
                final = init_final_stage(setup)
                self.assertEqual(final.index, setup.n_stages)
                self.assertEqual(final.level(), setup.target)

    def test_single_integrator_signs(self):
        setup = single_integrators.build()
        inside_target = np.array([[0.0, 0.0, 2.0, 2.0]])
        captured = np.array([[1.5, 1.5, 1.5, 1.6]])
        self.assertTrue(setup.in_target(inside_target)[0])
        self.assertFalse(setup.in_avoid(inside_target)[0])
        self.assertTrue(setup.in_avoid(captured)[0])
        self.assertFalse(setup.in_target(captured)[0])
        self.assertTrue(setup.in_control_set(np.array([2.0, -2.0]))[0])
        self.assertFalse(setup.in_control_set(np.array([2.1, 0.0]))[0])
        self.assertTrue(setup.in_disturbance_set(np.array([1.0, -1.0]))[0])

    def test_membership_by_sampling(self):
        """Set predicates agree with the geometric description of each system."""

        def distance_sq(z, a, b):
            return (z[:, a[0]] - z[:, b[0]]) ** 2 + (z[:, a[1]] - z[:, b[1]]) ** 2

        cases = [
            (
                integrator_1d.build(),
                lambda z: np.abs(z[:, 0]) <= 0.5,
                lambda z: np.zeros(len(z), dtype=bool),
                lambda u: np.abs(u[:, 0]) <= 1.0,
                Box((-1.5,), (1.5,)),
                None,
            ),
            (
                single_integrators.build(),
                lambda z: z[:, 0] ** 4 + z[:, 1] ** 4 <= 1.0,
                lambda z: distance_sq(z, (0, 1), (2, 3)) <= 0.25,
                lambda u: np.all(np.abs(u) <= 2.0, axis=1),
                Box((-3.0, -3.0), (3.0, 3.0)),
                (Box((-1.5, -1.5), (1.5, 1.5)), lambda d: np.all(np.abs(d) <= 1.0, axis=1)),
            ),
            (
                kinematic_cars.build(),
                lambda z: z[:, 0] ** 2 + z[:, 1] ** 2 <= 0.25,
                lambda z: distance_sq(z, (0, 1), (3, 4)) <= 0.0625,
                lambda u: (u[:, 0] >= 0.0) & (u[:, 0] <= 5.0) & (np.abs(u[:, 1]) <= 3.0),
                Box((-1.0, -4.5), (7.5, 4.5)),
                (
                    Box((-1.0, -1.5), (4.5, 1.5)),
                    lambda d: (d[:, 0] >= 0.0) & (d[:, 0] <= 3.0) & (np.abs(d[:, 1]) <= 1.0),
                ),
            ),
        ]
        rng = np.random.default_rng(29)
        for setup, target, avoid, controls, control_box, disturbance in cases:
            with self.subTest(system=setup.name):
                z = setup.roi.sample(rng, 10000)
                expected_target = target(z)
                np.testing.assert_array_equal(setup.in_target(z), expected_target)
                self.assertTrue(expected_target.any() and not expected_target.all())
                np.testing.assert_array_equal(setup.in_avoid(z), avoid(z))
                u = control_box.sample(rng, 10000)
                np.testing.assert_array_equal(setup.in_control_set(u), controls(u))
                if disturbance is not None:
                    disturbance_box, inside = disturbance
                    d = disturbance_box.sample(rng, 10000)
                    np.testing.assert_array_equal(setup.in_disturbance_set(d), inside(d))

        # the pursuit games have states inside the capture radius
        for setup in (single_integrators.build(), kinematic_cars.build()):
            with self.subTest(capture=setup.name):
                self.assertTrue(setup.in_avoid(setup.roi.sample(rng, 10000)).any())

    def test_kinematic_car_signs(self):
        setup = kinematic_cars.build()
        at_goal = np.array([[0.0, 0.0, 0.0, -1.5, 0.0, 0.0]])
        captured = np.array([[-1.0, 0.0, 0.0, -1.1, 0.1, 0.2]])
        self.assertTrue(setup.in_target(at_goal)[0])
        self.assertFalse(setup.in_avoid(at_goal)[0])
        self.assertTrue(setup.in_avoid(captured)[0])
        self.assertFalse(setup.in_target(captured)[0])
        self.assertTrue(setup.in_control_set(np.array([5.0, -3.0]))[0])
        self.assertFalse(setup.in_control_set(np.array([-0.1, 0.0]))[0])

    def test_single_integrator_dynamics(self):
        setup = single_integrators.build()
        rate = setup.dynamics.evaluate([0.0] * 4, [1.0, -2.0], [0.5, 0.25])
        np.testing.assert_array_equal(rate, [1.0, -2.0, 0.5, 0.25])
        drift, gains = setup.dynamics.control_affine_parts()
        self.assertTrue(all(g.is_zero() for g in drift[:2]))
        self.assertEqual(gains[0][0], Polynomial.constant(setup.dynamics.stage_variables, 1.0))

    def test_kinematic_car_dynamics(self):
        setup = kinematic_cars.build()
        z = [0.0, 0.0, 0.3, -1.0, 0.0, -0.2]
        rate = setup.dynamics.evaluate(z, [2.0, 1.0], [1.5, -0.5])
        self.assertAlmostEqual(rate[0], 2.0 * math.cos(0.3), places=2)
        self.assertAlmostEqual(rate[1], 2.0 * math.sin(0.3), places=3)
        self.assertEqual(rate[2], 1.0)
        self.assertAlmostEqual(rate[4], 1.5 * math.sin(-0.2), places=3)
        self.assertEqual(rate[5], -0.5)
        self.assertTrue(setup.dynamics.is_affine_in_disturbance())
        self.assertEqual(setup.disturbance_box.upper, (3.0, 1.0))

    def test_integrator_reach_interval(self):
        self.assertEqual(integrator_1d.analytic_reach_interval(0.5, 1.0, 1.0), (-1.5, 1.5))
        setup = integrator_1d.build()
        self.assertEqual(setup.times, [-1.0, -0.5, 0.0])
        self.assertEqual(setup.avoid, Polynomial.constant(("x",), 1.0))

    def test_builder_validation(self):
        with self.assertRaises(ValueError):
            single_integrators.build(u_max=0.0)
        with self.assertRaises(ValueError):
            integrator_1d.build(dt=-1.0)


class TestChebyshev(unittest.TestCase):
    def test_coefficients(self):
        a = math.pi / 4
        sin_c = chebyshev_coefficients("sin", a, 3)
        cos_c = chebyshev_coefficients("cos", a, 2)
        self.assertAlmostEqual(sin_c[1], 0.7264, places=4)
        self.assertAlmostEqual(sin_c[3], -0.01942, places=5)
        self.assertEqual(sin_c[0], 0.0)
        self.assertEqual(sin_c[2], 0.0)
        self.assertAlmostEqual(cos_c[0], 0.8516, places=4)
        self.assertAlmostEqual(cos_c[2], -0.1464, places=4)

    def test_error_bounds(self):
        a = math.pi / 4
        self.assertLess(approximation_error("sin", a), 1.55e-4)
        self.assertLess(approximation_error("cos", a), 2e-3)

    def test_sin_is_odd(self):
        p = chebyshev_sin(math.pi / 4)
        self.assertEqual(p.coefficient((0,)), 0.0)
        self.assertEqual(p.coefficient((2,)), 0.0)
        self.assertAlmostEqual(p.evaluate([0.5]), -p.evaluate([-0.5]))

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            chebyshev_coefficients("tan", 0.5, 3)
        with self.assertRaises(ValueError):
            chebyshev_coefficients("sin", 2.0, 3)


if __name__ == "__main__":
    unittest.main()
