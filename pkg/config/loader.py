"""
Configuration Loader for sosreach

This module defines the reach-avoid problem description (dynamics, set
polynomials, region of interest, time grid, degrees and hyper-parameters)
and loads/saves it as YAML. A config either spells every field out, with
polynomials in their textual form, or names a built-in system:

    system:
      name: single_integrators
      params: {u_max: 2.0, d_max: 1.0}
    hyperparameters:
      deg_K: 1
"""

from __future__ import annotations

import dataclasses
import importlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from core.conic_solver import SolverSettings
from core.polynomial import Box, Polynomial, PolynomialError, parse_polynomial

logger = logging.getLogger(__name__)

GRADIENT_STAGES = ("current", "next")
DISTURBANCE_POLICIES = ("random", "vertex", "greedy")


class ConfigError(Exception):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path
        self.message = message


@dataclass
class Dynamics:
    """Polynomial dynamics z' = f(z, u, d); every f component lives over (z, u, d)."""

    states: List[str]
    controls: List[str]
    disturbances: List[str]
    f: List[Polynomial]

    def __post_init__(self):
        names = list(self.states) + list(self.controls) + list(self.disturbances)
        if len(set(names)) != len(names):
            raise ValueError(f"variable names must be unique, got {names}")
        if not self.states:
            raise ValueError("at least one state variable is required")
        if len(self.f) != len(self.states):
            raise ValueError(f"{len(self.f)} dynamics rows for {len(self.states)} states")
        try:
            self.f = [p.embed(names) for p in self.f]
        except PolynomialError as exc:
            raise ValueError(f"dynamics use an undeclared variable: {exc}") from None

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(self.states) + tuple(self.controls) + tuple(self.disturbances)

    @property
    def stage_variables(self) -> Tuple[str, ...]:
        """(z, d): the variables every per-stage program lives over."""
        return tuple(self.states) + tuple(self.disturbances)

    def control_affine_parts(self) -> Tuple[List[Polynomial], List[List[Polynomial]]]:
        """
        Split f(z, u, d) = g(z, d) + sum_j h_j(z, d) u_j.

        Returns:
            (g, h) with g[i] and h[i][j] over the stage variables

        Raises:
            ValueError: If some component is not affine in the controls
        """
        stage = self.stage_variables
        zero_u = {u: Polynomial.zero(stage) for u in self.controls}
        drift, gains = [], []
        for i, fi in enumerate(self.f):
            if self.controls and fi.degree_in(self.controls) > 1:
                raise ValueError(f"dynamics row {i} is not affine in the controls")
            drift.append(fi.substitute(zero_u) if zero_u else fi.embed(stage))
            row = []
            for u in self.controls:
                row.append(fi.differentiate(u).substitute(zero_u))
            gains.append(row)
        return drift, gains

    def is_affine_in_disturbance(self) -> bool:
        return not self.disturbances or all(
            fi.degree_in(self.disturbances) <= 1 for fi in self.f
        )

    def closed_loop(self, controller: Sequence[Polynomial]) -> List[Polynomial]:
        """f(z, K(z), d) over the stage variables."""
        stage = self.stage_variables
        bindings = {u: k.embed(stage) for u, k in zip(self.controls, controller)}
        if not bindings:
            return [fi.embed(stage) for fi in self.f]
        return [fi.substitute(bindings) for fi in self.f]

    def evaluate(self, z: Sequence[float], u: Sequence[float], d: Sequence[float]) -> np.ndarray:
        point = list(z) + list(u) + list(d)
        return np.array([fi.evaluate(point) for fi in self.f])


@dataclass
class Hyperparameters:
    """Alternation settings per stage."""

    deg_V: int = 4
    deg_K: int = 1
    lambda_lyap: float = 5.0
    lambda_it: float = 20.0
    alpha: float = 1.5
    delta_slack: float = 1e-9
    delta_conv: float = 1e-3
    max_iter: int = 30
    rho_final: float = 0.0
    gradient_stage: str = "current"  # "current", "next"
    avoid_margin: float = 0.0
    coefficient_bound: float = 1e4

    def __post_init__(self):
        if self.deg_V <= 0 or self.deg_V % 2:
            raise ValueError("deg_V must be a positive even integer (V is constrained SOS)")
        if self.deg_K < 0:
            raise ValueError("deg_K must be non-negative")
        if self.lambda_lyap < 0 or self.lambda_it < 0:
            raise ValueError("slack weights must be non-negative")
        if self.alpha < 1.0:
            raise ValueError("alpha must be at least 1")
        if self.delta_slack <= 0 or self.delta_conv <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter <= 0:
            raise ValueError("max_iter must be positive")
        if self.gradient_stage not in GRADIENT_STAGES:
            raise ValueError(f"gradient_stage must be one of {GRADIENT_STAGES}")
        if self.avoid_margin < 0:
            raise ValueError("avoid_margin must be non-negative")
        if self.coefficient_bound <= 0:
            raise ValueError("coefficient_bound must be positive")


MULTIPLIERS = (
    "lyap_D", "lyap_R", "lyap_T", "lyap_ROI",
    "ca_T", "ca_A", "ca_ROI",
    "ctrl_R", "ctrl_D", "ctrl_ROI",
    "it_T", "it_ROI",
)


@dataclass
class MultiplierDegrees:
    """Per-multiplier degree overrides; unset entries use the degree-matching default."""

    lyap_D: Optional[int] = None
    lyap_R: Optional[int] = None
    lyap_T: Optional[int] = None
    lyap_ROI: Optional[int] = None
    ca_T: Optional[int] = None
    ca_A: Optional[int] = None
    ca_ROI: Optional[int] = None
    ctrl_R: Optional[int] = None
    ctrl_D: Optional[int] = None
    ctrl_ROI: Optional[int] = None
    it_T: Optional[int] = None
    it_ROI: Optional[int] = None

    def __post_init__(self):
        for name in MULTIPLIERS:
            value = getattr(self, name)
            if value is None:
                continue
            if value < 0:
                raise ValueError(f"{name} degree must be non-negative")
            # lyap_R multiplies a boundary identity and is the only free multiplier
            if name != "lyap_R" and value % 2:
                raise ValueError(f"{name} degree must be even (the multiplier is SOS)")

    def resolve(self, setup: "ProblemSetup") -> Dict[str, int]:
        deg_V = setup.hyperparameters.deg_V

        def rest(phi_degree: int) -> int:
            value = max(0, deg_V - phi_degree)
            return value - value % 2

        lyap = deg_V + deg_V % 2
        phi_D = max((p.degree() for p in setup.disturbance_set), default=0)
        defaults = {
            "lyap_D": lyap,
            "lyap_R": lyap,
            "lyap_T": lyap,
            "lyap_ROI": lyap,
            "ca_T": rest(setup.target.degree()),
            "ca_A": rest(setup.avoid.degree()),
            "ca_ROI": rest(2),
            "ctrl_R": rest(deg_V),
            "ctrl_D": rest(phi_D),
            "ctrl_ROI": rest(2),
            "it_T": rest(deg_V),
            "it_ROI": rest(2),
        }
        return {
            name: defaults[name] if getattr(self, name) is None else getattr(self, name)
            for name in MULTIPLIERS
        }


@dataclass
class VerificationSettings:
    """Thresholds and sample counts for the verify / oracle / simulate commands."""

    residual_tolerance: float = 1e-6
    eigenvalue_tolerance: float = 1e-8
    audit_samples: int = 10000
    audit_tolerance: float = 1e-6
    band: float = 1e-3
    oracle_resolution: int = 21
    control_levels: int = 3
    disturbance_levels: int = 3
    containment_samples: int = 10000
    containment_threshold: float = 0.995
    simulation_runs: int = 100
    simulation_substeps: int = 10
    disturbance_policy: str = "greedy"

    def __post_init__(self):
        if self.residual_tolerance <= 0 or self.eigenvalue_tolerance <= 0:
            raise ValueError("certificate tolerances must be positive")
        if self.audit_samples < 1 or self.containment_samples < 1:
            raise ValueError("sample counts must be at least 1")
        if self.oracle_resolution < 3:
            raise ValueError("oracle_resolution must be at least 3")
        if self.control_levels < 1 or self.disturbance_levels < 1:
            raise ValueError("action discretization levels must be at least 1")
        if not 0.0 <= self.containment_threshold <= 1.0:
            raise ValueError("containment_threshold must be between 0.0 and 1.0")
        if self.simulation_runs < 1 or self.simulation_substeps < 1:
            raise ValueError("simulation counts must be at least 1")
        if self.disturbance_policy not in DISTURBANCE_POLICIES:
            raise ValueError(f"disturbance_policy must be one of {DISTURBANCE_POLICIES}")


def infer_box(rows: Sequence[Polynomial], variables: Sequence[str]) -> Optional[Box]:
    """
    Bounding box implied by univariate rows phi(v) <= 0.

    Rows that are affine in one variable, or quadratic with positive leading
    coefficient, tighten that variable's interval. Returns None when some
    variable stays unbounded.
    """
    variables = tuple(variables)
    lower = {v: -math.inf for v in variables}
    upper = {v: math.inf for v in variables}
    for row in rows:
        used = row.used_variables()
        if len(used) != 1:
            continue
        name = used[0]
        i = row.variables.index(name)
        coeffs = [0.0, 0.0, 0.0]
        degree = row.degree()
        if degree > 2:
            continue
        for mono, c in row.items():
            coeffs[mono[i]] = c
        c0, c1, c2 = coeffs
        if degree == 1:
            bound = -c0 / c1
            if c1 > 0:
                upper[name] = min(upper[name], bound)
            else:
                lower[name] = max(lower[name], bound)
        elif degree == 2 and c2 > 0:
            disc = c1 * c1 - 4.0 * c2 * c0
            if disc < 0:
                raise ValueError(f"row {row.to_text()} describes an empty set")
            root = math.sqrt(disc)
            lower[name] = max(lower[name], (-c1 - root) / (2.0 * c2))
            upper[name] = min(upper[name], (-c1 + root) / (2.0 * c2))
    if any(math.isinf(lower[v]) or math.isinf(upper[v]) for v in variables):
        return None
    return Box(tuple(lower[v] for v in variables), tuple(upper[v] for v in variables))


def uniform_times(start: float, steps: int) -> List[float]:
    """s_k = start + k * (-start) / steps, ending exactly at 0."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return [0.0]
    dt = -start / steps
    return [start + k * dt for k in range(steps)] + [0.0]


@dataclass
class ProblemSetup:
    """One reach-avoid problem instance."""

    name: str
    dynamics: Dynamics
    target: Polynomial
    roi: Box
    times: List[float]
    avoid: Optional[Polynomial] = None
    disturbance_set: List[Polynomial] = field(default_factory=list)
    control_set: List[Polynomial] = field(default_factory=list)
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    multipliers: MultiplierDegrees = field(default_factory=MultiplierDegrees)
    solver: SolverSettings = field(default_factory=SolverSettings)
    verification: VerificationSettings = field(default_factory=VerificationSettings)
    disturbance_box: Optional[Box] = None
    control_box: Optional[Box] = None

    def __post_init__(self):
        states = tuple(self.dynamics.states)
        controls = tuple(self.dynamics.controls)
        disturbances = tuple(self.dynamics.disturbances)
        try:
            self.target = self.target.embed(states)
            self.avoid = (
                Polynomial.constant(states, 1.0) if self.avoid is None else self.avoid.embed(states)
            )
            self.disturbance_set = [p.embed(disturbances) for p in self.disturbance_set]
            self.control_set = [p.embed(controls) for p in self.control_set]
        except PolynomialError as exc:
            raise ValueError(f"set polynomial uses a foreign variable: {exc}") from None
        for row in self.control_set:
            if row.degree() > 1:
                raise ValueError(f"control row {row.to_text()} is not affine in u")
        if self.roi.dimension != len(states):
            raise ValueError(f"roi has {self.roi.dimension} dimensions for {len(states)} states")
        self.times = [float(s) for s in self.times]
        if not self.times or self.times[-1] != 0.0:
            raise ValueError("time grid must end at s_N = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("time grid must be strictly increasing")
        if self.disturbance_box is None:
            self.disturbance_box = infer_box(self.disturbance_set, disturbances)
        if self.control_box is None:
            self.control_box = infer_box(self.control_set, controls)
        if self.disturbance_box is None:
            raise ValueError("disturbance set is unbounded; give disturbance_box explicitly")

    @property
    def states(self) -> Tuple[str, ...]:
        return tuple(self.dynamics.states)

    @property
    def n_stages(self) -> int:
        """N: number of time steps; stages are indexed 0..N."""
        return len(self.times) - 1

    def roi_rows(self) -> List[Polynomial]:
        """(z_i - hi)(z_i - lo) <= 0 per state coordinate."""
        rows = []
        for name, lo, hi in zip(self.states, self.roi.lower, self.roi.upper):
            z = Polynomial.variable(self.states, name)
            rows.append((z - hi) * (z - lo))
        return rows

    def in_target(self, points: np.ndarray) -> np.ndarray:
        return self.target.evaluate_batch(points) <= 0.0

    def in_avoid(self, points: np.ndarray) -> np.ndarray:
        return self.avoid.evaluate_batch(points) <= 0.0

    def in_control_set(self, controls: np.ndarray, tolerance: float = 0.0) -> np.ndarray:
        controls = np.atleast_2d(controls)
        ok = np.ones(controls.shape[0], dtype=bool)
        for row in self.control_set:
            ok &= row.evaluate_batch(controls) <= tolerance
        return ok

    def in_disturbance_set(self, disturbances: np.ndarray, tolerance: float = 0.0) -> np.ndarray:
        disturbances = np.atleast_2d(disturbances)
        ok = np.ones(disturbances.shape[0], dtype=bool)
        for row in self.disturbance_set:
            ok &= row.evaluate_batch(disturbances) <= tolerance
        return ok

    def clamp_control(self, u: np.ndarray) -> np.ndarray:
        if self.control_box is None:
            return np.asarray(u, dtype=float)
        return self.control_box.clip(np.asarray(u, dtype=float))


# -- YAML mapping ------------------------------------------------------------


def _build_section(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    values = dict(data)
    for key, value in data.items():
        default = fields[key].default
        # YAML 1.1 reads "1e-9" as a string
        if isinstance(default, float) and isinstance(value, (str, int)) and not isinstance(value, bool):
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}") from None
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _override_section(base, data: Any, path: str):
    if data is None:
        return base
    merged = dataclasses.asdict(base)
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    merged.update(data)
    return _build_section(type(base), merged, path)


def _require(data: Dict[str, Any], key: str, path: str = "") -> Any:
    if key not in data or data[key] is None:
        raise ConfigError(f"{path}{key}", "missing required field")
    return data[key]


def _poly(text: Any, variables: Sequence[str], path: str) -> Polynomial:
    try:
        return parse_polynomial(text, variables)
    except (PolynomialError, ValueError) as exc:
        raise ConfigError(path, f"cannot parse polynomial: {exc}") from None


def _box(data: Any, path: str) -> Box:
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping with lower and upper")
    try:
        return Box(tuple(_require(data, "lower", f"{path}.")), tuple(_require(data, "upper", f"{path}.")))
    except (ValueError, PolynomialError) as exc:
        raise ConfigError(path, str(exc)) from None


def _times(data: Dict[str, Any]) -> List[float]:
    if "times" in data:
        times = data["times"]
        if not isinstance(times, list):
            raise ConfigError("times", "expected a list of time points")
        return [float(s) for s in times]
    grid = _require(data, "time_grid")
    try:
        return uniform_times(float(_require(grid, "start", "time_grid.")), int(_require(grid, "steps", "time_grid.")))
    except ValueError as exc:
        raise ConfigError("time_grid", str(exc)) from None


class ConfigLoader:
    """Loads, validates and writes reach-avoid problem configs."""

    SECTIONS = {
        "hyperparameters": Hyperparameters,
        "multipliers": MultiplierDegrees,
        "solver": SolverSettings,
        "verification": VerificationSettings,
    }

    def load_setup(self, config_path: str) -> ProblemSetup:
        """
        Load a problem setup from a YAML file.

        Args:
            config_path: Path to the YAML config

        Returns:
            Validated ProblemSetup

        Raises:
            FileNotFoundError: If the config file doesn't exist
            ConfigError: If the YAML or any field is invalid
        """
        config_file = Path(config_path)
        if not config_file.exists():
            raise FileNotFoundError(f"config file {config_path} not found")
        return self.parse_setup(config_file.read_text())

    def parse_setup(self, text: str) -> ProblemSetup:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected a mapping")
        if "system" in data:
            return self._from_system(data)
        return self._from_fields(data)

    def _from_system(self, data: Dict[str, Any]) -> ProblemSetup:
        system = data["system"]
        if isinstance(system, str):
            system = {"name": system}
        name = _require(system, "name", "system.")
        params = system.get("params") or {}
        try:
            module = importlib.import_module(f"systems.{name}")
        except ImportError:
            raise ConfigError("system.name", f"unknown built-in system {name!r}") from None
        try:
            setup = module.build(**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError("system.params", str(exc)) from None
        logger.info("config system=%s params=%s", name, params)

        overrides: Dict[str, Any] = {}
        for key, cls in self.SECTIONS.items():
            if key in data:
                overrides[key] = _override_section(getattr(setup, key), data[key], key)
        if "times" in data or "time_grid" in data:
            overrides["times"] = _times(data)
        if "name" in data:
            overrides["name"] = str(data["name"])
        if not overrides:
            return setup
        try:
            return dataclasses.replace(setup, **overrides)
        except ValueError as exc:
            raise ConfigError("<root>", str(exc)) from None

    def _from_fields(self, data: Dict[str, Any]) -> ProblemSetup:
        dyn = _require(data, "dynamics")
        states = list(_require(dyn, "states", "dynamics."))
        controls = list(dyn.get("controls") or [])
        disturbances = list(dyn.get("disturbances") or [])
        all_vars = states + controls + disturbances
        f_rows = _require(dyn, "f", "dynamics.")
        if not isinstance(f_rows, list):
            raise ConfigError("dynamics.f", "expected a list of polynomials")
        f = [_poly(row, all_vars, f"dynamics.f[{i}]") for i, row in enumerate(f_rows)]
        try:
            dynamics = Dynamics(states, controls, disturbances, f)
        except ValueError as exc:
            raise ConfigError("dynamics", str(exc)) from None

        hyper = data.get("hyperparameters")
        if hyper is None or isinstance(hyper, dict):
            # no default degree without a builder
            _require(hyper or {}, "deg_V", "hyperparameters.")
        sections = {key: _build_section(cls, data.get(key), key) for key, cls in self.SECTIONS.items()}
        kwargs = dict(
            name=str(data.get("name", "problem")),
            dynamics=dynamics,
            target=_poly(_require(data, "target"), states, "target"),
            roi=_box(_require(data, "roi"), "roi"),
            times=_times(data),
            avoid=_poly(data["avoid"], states, "avoid") if data.get("avoid") is not None else None,
            disturbance_set=[
                _poly(row, disturbances, f"disturbance_set[{i}]")
                for i, row in enumerate(data.get("disturbance_set") or [])
            ],
            control_set=[
                _poly(row, controls, f"control_set[{i}]")
                for i, row in enumerate(data.get("control_set") or [])
            ],
            disturbance_box=_box(data["disturbance_box"], "disturbance_box") if data.get("disturbance_box") else None,
            control_box=_box(data["control_box"], "control_box") if data.get("control_box") else None,
            **sections,
        )
        try:
            return ProblemSetup(**kwargs)
        except ValueError as exc:
            raise ConfigError("<root>", str(exc)) from None

    # -- writing ----------------------------------------------------------

    def setup_to_dict(self, setup: ProblemSetup) -> Dict[str, Any]:
        def box(b: Optional[Box]):
            return None if b is None else {"lower": list(b.lower), "upper": list(b.upper)}

        data: Dict[str, Any] = {
            "name": setup.name,
            "dynamics": {
                "states": list(setup.dynamics.states),
                "controls": list(setup.dynamics.controls),
                "disturbances": list(setup.dynamics.disturbances),
                "f": [p.to_text() for p in setup.dynamics.f],
            },
            "target": setup.target.to_text(),
            "avoid": setup.avoid.to_text(),
            "disturbance_set": [p.to_text() for p in setup.disturbance_set],
            "control_set": [p.to_text() for p in setup.control_set],
            "roi": box(setup.roi),
            "times": list(setup.times),
            "disturbance_box": box(setup.disturbance_box),
            "control_box": box(setup.control_box),
        }
        for key in self.SECTIONS:
            data[key] = dataclasses.asdict(getattr(setup, key))
        return data

    def dump_setup(self, setup: ProblemSetup) -> str:
        return yaml.dump(self.setup_to_dict(setup), default_flow_style=False, sort_keys=False)

    def save_setup(self, setup: ProblemSetup, output_path: str) -> None:
        Path(output_path).write_text(self.dump_setup(setup))

    def save_example_config(self, output_path: str = "sosreach.yml", system: str = "single_integrators"):
        """Save an example config naming a built-in system."""
        module = importlib.import_module(f"systems.{system}")
        example_config = {
            "name": system,
            "system": {"name": system, "params": dict(module.DEFAULT_PARAMS)},
            "hyperparameters": dataclasses.asdict(module.build().hyperparameters),
        }
        with open(output_path, "w") as f:
            yaml.dump(example_config, f, default_flow_style=False, sort_keys=False)
