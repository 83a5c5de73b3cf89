"""
Closed-loop simulation of the synthesized controller against a disturbance
policy, fixed-step RK4 from s_0 to 0 with zero-order hold on u and d.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from config.loader import DISTURBANCE_POLICIES, ProblemSetup
from core.reach_avoid import Solution, controller_at

logger = logging.getLogger(__name__)

REACHED = "reached"
CAPTURED = "captured"
TIMEOUT = "timeout"
VERDICTS = (REACHED, CAPTURED, TIMEOUT)
SET_TOLERANCE = 1e-9
RANDOM_TRIES = 100


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    disturbances: List[np.ndarray] = field(default_factory=list)


@dataclass
class SimOutcome:
    verdict: str
    first_hit: Optional[float]
    trajectory: Trajectory


class DisturbancePolicy(ABC):
    """Chooses d at each integration step."""

    def __init__(self, solution: Solution, rng: np.random.Generator):
        self.solution = solution
        self.setup = solution.setup
        self.rng = rng
        box = self.setup.disturbance_box
        vertices = box.vertices()
        admissible = self.setup.in_disturbance_set(vertices, SET_TOLERANCE)
        self.vertices = vertices[admissible] if admissible.any() else vertices

    @abstractmethod
    def __call__(self, k: int, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Disturbance applied over step k from state z under control u."""


class RandomPolicy(DisturbancePolicy):
    """Uniform in the disturbance box, rejected until inside the set."""

    def __call__(self, k, z, u):
        box = self.setup.disturbance_box
        for _ in range(RANDOM_TRIES):
            d = box.sample(self.rng, 1)[0]
            if self.setup.in_disturbance_set(d, SET_TOLERANCE)[0]:
                return d
        return self.vertices[self.rng.integers(len(self.vertices))]


class VertexPolicy(DisturbancePolicy):
    """Cycles through the box vertices."""

    def __init__(self, solution, rng):
        super().__init__(solution, rng)
        self.step = 0

    def __call__(self, k, z, u):
        d = self.vertices[self.step % len(self.vertices)]
        self.step += 1
        return d


class GreedyPolicy(DisturbancePolicy):
    """The vertex maximizing V_{k+1}(z + dt f(z, u, d))."""

    def __call__(self, k, z, u):
        if len(self.vertices) == 1:
            return self.vertices[0]
        setup = self.setup
        dt = setup.times[k + 1] - setup.times[k]
        V_next = self.solution.stage(k + 1).V
        best, best_value = self.vertices[0], -np.inf
        for d in self.vertices:
            value = V_next.evaluate(z + dt * setup.dynamics.evaluate(z, u, d))
            if value > best_value:
                best, best_value = d, value
        return best


POLICIES = {"random": RandomPolicy, "vertex": VertexPolicy, "greedy": GreedyPolicy}


def make_policy(name: str, solution: Solution, rng: np.random.Generator) -> DisturbancePolicy:
    if name not in POLICIES:
        raise ValueError(f"unknown disturbance policy {name!r}, expected one of {DISTURBANCE_POLICIES}")
    return POLICIES[name](solution, rng)


def rk4_step(setup: ProblemSetup, z: np.ndarray, u: np.ndarray, d: np.ndarray, h: float) -> np.ndarray:
    f = setup.dynamics.evaluate
    k1 = f(z, u, d)
    k2 = f(z + 0.5 * h * k1, u, d)
    k3 = f(z + 0.5 * h * k2, u, d)
    k4 = f(z + h * k3, u, d)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _verdict(setup: ProblemSetup, z: np.ndarray) -> Optional[str]:
    if setup.target.evaluate(z) <= 0.0:
        return REACHED
    if setup.avoid.evaluate(z) <= 0.0:
        return CAPTURED
    return None


def simulate(
    solution: Solution,
    z0: Sequence[float],
    policy: str = "greedy",
    substeps: Optional[int] = None,
    seed: int = 0,
) -> SimOutcome:
    """
    Integrate from s_0 (the earliest synthesized stage) to 0.

    The run stops at the first sample in the target (reached) or in the avoid
    set (captured); the target is checked first at each sample.
    """
    setup = solution.setup
    substeps = setup.verification.simulation_substeps if substeps is None else substeps
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    z = np.asarray(z0, dtype=float)
    if len(z) != len(setup.states):
        raise ValueError(f"initial state has {len(z)} entries, expected {len(setup.states)}")
    if not setup.roi.contains(z)[0]:
        raise ValueError(f"initial state {z.tolist()} lies outside the region of interest")
    disturbance = make_policy(policy, solution, np.random.default_rng(seed))
    trajectory = Trajectory()
    n_u = len(setup.dynamics.controls)
    n_d = len(setup.dynamics.disturbances)

    def record(s, state, u, d):
        trajectory.times.append(float(s))
        trajectory.states.append(np.array(state))
        trajectory.controls.append(np.array(u))
        trajectory.disturbances.append(np.array(d))

    for k in range(solution.first_index, solution.final_index):
        h = (setup.times[k + 1] - setup.times[k]) / substeps
        for j in range(substeps):
            s = setup.times[k] + j * h
            verdict = _verdict(setup, z)
            if verdict is not None:
                record(s, z, np.full(n_u, np.nan), np.full(n_d, np.nan))
                return SimOutcome(verdict, s, trajectory)
            u = controller_at(solution, s, z)
            d = disturbance(k, z, u)
            record(s, z, u, d)
            z = rk4_step(setup, z, u, d, h)

    s = setup.times[solution.final_index]
    record(s, z, np.full(n_u, np.nan), np.full(n_d, np.nan))
    verdict = _verdict(setup, z)
    if verdict is not None:
        return SimOutcome(verdict, s, trajectory)
    return SimOutcome(TIMEOUT, None, trajectory)


def sample_initial_states(solution: Solution, count: int, seed: int = 0, max_draws: int = 1000000) -> np.ndarray:
    """
    Uniform ROI samples inside the computed set of the earliest stage.

    Raises:
        ValueError: If fewer than ``count`` samples are found within ``max_draws``
    """
    setup = solution.setup
    stage = solution.stage(solution.first_index)
    rng = np.random.default_rng(seed)
    found: List[np.ndarray] = []
    drawn = 0
    batch = max(1000, 10 * count)
    while sum(len(f) for f in found) < count and drawn < max_draws:
        z = setup.roi.sample(rng, batch)
        drawn += batch
        found.append(z[stage.level().evaluate_batch(z) < 0.0])
    points = np.vstack(found) if found else np.zeros((0, len(setup.states)))
    if len(points) < count:
        raise ValueError(
            f"only {len(points)} of {count} initial states found inside stage {stage.index}"
        )
    return points[:count]


@dataclass
class SimulationReport:
    policy: str
    outcomes: List[SimOutcome] = field(default_factory=list)

    @property
    def counts(self) -> Dict[str, int]:
        counts = {v: 0 for v in VERDICTS}
        for outcome in self.outcomes:
            counts[outcome.verdict] += 1
        return counts

    @property
    def passed(self) -> bool:
        return bool(self.outcomes) and self.counts[REACHED] == len(self.outcomes)

    def summary_line(self) -> str:
        counts = self.counts
        return " ".join(f"{v}={counts[v]}" for v in VERDICTS)


def simulate_batch(
    solution: Solution,
    initial_states: np.ndarray,
    policy: str = "greedy",
    substeps: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> SimulationReport:
    """Run i uses seed + i, so results do not depend on the thread count."""
    report = SimulationReport(policy=policy)

    def run(i: int) -> SimOutcome:
        return simulate(solution, initial_states[i], policy, substeps, seed + i)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        report.outcomes = list(pool.map(run, range(len(initial_states))))
    logger.info("simulate policy=%s runs=%d %s", policy, len(report.outcomes), report.summary_line())
    return report


def _fmt(value: float) -> str:
    return "" if np.isnan(value) else f"{value:.10g}"


def write_trajectory_csv(setup: ProblemSetup, outcome: SimOutcome, path: Union[str, Path]) -> None:
    """Columns: time, states..., controls..., disturbances..."""
    dyn = setup.dynamics
    traj = outcome.trajectory
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["time", *dyn.states, *dyn.controls, *dyn.disturbances])
        for s, z, u, d in zip(traj.times, traj.states, traj.controls, traj.disturbances):
            writer.writerow([_fmt(s), *map(_fmt, z), *map(_fmt, u), *map(_fmt, d)])
