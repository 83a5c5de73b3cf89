"""
Brute-force grid oracle for the discrete-time reach-avoid game.

    R_N = {phi_T <= 0}
    R_k = {phi_T <= 0} | ({phi_A > 0} & {z : exists u forall d, z + dt f(z, u, d) in R_{k+1}})

Membership of a successor is multilinear interpolation of the boolean mask of
R_{k+1}, thresholded at 0.5. Successors outside the region of interest count
as not in R_{k+1}, which only makes the oracle's attacker weaker.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from config.loader import ProblemSetup
from core.polynomial import Box
from core.reach_avoid import Solution

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
SET_TOLERANCE = 1e-9
NODE_TOLERANCE = 1e-9


@dataclass
class GridOracle:
    setup: ProblemSetup
    axes: List[np.ndarray]
    masks: Dict[int, np.ndarray]
    controls: np.ndarray
    disturbances: np.ndarray
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    def grid_points(self) -> np.ndarray:
        return grid_points(self.axes)

    def interpolator(self, k: int) -> RegularGridInterpolator:
        return RegularGridInterpolator(
            self.axes, self.masks[k].astype(float), bounds_error=False, fill_value=0.0
        )

    def contains(self, k: int, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if not len(points):
            return np.zeros(0, dtype=bool)
        return self.interpolator(k)(points) >= THRESHOLD

    def fraction(self, k: int) -> float:
        return float(self.masks[k].mean())

    def is_monotone(self) -> bool:
        """R_k contains R_{k+1} for every k."""
        return all(
            np.all(self.masks[k] >= self.masks[k + 1])
            for k in self.masks
            if k + 1 in self.masks
        )

    def summary_line(self) -> str:
        sizes = " ".join(f"R{k}={int(m.sum())}" for k, m in sorted(self.masks.items()))
        return (
            f"oracle grid={'x'.join(map(str, self.shape))} controls={len(self.controls)} "
            f"disturbances={len(self.disturbances)} monotone={str(self.is_monotone()).lower()} {sizes}"
        )


def grid_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def discretize_actions(box: Optional[Box], dimension: int, levels: int, member) -> np.ndarray:
    """Tensor grid of `levels` values per action coordinate, kept if admissible."""
    if dimension == 0:
        return np.zeros((1, 0))
    if box is None:
        raise ValueError("action set is unbounded; give its box explicitly")
    if levels == 1:
        values = [np.array([(lo + hi) / 2.0]) for lo, hi in zip(box.lower, box.upper)]
    else:
        values = [np.linspace(lo, hi, levels) for lo, hi in zip(box.lower, box.upper)]
    actions = np.array(list(itertools.product(*values)), dtype=float)
    actions = actions[member(actions, SET_TOLERANCE)]
    if not len(actions):
        raise ValueError("no discretized action lies inside its set")
    return actions


def successors(setup: ProblemSetup, z: np.ndarray, u: np.ndarray, d: np.ndarray, dt: float) -> np.ndarray:
    """Explicit Euler step z + dt f(z, u, d) for a batch of states."""
    n = len(z)
    points = np.hstack([z, np.tile(u, (n, 1)), np.tile(d, (n, 1))])
    rates = np.column_stack([fi.evaluate_batch(points) for fi in setup.dynamics.f])
    return z + dt * rates


def _winning(
    setup: ProblemSetup,
    z: np.ndarray,
    controls: np.ndarray,
    disturbances: np.ndarray,
    dt: float,
    interp: RegularGridInterpolator,
) -> np.ndarray:
    win = np.zeros(len(z), dtype=bool)
    for u in controls:
        ok = np.ones(len(z), dtype=bool)
        for d in disturbances:
            ok &= interp(successors(setup, z, u, d, dt)) >= THRESHOLD
            if not ok.any():
                break
        win |= ok
    return win


def build_grid_oracle(
    setup: ProblemSetup,
    resolution: Optional[int] = None,
    control_levels: Optional[int] = None,
    disturbance_levels: Optional[int] = None,
    threads: int = 1,
) -> GridOracle:
    """
    Backward recursion over the time grid of ``setup``.

    Raises:
        ValueError: On resolution below 3, a degenerate region of interest or
            an unbounded action set
    """
    settings = setup.verification
    resolution = settings.oracle_resolution if resolution is None else resolution
    control_levels = settings.control_levels if control_levels is None else control_levels
    disturbance_levels = (
        settings.disturbance_levels if disturbance_levels is None else disturbance_levels
    )
    if resolution < 3:
        raise ValueError("resolution must be at least 3 points per dimension")
    if any(hi <= lo for lo, hi in zip(setup.roi.lower, setup.roi.upper)):
        raise ValueError("region of interest must have positive width in every dimension")

    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(setup.roi.lower, setup.roi.upper)]
    dyn = setup.dynamics
    controls = discretize_actions(
        setup.control_box, len(dyn.controls), control_levels, setup.in_control_set
    )
    disturbances = discretize_actions(
        setup.disturbance_box, len(dyn.disturbances), disturbance_levels, setup.in_disturbance_set
    )
    points = grid_points(axes)
    shape = tuple(len(a) for a in axes)
    target = setup.in_target(points)
    safe = ~setup.in_avoid(points)
    chunks = np.array_split(np.arange(len(points)), max(1, threads))

    N = setup.n_stages
    masks = {N: target.reshape(shape)}
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for k in range(N - 1, -1, -1):
            dt = setup.times[k + 1] - setup.times[k]
            interp = RegularGridInterpolator(
                axes, masks[k + 1].astype(float), bounds_error=False, fill_value=0.0
            )
            parts = pool.map(
                lambda idx: _winning(setup, points[idx], controls, disturbances, dt, interp),
                chunks,
            )
            win = np.concatenate(list(parts))
            masks[k] = (target | (safe & win)).reshape(shape)
            logger.info("oracle stage=%d members=%d of %d", k, int(masks[k].sum()), len(points))

    oracle = GridOracle(
        setup=setup,
        axes=axes,
        masks=masks,
        controls=controls,
        disturbances=disturbances,
        stats={"seconds": round(time.perf_counter() - start, 3), "points": len(points)},
    )
    if not oracle.is_monotone():
        logger.warning("oracle masks are not monotone backward in time")
    return oracle


def exhaustive_game_search(
    setup: ProblemSetup,
    axes: Sequence[np.ndarray],
    controls: np.ndarray,
    disturbances: np.ndarray,
) -> Dict[int, np.ndarray]:
    """
    Reach-avoid masks by plain game-tree search from every grid node.

    Only for instances whose Euler successors land on grid nodes (or leave the
    region of interest); used to cross-check the oracle.

    Raises:
        ValueError: If a successor inside the region falls between nodes
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    N = setup.n_stages
    roi = setup.roi

    def snap(z: np.ndarray) -> Optional[np.ndarray]:
        lo = np.asarray(roi.lower) - NODE_TOLERANCE
        hi = np.asarray(roi.upper) + NODE_TOLERANCE
        if np.any(z < lo) or np.any(z > hi):
            return None
        snapped = np.empty_like(z)
        for i, axis in enumerate(axes):
            j = int(np.argmin(np.abs(axis - z[i])))
            if abs(axis[j] - z[i]) > NODE_TOLERANCE:
                raise ValueError(f"successor {z} falls between grid nodes")
            snapped[i] = axis[j]
        return snapped

    def wins(z: np.ndarray, k: int) -> bool:
        if setup.target.evaluate(z) <= 0.0:
            return True
        if k == N or setup.avoid.evaluate(z) <= 0.0:
            return False
        dt = setup.times[k + 1] - setup.times[k]
        for u in controls:
            if all(_wins_after(z, u, d, dt, k) for d in disturbances):
                return True
        return False

    def _wins_after(z, u, d, dt, k) -> bool:
        nxt = snap(z + dt * setup.dynamics.evaluate(z, u, d))
        return nxt is not None and wins(nxt, k + 1)

    points = grid_points(axes)
    shape = tuple(len(a) for a in axes)
    return {
        k: np.array([wins(z, k) for z in points], dtype=bool).reshape(shape)
        for k in range(N, -1, -1)
    }


@dataclass
class StageContainment:
    stage: int
    samples: int
    qualifying: int
    inside: int

    @property
    def fraction(self) -> float:
        return self.inside / self.qualifying if self.qualifying else 1.0


@dataclass
class ContainmentReport:
    stages: List[StageContainment] = field(default_factory=list)
    threshold: float = 0.995

    @property
    def passed(self) -> bool:
        return all(s.fraction >= self.threshold for s in self.stages)

    @property
    def worst_fraction(self) -> float:
        return min((s.fraction for s in self.stages), default=1.0)

    def summary_line(self) -> str:
        return (
            f"containment passed={str(self.passed).lower()} stages={len(self.stages)} "
            f"worst_fraction={self.worst_fraction:.4f} threshold={self.threshold:g}"
        )


def interpolation_margin(V, points: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """sum_i |dV/dz_i| h_i + 1/2 sum_ij |H_ij| h_i h_j at each point."""
    margin = np.zeros(len(points))
    for i, g in enumerate(V.gradient()):
        margin += np.abs(g.evaluate_batch(points)) * spacing[i]
    for i, row in enumerate(V.hessian()):
        for j, h in enumerate(row):
            margin += 0.5 * np.abs(h.evaluate_batch(points)) * spacing[i] * spacing[j]
    return margin


def containment_check(
    solution: Solution,
    oracle: GridOracle,
    n_samples: Optional[int] = None,
    seed: int = 0,
    threshold: Optional[float] = None,
) -> ContainmentReport:
    """
    Fraction of samples inside {V_k <= rho_k - margin} that the oracle also
    places in R_k, per stage.

    Raises:
        ValueError: If the oracle was built for a different state space or time grid
    """
    setup = solution.setup
    settings = setup.verification
    if oracle.setup.states != setup.states or list(oracle.setup.times) != list(setup.times):
        raise ValueError("oracle and solution were built for different setups")
    n_samples = settings.containment_samples if n_samples is None else n_samples
    threshold = settings.containment_threshold if threshold is None else threshold

    report = ContainmentReport(threshold=threshold)
    spacing = oracle.spacing
    for k in sorted(solution.stages, reverse=True):
        if k not in oracle.masks:
            continue
        stage = solution.stage(k)
        rng = np.random.default_rng([seed, k])
        z = setup.roi.sample(rng, n_samples)
        level = stage.level().evaluate_batch(z)
        qualifying = z[level <= -interpolation_margin(stage.V, z, spacing)]
        inside = int(np.sum(oracle.contains(k, qualifying)))
        result = StageContainment(k, n_samples, len(qualifying), inside)
        report.stages.append(result)
        logger.info(
            "stage=%d containment qualifying=%d inside=%d fraction=%.4f",
            k, result.qualifying, result.inside, result.fraction,
        )
    logger.info(report.summary_line())
    return report
