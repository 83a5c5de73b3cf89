"""
Reach-Avoid Dynamic Programming for sosreach

Computes the value functions V_k, levels rho_k and feedback controllers K_k
backward in time, one SOS program per time step. Each step's program is
bilinear, so it is solved by alternating over three variable groups:

    multipliers   {eps_lyap, all multipliers}
    value         {V, eps, multipliers except lyap_R, ctrl_R, ca_A, it_T}
    control       {K, rho, eps, same reduced multiplier set}

Rows of every stage program (names used for certificates):

    lyap     Lyapunov-like decrease on the boundary of {V_k <= rho_k} outside the target
    ca       V_k >= rho_k on the avoid set outside the target
    ctrl.j   control row j satisfied by K_k on {V_k <= rho_k}
    it       soft invariance V_{k+1} <= rho_{k+1} => V_k <= rho_k, slack eps_it

All rows are relaxed to the region of interest with per-coordinate multipliers.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.loader import ProblemSetup
from core.conic_solver import SolverSettings, SolverStatus
from core.polynomial import Monomial, Polynomial, monomial_basis, monomial_box_integral
from core.sos_program import DecisionPolynomial, PolyExpression, SosProgram, SosSolution

logger = logging.getLogger(__name__)

BLOCK_MULTIPLIERS = "multipliers"
BLOCK_VALUE = "value"
BLOCK_CONTROL = "control"
BLOCKS = (BLOCK_MULTIPLIERS, BLOCK_VALUE, BLOCK_CONTROL)

# multipliers held fixed in the value and control blocks
BILINEAR_FAMILIES = ("lyap_R", "ctrl_R", "ca_A", "it_T")
# multiplier families living over (z, d); the others live over z
STAGE_FAMILIES = ("lyap_D", "lyap_R", "lyap_T", "lyap_ROI", "ctrl_R", "ctrl_D", "ctrl_ROI")
FREE_FAMILIES = ("lyap_R",)


class NoFeasibleStageError(Exception):
    """A stage could not be certified within the iteration budget."""

    def __init__(self, index: int, message: str):
        super().__init__(f"stage {index}: {message}")
        self.index = index


def family(key: str) -> str:
    return key.split(".")[0]


@dataclass
class Certificate:
    """Gram matrix Q with basis nu such that the row equals nu^T Q nu."""

    basis: List[Monomial]
    gram: np.ndarray


@dataclass
class Stage:
    """Accepted (or final) solution for one time step."""

    index: int
    time: float
    V: Polynomial
    rho: float
    K: List[Polynomial] = field(default_factory=list)
    multipliers: Dict[str, Polynomial] = field(default_factory=dict)
    eps_lyap: float = 0.0
    eps_it: float = 0.0
    lambda_lyap: float = 0.0
    certificates: Dict[str, Certificate] = field(default_factory=dict)
    log: List[Dict[str, Any]] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def level(self) -> Polynomial:
        """V - rho: the set is its zero sublevel set."""
        return self.V - self.rho

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        return self.level().evaluate_batch(points) <= -margin


@dataclass
class Solution:
    setup: ProblemSetup
    stages: Dict[int, Stage] = field(default_factory=dict)
    complete: bool = False
    failure: Optional[str] = None
    wall_times: Dict[int, float] = field(default_factory=dict)

    @property
    def final_index(self) -> int:
        return self.setup.n_stages

    @property
    def first_index(self) -> int:
        return min(self.stages)

    def stage(self, k: int) -> Stage:
        try:
            return self.stages[k]
        except KeyError:
            raise KeyError(f"stage {k} is not part of this solution") from None

    def synthesized(self) -> List[int]:
        """Indices of stages carrying a controller (all but the final one)."""
        return sorted(k for k in self.stages if k < self.final_index)


@dataclass
class Iterate:
    """Current values of every decision group during alternation."""

    V: Polynomial
    rho: float
    K: List[Polynomial]
    multipliers: Dict[str, Polynomial]
    eps_lyap: float = 0.0
    eps_it: float = 0.0
    eps_lyap_frozen: bool = False


# -- stage rows ----------------------------------------------------------------


def multiplier_keys(setup: ProblemSetup) -> List[str]:
    n_d = len(setup.disturbance_set)
    n_roi = setup.roi.dimension
    keys = [f"lyap_D.{i}" for i in range(n_d)]
    keys += ["lyap_R", "lyap_T"]
    keys += [f"lyap_ROI.{i}" for i in range(n_roi)]
    keys += ["ca_T", "ca_A"] + [f"ca_ROI.{i}" for i in range(n_roi)]
    for j in range(len(setup.control_set)):
        keys.append(f"ctrl_R.{j}")
        keys += [f"ctrl_D.{j}.{i}" for i in range(n_d)]
        keys += [f"ctrl_ROI.{j}.{i}" for i in range(n_roi)]
    keys += ["it_T"] + [f"it_ROI.{i}" for i in range(n_roi)]
    return keys


def free_set(block: str, setup: ProblemSetup, eps_lyap_frozen: bool) -> List[str]:
    keys = multiplier_keys(setup)
    eps = [] if eps_lyap_frozen else ["eps_lyap"]
    if block == BLOCK_MULTIPLIERS:
        return eps + keys
    reduced = [k for k in keys if family(k) not in BILINEAR_FAMILIES]
    if block == BLOCK_VALUE:
        return ["V"] + eps + ["eps_it"] + reduced
    if block == BLOCK_CONTROL:
        controls = [f"K.{j}" for j in range(len(setup.dynamics.controls))]
        return controls + ["rho"] + eps + ["eps_it"] + reduced
    raise ValueError(f"unknown block {block!r}")


class _RowBuilder:
    """Assembles the stage rows from decision handles and the current iterate."""

    def __init__(
        self,
        setup: ProblemSetup,
        next_stage: Stage,
        iterate: Iterate,
        handles: Dict[str, DecisionPolynomial],
    ):
        self.setup = setup
        self.next = next_stage
        self.it = iterate
        self.handles = handles
        self.amb = setup.dynamics.stage_variables
        self.dt = setup.times[next_stage.index] - setup.times[next_stage.index - 1]

    def known(self, poly: Polynomial) -> PolyExpression:
        return PolyExpression.known(poly.embed(self.amb))

    def const(self, value: float) -> PolyExpression:
        return PolyExpression.known(Polynomial.constant(self.amb, value))

    def term(self, key: str) -> PolyExpression:
        if key in self.handles:
            return self.handles[key].expr()
        if key == "V":
            return self.known(self.it.V)
        if key == "rho":
            return self.const(self.it.rho)
        if key == "eps_lyap":
            return self.const(0.0 if self.it.eps_lyap_frozen else self.it.eps_lyap)
        if key == "eps_it":
            return self.const(self.it.eps_it)
        if key.startswith("K."):
            return self.known(self.it.K[int(key[2:])])
        return self.known(self.it.multipliers.get(key, Polynomial.zero(self.amb)))

    def control_terms(self) -> List[PolyExpression]:
        return [self.term(f"K.{j}") for j in range(len(self.setup.dynamics.controls))]

    def vdot(self) -> PolyExpression:
        """dV/dz . f(z, K(z), d) with V from the configured stage."""
        dyn = self.setup.dynamics
        if self.setup.hyperparameters.gradient_stage == "next":
            grad_source = self.known(self.next.V)
        else:
            grad_source = self.term("V")
        controls = self.control_terms()
        total = self.const(0.0)
        if any(not k.is_known for k in controls):
            drift, gains = dyn.control_affine_parts()
            for i, name in enumerate(dyn.states):
                fi = self.known(drift[i])
                for j, k in enumerate(controls):
                    fi = fi + k * gains[i][j]
                total = total + grad_source.differentiate(name) * fi
        else:
            closed = dyn.closed_loop([k.constant for k in controls])
            for i, name in enumerate(dyn.states):
                total = total + grad_source.differentiate(name) * closed[i]
        return total

    def decrease(self) -> PolyExpression:
        """Discrete decrease of V - rho along the closed loop, minus eps_lyap."""
        V, rho = self.term("V"), self.term("rho")
        return (
            self.vdot()
            + (self.known(self.next.V) - V) * (1.0 / self.dt)
            - (self.const(self.next.rho) - rho) * (1.0 / self.dt)
            - self.term("eps_lyap")
        )

    def rows(self) -> Dict[str, PolyExpression]:
        setup = self.setup
        V, rho = self.term("V"), self.term("rho")
        V_next = self.known(self.next.V)
        rho_next = self.next.rho
        phi_T = self.known(setup.target)
        phi_A = self.known(setup.avoid)
        phi_D = [self.known(p) for p in setup.disturbance_set]
        phi_roi = [self.known(p) for p in setup.roi_rows()]

        def roi_part(prefix: str) -> PolyExpression:
            total = self.const(0.0)
            for i, row in enumerate(phi_roi):
                total = total + self.term(f"{prefix}.{i}") * row
            return total

        rows: Dict[str, PolyExpression] = {}
        lyap = -self.decrease()
        for i, row in enumerate(phi_D):
            lyap = lyap + self.term(f"lyap_D.{i}") * row
        lyap = lyap + self.term("lyap_R") * (V - rho)
        lyap = lyap - self.term("lyap_T") * phi_T
        rows["lyap"] = lyap + roi_part("lyap_ROI")

        margin = setup.hyperparameters.avoid_margin
        ca = V - rho - margin - self.term("ca_T") * phi_T + self.term("ca_A") * phi_A
        rows["ca"] = ca + roi_part("ca_ROI")

        controls = self.control_terms()
        zero_u = (0,) * len(setup.dynamics.controls)
        for j, row in enumerate(setup.control_set):
            phi_u = self.const(row.coefficient(zero_u))
            for c, k in enumerate(controls):
                unit = tuple(1 if i == c else 0 for i in range(len(controls)))
                phi_u = phi_u + k * row.coefficient(unit)
            ctrl = -phi_u + self.term(f"ctrl_R.{j}") * (V - rho)
            for i, prow in enumerate(phi_D):
                ctrl = ctrl + self.term(f"ctrl_D.{j}.{i}") * prow
            rows[f"ctrl.{j}"] = ctrl + roi_part(f"ctrl_ROI.{j}")

        it = -(V - rho) + self.term("it_T") * (V_next - rho_next + self.term("eps_it"))
        rows["it"] = it + roi_part("it_ROI")
        return rows


@dataclass
class StageProgram:
    block: str
    program: SosProgram
    handles: Dict[str, DecisionPolynomial]

    def apply(self, solution: SosSolution, iterate: Iterate, states: Sequence[str]) -> Iterate:
        """New iterate with the free groups replaced by solved values."""
        updated = replace(iterate, K=list(iterate.K), multipliers=dict(iterate.multipliers))
        for key, dp in self.handles.items():
            if key == "V":
                updated.V = solution.extract(dp).embed(states)
            elif key == "rho":
                updated.rho = solution.scalar(dp)
            elif key == "eps_lyap":
                updated.eps_lyap = max(0.0, solution.scalar(dp))
            elif key == "eps_it":
                updated.eps_it = max(0.0, solution.scalar(dp))
            elif key.startswith("K."):
                updated.K[int(key[2:])] = solution.extract(dp).embed(states)
            else:
                updated.multipliers[key] = solution.extract(dp)
        if iterate.eps_lyap_frozen:
            updated.eps_lyap = 0.0
        return updated


def build_stage_program(
    setup: ProblemSetup,
    next_stage: Stage,
    block: str,
    iterate: Iterate,
    lambda_lyap: Optional[float] = None,
    coefficient_bound: Optional[float] = None,
) -> StageProgram:
    """
    SOS program of one alternation block; groups outside the block are pinned
    to the iterate.
    """
    hp = setup.hyperparameters
    lambda_lyap = hp.lambda_lyap if lambda_lyap is None else lambda_lyap
    amb = setup.dynamics.stage_variables
    states = setup.states
    degrees = setup.multipliers.resolve(setup)
    k = next_stage.index - 1
    program = SosProgram(amb, name=f"stage{k}.{block}")

    handles: Dict[str, DecisionPolynomial] = {}
    for key in free_set(block, setup, iterate.eps_lyap_frozen):
        if key == "V":
            half = monomial_basis(states, hp.deg_V // 2, amb)
            handles[key] = program.declare_sos_poly(half, name="V")
        elif key == "rho":
            handles[key] = program.declare_scalar("rho")
        elif key in ("eps_lyap", "eps_it"):
            handles[key] = program.declare_scalar(key, nonneg=True)
        elif key.startswith("K."):
            handles[key] = program.declare_poly(monomial_basis(states, hp.deg_K, amb), name=key)
        else:
            fam = family(key)
            domain = amb if fam in STAGE_FAMILIES else states
            degree = degrees[fam]
            if fam in FREE_FAMILIES:
                handles[key] = program.declare_poly(monomial_basis(domain, degree, amb), name=key)
            else:
                handles[key] = program.declare_sos_poly(
                    monomial_basis(domain, degree // 2, amb), name=key
                )

    rows = _RowBuilder(setup, next_stage, iterate, handles).rows()
    for name, expression in rows.items():
        program.assert_sos(expression, name=name)

    if "rho" in handles:
        program.maximize(handles["rho"])
    if "V" in handles:
        weights = [monomial_box_integral(m[: len(states)], setup.roi) for m in handles["V"].basis]
        program.minimize(handles["V"], weights)
    if "eps_lyap" in handles:
        program.minimize(handles["eps_lyap"], [lambda_lyap])
    if "eps_it" in handles:
        program.minimize(handles["eps_it"], [hp.lambda_it])
    if coefficient_bound is not None:
        program.bound_free_coefficients(coefficient_bound)
    return StageProgram(block, program, handles)


def _stage_builder(setup: ProblemSetup, stage: Stage, next_stage: Stage) -> _RowBuilder:
    iterate = Iterate(
        V=stage.V, rho=stage.rho, K=list(stage.K), multipliers=dict(stage.multipliers),
        eps_lyap=stage.eps_lyap, eps_it=stage.eps_it,
    )
    return _RowBuilder(setup, next_stage, iterate, {})


def stage_decrease(
    setup: ProblemSetup, stage: Stage, next_stage: Stage, boundary_term: bool = True
) -> Polynomial:
    """
    -(dV/dz f + (V_{k+1} - V_k)/dt - (rho_{k+1} - rho_k)/dt - eps_lyap) + L_R (V_k - rho_k)
    over (z, d). Non-negative wherever the Lyapunov row's premises hold.

    With ``boundary_term=False`` the L_R term is dropped, leaving the plain
    discrete decrease; the two agree on {V_k = rho_k}.
    """
    builder = _stage_builder(setup, stage, next_stage)
    plain = -builder.decrease()
    if not boundary_term:
        return plain.constant
    level = builder.term("V") - builder.term("rho")
    return (plain + builder.term("lyap_R") * level).constant


def stage_rows(setup: ProblemSetup, stage: Stage, next_stage: Stage) -> Dict[str, Polynomial]:
    """
    Concrete row polynomials of an accepted stage, plus every polynomial the
    stage declares SOS (V and the SOS multipliers), keyed by certificate name.
    """
    rows = {
        name: expr.constant
        for name, expr in _stage_builder(setup, stage, next_stage).rows().items()
    }
    amb = setup.dynamics.stage_variables
    rows["V.sos"] = stage.V.embed(amb)
    for key, poly in stage.multipliers.items():
        if family(key) not in FREE_FAMILIES:
            rows[f"{key}.sos"] = poly.embed(amb)
    return rows


# -- alternation -----------------------------------------------------------------


def init_final_stage(setup: ProblemSetup) -> Stage:
    """V_N = phi_T + rho_N, so that V_N - rho_N equals phi_T coefficient-wise."""
    rho_final = setup.hyperparameters.rho_final
    return Stage(
        index=setup.n_stages,
        time=setup.times[-1],
        V=setup.target + rho_final,
        rho=rho_final,
    )


def initial_guess(setup: ProblemSetup, next_stage: Stage) -> Iterate:
    states = setup.states
    return Iterate(
        V=next_stage.V,
        rho=next_stage.rho,
        K=[Polynomial.zero(states) for _ in setup.dynamics.controls],
        multipliers={},
        eps_lyap=0.0,
        eps_it=0.0,
    )


def _max_change(old: Iterate, new: Iterate) -> float:
    change = abs(new.rho - old.rho)
    change = max(change, (new.V - old.V).max_abs_coefficient())
    for a, b in zip(old.K, new.K):
        change = max(change, (b - a).max_abs_coefficient())
    return change


def _solve_block(
    setup: ProblemSetup,
    next_stage: Stage,
    block: str,
    iterate: Iterate,
    lambda_lyap: float,
    settings: SolverSettings,
) -> Tuple[Optional[StageProgram], SosSolution]:
    stage_program = build_stage_program(setup, next_stage, block, iterate, lambda_lyap)
    solution = stage_program.program.solve(settings)
    if solution.has_solution:
        return stage_program, solution
    if solution.status is SolverStatus.INFEASIBLE:
        return None, solution
    logger.warning(
        "stage=%d block=%s status=%s reason=%s retry=for_retry coefficient_bound=%g",
        next_stage.index - 1, block, solution.status.value,
        solution.stats.get("reason"), setup.hyperparameters.coefficient_bound,
    )
    stage_program = build_stage_program(
        setup, next_stage, block, iterate, lambda_lyap,
        coefficient_bound=setup.hyperparameters.coefficient_bound,
    )
    solution = stage_program.program.solve(settings.for_retry())
    return (stage_program if solution.has_solution else None), solution


def alternate(
    setup: ProblemSetup,
    next_stage: Stage,
    initial: Optional[Iterate] = None,
    settings: Optional[SolverSettings] = None,
) -> Stage:
    """
    Three-block alternation for stage k = next_stage.index - 1.

    Raises:
        NoFeasibleStageError: If no block solve ever succeeds, or eps_lyap is
            still above delta_slack after max_iter iterations
    """
    hp = setup.hyperparameters
    settings = settings or setup.solver
    k = next_stage.index - 1
    iterate = initial or initial_guess(setup, next_stage)
    lambda_lyap = hp.lambda_lyap
    certificates: Dict[str, Certificate] = {}
    log: List[Dict[str, Any]] = []
    successes = 0
    failures = 0
    converged = False
    start = time.perf_counter()

    for iteration in range(hp.max_iter):
        previous = iterate
        for block in BLOCKS:
            stage_program, solution = _solve_block(
                setup, next_stage, block, iterate, lambda_lyap, settings
            )
            entry = {
                "iter": iteration,
                "block": block,
                "status": solution.status.value,
                "objective": solution.objective if solution.has_solution else None,
            }
            if stage_program is None:
                failures += 1
                entry["reason"] = solution.stats.get("reason")
                log.append(entry)
                logger.info(
                    "stage=%d iter=%d block=%s status=%s", k, iteration, block, solution.status.value
                )
                continue
            successes += 1
            iterate = stage_program.apply(solution, iterate, setup.states)
            for name, gram in solution.grams.items():
                certificates[name] = Certificate(list(solution.gram_bases[name]), np.array(gram))

            if "eps_lyap" in stage_program.handles:
                if iterate.eps_lyap >= hp.delta_slack:
                    lambda_lyap *= hp.alpha
                else:
                    iterate = replace(iterate, eps_lyap_frozen=True)
            entry.update(
                eps_lyap=iterate.eps_lyap,
                eps_it=iterate.eps_it,
                lambda_lyap=lambda_lyap,
                rho=iterate.rho,
            )
            log.append(entry)
            logger.info(
                "stage=%d iter=%d block=%s status=%s objective=%.6g eps_lyap=%.3e eps_it=%.3e "
                "lambda_lyap=%.3g rho=%.6g",
                k, iteration, block, solution.status.value, solution.objective,
                iterate.eps_lyap, iterate.eps_it, lambda_lyap, iterate.rho,
            )

        change = _max_change(previous, iterate)
        log.append({"iter": iteration, "change": change})
        if successes and change < hp.delta_conv and iterate.eps_lyap < hp.delta_slack:
            converged = True
            break

    elapsed = time.perf_counter() - start
    if successes == 0:
        raise NoFeasibleStageError(k, f"every block solve failed over {hp.max_iter} iterations")
    if iterate.eps_lyap >= hp.delta_slack:
        raise NoFeasibleStageError(
            k, f"eps_lyap={iterate.eps_lyap:.3e} still above delta_slack={hp.delta_slack:g}"
        )
    logger.info(
        "stage=%d accepted converged=%s rho=%.6g eps_lyap=%.3e eps_it=%.3e seconds=%.2f",
        k, converged, iterate.rho, iterate.eps_lyap, iterate.eps_it, elapsed,
    )
    return Stage(
        index=k,
        time=setup.times[k],
        V=iterate.V,
        rho=iterate.rho,
        K=list(iterate.K),
        multipliers=dict(iterate.multipliers),
        eps_lyap=iterate.eps_lyap,
        eps_it=iterate.eps_it,
        lambda_lyap=lambda_lyap,
        certificates=certificates,
        log=log,
        stats={
            "converged": converged,
            "iterations": iteration + 1,
            "solves": successes,
            "failed_solves": failures,
            "seconds": round(elapsed, 3),
        },
    )


def solve_reach_avoid(
    setup: ProblemSetup,
    store=None,
    resume: bool = False,
    settings: Optional[SolverSettings] = None,
) -> Solution:
    """
    Backward DP over k = N-1 .. 0.

    Args:
        setup: Problem instance
        store: Optional persistence object (``core.solution_store.SolutionStore``);
            every accepted stage is written as soon as it exists
        resume: Continue from the stages already present in ``store``

    Returns:
        Solution, tagged incomplete when a stage could not be certified
    """
    solution = Solution(setup=setup)
    N = setup.n_stages
    if resume and store is not None:
        for stage in store.load_stages(setup):
            solution.stages[stage.index] = stage
        if solution.stages:
            logger.info("resume stages=%s", sorted(solution.stages))
    if N not in solution.stages:
        final = init_final_stage(setup)
        solution.stages[N] = final
        if store is not None:
            store.write_stage(setup, final)

    for k in range(N - 1, -1, -1):
        if k in solution.stages:
            continue
        start = time.perf_counter()
        try:
            stage = alternate(setup, solution.stages[k + 1], settings=settings)
        except NoFeasibleStageError as exc:
            logger.error("stage=%d status=no-feasible-stage detail=%s", k, exc)
            solution.failure = str(exc)
            break
        solution.stages[k] = stage
        solution.wall_times[k] = round(time.perf_counter() - start, 3)
        if store is not None:
            store.write_stage(setup, stage)
            store.append_log(stage)
    else:
        solution.complete = True

    if store is not None:
        store.write_summary(solution)
    return solution


def controller_at(solution: Solution, s: float, z: Sequence[float]) -> np.ndarray:
    """
    Zero-order-hold feedback u = K_k(z), k the stage with the largest s_k <= s,
    clamped into the control set's box.
    """
    setup = solution.setup
    synthesized = solution.synthesized()
    if not synthesized:
        return setup.clamp_control(np.zeros(len(setup.dynamics.controls)))
    times = np.asarray(setup.times)
    k = int(np.searchsorted(times, s, side="right")) - 1
    k = min(max(k, synthesized[0]), synthesized[-1])
    stage = solution.stage(k)
    u = np.array([K.evaluate(z) for K in stage.K])
    return setup.clamp_control(u)
