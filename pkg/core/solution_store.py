"""
Solution directory layout:

    setup.yml          problem snapshot (explicit form, loadable as a config)
    stage_008.yml      one file per stage k: polynomials as text, Gram matrices
                       as dense row-major text
    run_log.txt        key=value line per alternation step
    solution.yml       complete flag, failure message, wall times, stats
    manifest_solve.yml run manifest per subcommand, written before compute
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from config.loader import ConfigLoader, ProblemSetup
from core.polynomial import parse_polynomial
from core.reach_avoid import Certificate, Solution, Stage

logger = logging.getLogger(__name__)

SETUP_FILE = "setup.yml"
SUMMARY_FILE = "solution.yml"
LOG_FILE = "run_log.txt"
MANIFEST_PATTERN = "manifest_{command}.yml"


class CertificateDataError(Exception):
    """A stage file is missing or lacks certificate data."""


def gram_to_text(gram: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(gram)) + "\n"


def gram_from_text(text: str) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in text.strip().splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, 0))
    if any(len(r) != len(rows) for r in rows):
        raise CertificateDataError("Gram matrix text is not square")
    return np.array(rows)


def stage_to_dict(setup: ProblemSetup, stage: Stage) -> Dict[str, Any]:
    return {
        "index": stage.index,
        "time": stage.time,
        "states": list(setup.states),
        "variables": list(setup.dynamics.stage_variables),
        "V": stage.V.to_text(),
        "rho": stage.rho,
        "K": [k.to_text() for k in stage.K],
        "eps_lyap": stage.eps_lyap,
        "eps_it": stage.eps_it,
        "lambda_lyap": stage.lambda_lyap,
        "multipliers": {key: p.to_text() for key, p in stage.multipliers.items()},
        "certificates": {
            name: {
                "basis": [list(m) for m in cert.basis],
                "gram": gram_to_text(cert.gram),
            }
            for name, cert in stage.certificates.items()
        },
        "stats": stage.stats,
        "log": stage.log,
    }


def stage_from_dict(setup: ProblemSetup, data: Dict[str, Any]) -> Stage:
    states = setup.states
    amb = setup.dynamics.stage_variables
    try:
        certificates = {
            name: Certificate(
                basis=[tuple(int(e) for e in m) for m in cert["basis"]],
                gram=gram_from_text(cert["gram"]),
            )
            for name, cert in (data.get("certificates") or {}).items()
        }
        return Stage(
            index=int(data["index"]),
            time=float(data["time"]),
            V=parse_polynomial(data["V"], states),
            rho=float(data["rho"]),
            K=[parse_polynomial(k, states) for k in data.get("K") or []],
            multipliers={
                key: parse_polynomial(text, amb)
                for key, text in (data.get("multipliers") or {}).items()
            },
            eps_lyap=float(data.get("eps_lyap", 0.0)),
            eps_it=float(data.get("eps_it", 0.0)),
            lambda_lyap=float(data.get("lambda_lyap", 0.0)),
            certificates=certificates,
            log=list(data.get("log") or []),
            stats=dict(data.get("stats") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CertificateDataError(f"malformed stage data: {exc}") from None


class SolutionStore:
    """Reads and writes one solution directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.loader = ConfigLoader()

    def stage_path(self, k: int) -> Path:
        return self.directory / f"stage_{k:03d}.yml"

    def prepare(self, setup: ProblemSetup) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.loader.save_setup(setup, str(self.directory / SETUP_FILE))

    def write_stage(self, setup: ProblemSetup, stage: Stage) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.stage_path(stage.index)
        tmp = path.with_suffix(".yml.tmp")
        tmp.write_text(yaml.dump(stage_to_dict(setup, stage), default_flow_style=False, sort_keys=False))
        tmp.replace(path)
        logger.debug("wrote stage=%d path=%s", stage.index, path)

    def append_log(self, stage: Stage) -> None:
        with open(self.directory / LOG_FILE, "a") as f:
            for entry in stage.log:
                fields = " ".join(f"{key}={value}" for key, value in entry.items())
                f.write(f"stage={stage.index} {fields}\n")

    def write_summary(self, solution: Solution) -> None:
        summary = {
            "name": solution.setup.name,
            "complete": solution.complete,
            "failure": solution.failure,
            "stages": sorted(solution.stages),
            "wall_times": {int(k): v for k, v in sorted(solution.wall_times.items())},
            "stats": {int(k): s.stats for k, s in sorted(solution.stages.items()) if s.stats},
        }
        with open(self.directory / SUMMARY_FILE, "w") as f:
            yaml.dump(summary, f, default_flow_style=False, sort_keys=False)

    def manifest_path(self, command: str) -> Path:
        return self.directory / MANIFEST_PATTERN.format(command=command)

    def write_manifest(self, manifest: Dict[str, Any]) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.manifest_path(manifest["command"])
        with open(path, "w") as f:
            yaml.dump(manifest, f, default_flow_style=False, sort_keys=False)
        return path

    def read_manifest(self, command: str) -> Optional[Dict[str, Any]]:
        path = self.manifest_path(command)
        if not path.exists():
            return None
        return yaml.safe_load(path.read_text())

    def load_setup(self) -> ProblemSetup:
        return self.loader.load_setup(str(self.directory / SETUP_FILE))

    def read_stage(self, setup: ProblemSetup, k: int) -> Stage:
        path = self.stage_path(k)
        if not path.exists():
            raise CertificateDataError(f"missing stage file {path.name}")
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise CertificateDataError(f"{path.name}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise CertificateDataError(f"{path.name}: expected a mapping")
        return stage_from_dict(setup, data)

    def load_stages(self, setup: ProblemSetup) -> List[Stage]:
        """Consecutive stages N, N-1, ... present on disk."""
        stages = []
        for k in range(setup.n_stages, -1, -1):
            if not self.stage_path(k).exists():
                break
            stages.append(self.read_stage(setup, k))
        return stages

    def read_summary(self) -> Optional[Dict[str, Any]]:
        path = self.directory / SUMMARY_FILE
        if not path.exists():
            return None
        return yaml.safe_load(path.read_text()) or {}

    def load_solution(self) -> Solution:
        setup = self.load_setup()
        solution = Solution(setup=setup)
        for stage in self.load_stages(setup):
            solution.stages[stage.index] = stage
        if setup.n_stages not in solution.stages:
            raise CertificateDataError(f"final stage file missing in {self.directory}")
        summary = self.read_summary() or {}
        solution.complete = bool(summary.get("complete")) and 0 in solution.stages
        solution.failure = summary.get("failure")
        solution.wall_times = {int(k): float(v) for k, v in (summary.get("wall_times") or {}).items()}
        return solution
