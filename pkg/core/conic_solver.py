"""
Conic Solver for sosreach

Solves standard-form semidefinite programs (see ``core.sdp``) behind a
backend-agnostic interface. The reference backend is an infeasible-start
primal-dual interior-point method (HKM search direction, Mehrotra
predictor-corrector) for small dense PSD blocks; free variables are split
into differences of nonnegative ones.

Status vocabulary: optimal | feasible | infeasible | numerical-failure.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from core.sdp import SQRT2, SdpProblem, svec, svec_length

logger = logging.getLogger(__name__)


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"

    @property
    def has_solution(self) -> bool:
        return self in (SolverStatus.OPTIMAL, SolverStatus.FEASIBLE)


@dataclass
class SolverSettings:
    """Settings shared by every backend."""

    backend: str = "interior_point"
    feasibility_tolerance: float = 1e-8
    gap_tolerance: float = 1e-7
    max_iterations: int = 200
    step_fraction: float = 0.98
    accept_tolerance: float = 1e-7

    def __post_init__(self):
        if self.feasibility_tolerance <= 0 or self.gap_tolerance <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not 0.0 < self.step_fraction < 1.0:
            raise ValueError("step_fraction must lie in (0, 1)")

    def for_retry(self) -> "SolverSettings":
        """
        Settings for the single retry after a numerical failure: twice the
        iteration budget and a step fraction of at most 0.9. Tolerances are
        unchanged.
        """
        return SolverSettings(
            backend=self.backend,
            feasibility_tolerance=self.feasibility_tolerance,
            gap_tolerance=self.gap_tolerance,
            max_iterations=2 * self.max_iterations,
            step_fraction=min(self.step_fraction, 0.9),
            accept_tolerance=self.accept_tolerance,
        )


@dataclass
class ConicSolution:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    objective: float
    psd_blocks: List[np.ndarray] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def to_text(self) -> str:
        """Plain key-value rendering of the solution vectors."""
        lines = [
            f"status = {self.status.value}",
            f"objective = {self.objective!r}",
        ]
        for key in sorted(self.stats):
            lines.append(f"stats.{key} = {self.stats[key]}")
        lines.extend(f"x[{i}] = {float(v)!r}" for i, v in enumerate(self.x))
        lines.extend(f"y[{i}] = {float(v)!r}" for i, v in enumerate(self.y))
        return "\n".join(lines) + "\n"


# -- interior-point backend ----------------------------------------------


@dataclass
class _BlockData:
    """Row-wise full-matrix view of one PSD block of A."""

    n: int
    avec: sp.csr_matrix  # rows x n^2, entries of the symmetric A_i matrices
    entries: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]  # per row: (p, q, value)
    C: np.ndarray


def _block_view(A_svec: sp.csr_matrix, c_svec: np.ndarray, n: int) -> _BlockData:
    rows_idx, cols_idx = np.tril_indices(n)
    order = np.lexsort((rows_idx, cols_idx))
    p_of, q_of = rows_idx[order], cols_idx[order]

    coo = A_svec.tocoo()
    p = p_of[coo.col]
    q = q_of[coo.col]
    diag = p == q
    scaled = np.where(diag, coo.data, coo.data / SQRT2)
    r_full = np.concatenate([coo.row, coo.row[~diag]])
    p_full = np.concatenate([p, q[~diag]])
    q_full = np.concatenate([q, p[~diag]])
    v_full = np.concatenate([scaled, scaled[~diag]])
    avec = sp.csr_matrix(
        (v_full, (r_full, p_full * n + q_full)), shape=(A_svec.shape[0], n * n)
    )
    avec.sum_duplicates()
    avec.sort_indices()
    entries = []
    for i in range(avec.shape[0]):
        start, stop = avec.indptr[i], avec.indptr[i + 1]
        cols = avec.indices[start:stop]
        entries.append((cols // n, cols % n, avec.data[start:stop]))

    C = np.zeros((n, n))
    cp, cq = p_of, q_of
    cdiag = cp == cq
    cval = np.where(cdiag, c_svec, c_svec / SQRT2)
    C[cp, cq] = cval
    C[cq, cp] = cval
    return _BlockData(n=n, avec=avec, entries=entries, C=C)


def _psd_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping X + alpha dX PSD (unscaled)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Linv_dX = sla.solve_triangular(L, dX, lower=True)
    S = sla.solve_triangular(L, Linv_dX.T, lower=True)
    lam_min = np.linalg.eigvalsh(0.5 * (S + S.T)).min()
    if lam_min >= 0:
        return 1.0
    return min(1.0, -1.0 / lam_min)


def _lp_step(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-x[neg] / dx[neg])))


class InteriorPointBackend:
    """Dense primal-dual path-following method for desk-scale SDPs."""

    name = "interior_point"

    def solve(self, problem: SdpProblem, settings: SolverSettings) -> ConicSolution:
        start = time.perf_counter()
        A = problem.A.tocsr()
        b = problem.b.copy()

        row_norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        empty = row_norms == 0.0
        if np.any(empty & (np.abs(b) > settings.feasibility_tolerance)):
            logger.info("solver=interior_point status=infeasible reason=empty_row")
            return self._failure(problem, SolverStatus.INFEASIBLE, "empty_row", start)
        keep = np.flatnonzero(~empty)
        A = A[keep]
        b = b[keep]
        m = b.size

        nf, nn = problem.n_free, problem.n_nonneg
        A_free = A[:, :nf]
        A_lp = sp.hstack([A_free, -A_free, A[:, nf: nf + nn]]).tocsr()
        c_lp = np.concatenate([problem.c[:nf], -problem.c[:nf], problem.c[nf: nf + nn]])
        blocks = []
        for off, n in zip(problem.block_offsets(), problem.psd_dims):
            cols = slice(off, off + svec_length(n))
            blocks.append(_block_view(A[:, cols], problem.c[cols], n))

        nu = A_lp.shape[1] + sum(blk.n for blk in blocks)
        if nu == 0:
            return self._failure(problem, SolverStatus.NUMERICAL_FAILURE, "no_variables", start)

        scale_b = 1.0 + float(np.max(np.abs(b))) if m else 1.0
        scale_c = 1.0 + float(np.max(np.abs(problem.c))) if problem.c.size else 1.0
        a_norm = 1.0 + (float(row_norms[keep].max()) if m else 0.0)
        xi = max(10.0, np.sqrt(nu), scale_b / a_norm * np.sqrt(nu))
        eta = max(10.0, np.sqrt(nu), scale_c, a_norm)

        x = np.full(A_lp.shape[1], xi)
        z = np.full(A_lp.shape[1], eta)
        Xs = [xi * np.eye(blk.n) for blk in blocks]
        Zs = [eta * np.eye(blk.n) for blk in blocks]
        y = np.zeros(m)

        def apply_A(x_lp, mats) -> np.ndarray:
            out = A_lp @ x_lp if A_lp.shape[1] else np.zeros(m)
            for blk, M in zip(blocks, mats):
                out = out + blk.avec @ M.ravel()
            return out

        def apply_AT(v) -> Tuple[np.ndarray, List[np.ndarray]]:
            lp = A_lp.T @ v if A_lp.shape[1] else np.zeros(0)
            mats = []
            for blk in blocks:
                W = (blk.avec.T @ v).reshape(blk.n, blk.n)
                mats.append(0.5 * (W + W.T))
            return lp, mats

        status = SolverStatus.NUMERICAL_FAILURE
        reason = "max_iterations"
        relp = reld = gap = np.inf
        iteration = 0
        stall = 0
        for iteration in range(settings.max_iterations):
            ATy_lp, ATy = apply_AT(y)
            rp = b - apply_A(x, Xs)
            rd_lp = c_lp - ATy_lp - z
            rds = [blk.C - W - Z for blk, W, Z in zip(blocks, ATy, Zs)]
            mu = (x @ z + sum(np.sum(X * Z) for X, Z in zip(Xs, Zs))) / nu
            pobj = c_lp @ x + sum(np.sum(blk.C * X) for blk, X in zip(blocks, Xs))
            dobj = b @ y
            rd_norm = np.sqrt(rd_lp @ rd_lp + sum(np.sum(R * R) for R in rds))
            relp = np.linalg.norm(rp, np.inf) / scale_b if m else 0.0
            reld = rd_norm / scale_c
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            logger.debug(
                "iter=%d pobj=%.6e dobj=%.6e relp=%.2e reld=%.2e gap=%.2e mu=%.2e",
                iteration, pobj, dobj, relp, reld, gap, mu,
            )
            if (
                relp <= settings.feasibility_tolerance
                and reld <= settings.feasibility_tolerance
                and gap <= settings.gap_tolerance
            ):
                status, reason = SolverStatus.OPTIMAL, "converged"
                break

            # Farkas-type certificates from diverging iterates
            y_norm = np.linalg.norm(y)
            if dobj > 0 and y_norm > 0:
                cert = (c_lp - rd_lp, [blk.C - R for blk, R in zip(blocks, rds)])
                cert_norm = np.sqrt(cert[0] @ cert[0] + sum(np.sum(W * W) for W in cert[1]))
                if cert_norm <= 1e-8 * dobj and dobj / y_norm >= 1e-6:
                    status, reason = SolverStatus.INFEASIBLE, "primal_infeasible"
                    break
            x_norm = np.sqrt(x @ x + sum(np.sum(X * X) for X in Xs))
            if pobj < 0 and x_norm > 0:
                ax_norm = np.linalg.norm(b - rp)
                if ax_norm <= 1e-8 * (-pobj) and -pobj / x_norm >= 1e-6:
                    status, reason = SolverStatus.NUMERICAL_FAILURE, "dual_infeasible"
                    break

            try:
                Zinvs = [np.linalg.inv(Z) for Z in Zs]
                d_lp = x / z
                M = (A_lp @ sp.diags(d_lp) @ A_lp.T).toarray() if A_lp.shape[1] else np.zeros((m, m))
                for blk, X, Zinv in zip(blocks, Xs, Zinvs):
                    M += self._schur_block(blk, X, Zinv, m)
                M = 0.5 * (M + M.T)
                if m:
                    M[np.diag_indices_from(M)] += 1e-13 * max(1.0, float(np.max(np.diag(M))))
                factor = self._factor(M) if m else (lambda rhs: rhs)
            except (np.linalg.LinAlgError, ValueError):
                reason = "schur_factorization"
                break

            def direction(target: float, corr_lp, corr_ps):
                rc_lp = target - x * z
                if corr_lp is not None:
                    rc_lp = rc_lp - corr_lp
                lp_term = rc_lp / z - x * rd_lp / z
                ps_terms = []
                for i, (X, Z, Zinv, R) in enumerate(zip(Xs, Zs, Zinvs, rds)):
                    RcZinv = target * Zinv - X
                    if corr_ps is not None:
                        RcZinv = RcZinv - corr_ps[i] @ Zinv
                    ps_terms.append(RcZinv - X @ R @ Zinv)
                rhs = rp - apply_A(lp_term, ps_terms)
                dy = factor(rhs)
                ATdy_lp, ATdy = apply_AT(dy)
                dz = rd_lp - ATdy_lp
                dx = lp_term + d_lp * ATdy_lp
                dZs, dXs = [], []
                for X, Zinv, R, W, T in zip(Xs, Zinvs, rds, ATdy, ps_terms):
                    dZ = R - W
                    dX = T + X @ W @ Zinv
                    dZs.append(0.5 * (dZ + dZ.T))
                    dXs.append(0.5 * (dX + dX.T))
                return dx, dy, dz, dXs, dZs

            def steps(dx, dz, dXs, dZs):
                ap = _lp_step(x, dx) if x.size else 1.0
                ad = _lp_step(z, dz) if z.size else 1.0
                for X, dX in zip(Xs, dXs):
                    ap = min(ap, _psd_step(X, dX))
                for Z, dZ in zip(Zs, dZs):
                    ad = min(ad, _psd_step(Z, dZ))
                return ap, ad

            dx, dy, dz, dXs, dZs = direction(0.0, None, None)
            ap, ad = steps(dx, dz, dXs, dZs)
            mu_aff = (
                (x + ap * dx) @ (z + ad * dz)
                + sum(
                    np.sum((X + ap * dX) * (Z + ad * dZ))
                    for X, dX, Z, dZ in zip(Xs, dXs, Zs, dZs)
                )
            ) / nu
            sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0
            corr_lp = dx * dz
            corr_ps = [dX @ dZ for dX, dZ in zip(dXs, dZs)]
            dx, dy, dz, dXs, dZs = direction(sigma * mu, corr_lp, corr_ps)
            ap, ad = steps(dx, dz, dXs, dZs)
            ap = min(1.0, settings.step_fraction * ap)
            ad = min(1.0, settings.step_fraction * ad)

            x = x + ap * dx
            z = z + ad * dz
            Xs = [X + ap * dX for X, dX in zip(Xs, dXs)]
            Zs = [Z + ad * dZ for Z, dZ in zip(Zs, dZs)]
            y = y + ad * dy

            stall = stall + 1 if max(ap, ad) < 1e-8 else 0
            if stall >= 5:
                reason = "stalled"
                break

        if status is SolverStatus.NUMERICAL_FAILURE and reason in (
            "max_iterations", "stalled", "schur_factorization"
        ):
            if relp <= settings.accept_tolerance and reld <= np.sqrt(settings.accept_tolerance):
                status = SolverStatus.FEASIBLE

        x_full = np.zeros(problem.n_columns)
        x_full[:nf] = x[:nf] - x[nf: 2 * nf]
        x_full[nf: nf + nn] = x[2 * nf:]
        for off, n, X in zip(problem.block_offsets(), problem.psd_dims, Xs):
            x_full[off: off + svec_length(n)] = svec(X)
        y_full = np.zeros(problem.n_rows)
        y_full[keep] = y
        stats = {
            "iterations": iteration + 1,
            "primal_residual": float(relp),
            "dual_residual": float(reld),
            "gap": float(gap),
            "reason": reason,
            "seconds": round(time.perf_counter() - start, 6),
        }
        logger.info(
            "solver=interior_point status=%s reason=%s iterations=%d relp=%.2e reld=%.2e",
            status.value, reason, stats["iterations"], relp, reld,
        )
        return ConicSolution(
            status=status,
            x=x_full,
            y=y_full,
            objective=float(problem.c @ x_full),
            psd_blocks=[0.5 * (X + X.T) for X in Xs],
            stats=stats,
        )

    @staticmethod
    def _schur_block(blk: _BlockData, X: np.ndarray, Zinv: np.ndarray, m: int) -> np.ndarray:
        """M[k, i] = trace(A_k X A_i Z^-1) for one PSD block."""
        M = np.zeros((m, m))
        active = [i for i, (p, _, _) in enumerate(blk.entries) if p.size]
        chunk = 64
        for start in range(0, len(active), chunk):
            rows = active[start: start + chunk]
            H = np.empty((blk.n * blk.n, len(rows)))
            for col, i in enumerate(rows):
                p, q, v = blk.entries[i]
                H[:, col] = ((X[:, p] * v) @ Zinv[q, :]).ravel()
            M[:, rows] = blk.avec @ H
        return M

    @staticmethod
    def _factor(M: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        try:
            cho = sla.cho_factor(M, lower=True, check_finite=True)
            return lambda rhs: sla.cho_solve(cho, rhs)
        except np.linalg.LinAlgError:
            logger.debug("schur complement not positive definite; using least squares")
            return lambda rhs: np.linalg.lstsq(M, rhs, rcond=None)[0]

    @staticmethod
    def _failure(problem: SdpProblem, status: SolverStatus, reason: str, start: float) -> ConicSolution:
        return ConicSolution(
            status=status,
            x=np.zeros(problem.n_columns),
            y=np.zeros(problem.n_rows),
            objective=float("nan"),
            stats={"iterations": 0, "reason": reason,
                   "seconds": round(time.perf_counter() - start, 6)},
        )


# -- cvxpy backend (optional) ---------------------------------------------


class CvxpyBackend:
    """Hands the same standard-form data to cvxpy and its default SDP solver."""

    name = "cvxpy"

    def solve(self, problem: SdpProblem, settings: SolverSettings) -> ConicSolution:
        import cvxpy as cp

        start = time.perf_counter()
        nf, nn = problem.n_free, problem.n_nonneg
        parts = []
        constraints = []
        if nf:
            parts.append(cp.Variable(nf))
        if nn:
            nonneg = cp.Variable(nn)
            constraints.append(nonneg >= 0)
            parts.append(nonneg)
        mats = []
        for n in problem.psd_dims:
            X = cp.Variable((n, n), symmetric=True)
            constraints.append(X >> 0)
            mats.append(X)
            rows, cols = np.tril_indices(n)
            order = np.lexsort((rows, cols))
            rows, cols = rows[order], cols[order]
            scale = np.where(rows == cols, 1.0, SQRT2)
            parts.append(cp.multiply(scale, X[rows, cols]))
        xvar = cp.hstack(parts) if len(parts) > 1 else parts[0]
        eq = problem.A @ xvar == problem.b
        constraints.append(eq)
        prob = cp.Problem(cp.Minimize(problem.c @ xvar), constraints)
        try:
            prob.solve()
        except cp.error.SolverError as exc:
            logger.warning("solver=cvxpy error=%s", exc)
            return InteriorPointBackend._failure(
                problem, SolverStatus.NUMERICAL_FAILURE, "solver_error", start
            )
        mapping = {
            cp.OPTIMAL: SolverStatus.OPTIMAL,
            cp.OPTIMAL_INACCURATE: SolverStatus.FEASIBLE,
            cp.INFEASIBLE: SolverStatus.INFEASIBLE,
            cp.INFEASIBLE_INACCURATE: SolverStatus.INFEASIBLE,
        }
        status = mapping.get(prob.status, SolverStatus.NUMERICAL_FAILURE)
        if not status.has_solution:
            return InteriorPointBackend._failure(problem, status, str(prob.status), start)
        x_full = np.asarray(xvar.value, dtype=float).ravel()
        y = eq.dual_value
        return ConicSolution(
            status=status,
            x=x_full,
            y=np.zeros(problem.n_rows) if y is None else -np.asarray(y, dtype=float).ravel(),
            objective=float(problem.c @ x_full),
            psd_blocks=[np.asarray(X.value) for X in mats],
            stats={"reason": str(prob.status),
                   "seconds": round(time.perf_counter() - start, 6)},
        )


BACKENDS = {
    InteriorPointBackend.name: InteriorPointBackend,
    CvxpyBackend.name: CvxpyBackend,
}


def get_backend(name: str):
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValueError(
            f"unknown solver backend {name!r}; available: {sorted(BACKENDS)}"
        ) from None


def solve(problem: SdpProblem, settings: Optional[SolverSettings] = None) -> ConicSolution:
    settings = settings or SolverSettings()
    return get_backend(settings.backend).solve(problem, settings)
