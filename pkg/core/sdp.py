"""
Standard-form semidefinite programs

    minimize    c . x
    subject to  A x = b
                x = (free block, nonnegative block, svec(X_1), ..., svec(X_k)),  X_j PSD

Symmetric matrices are stored in scaled lower-triangular (svec) form:
column by column, off-diagonal entries multiplied by sqrt(2), so that
svec(X) . svec(Y) = trace(X Y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import scipy.sparse as sp

SQRT2 = math.sqrt(2.0)


def svec_length(n: int) -> int:
    return n * (n + 1) // 2


def svec_index(i: int, j: int, n: int) -> int:
    """Position of entry (i, j) of an n x n symmetric matrix in svec order."""
    if i < j:
        i, j = j, i
    return j * n - j * (j - 1) // 2 + (i - j)


def svec(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, SQRT2)
    return matrix[rows, cols] * scale


def smat(vector: np.ndarray, n: int) -> np.ndarray:
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    matrix = np.zeros((n, n))
    matrix[rows, cols] = vector * scale
    matrix[cols, rows] = vector * scale
    return matrix


@dataclass
class SdpProblem:
    """Compiled conic program; immutable by convention once built."""

    n_free: int
    n_nonneg: int
    psd_dims: Tuple[int, ...]
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    row_labels: List[str] = field(default_factory=list)
    block_labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.psd_dims = tuple(int(n) for n in self.psd_dims)
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.A.shape != (self.b.size, self.n_columns):
            raise ValueError(
                f"constraint matrix shape {self.A.shape} does not match "
                f"{self.b.size} rows x {self.n_columns} columns"
            )
        if self.c.size != self.n_columns:
            raise ValueError("objective length does not match the variable count")

    @property
    def n_columns(self) -> int:
        return self.n_free + self.n_nonneg + sum(svec_length(n) for n in self.psd_dims)

    @property
    def n_rows(self) -> int:
        return self.b.size

    def block_offsets(self) -> List[int]:
        offset = self.n_free + self.n_nonneg
        offsets = []
        for n in self.psd_dims:
            offsets.append(offset)
            offset += svec_length(n)
        return offsets

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
        """Split a column vector into free part, nonnegative part and PSD matrices."""
        free = x[: self.n_free]
        nonneg = x[self.n_free: self.n_free + self.n_nonneg]
        blocks = [
            smat(x[off: off + svec_length(n)], n)
            for off, n in zip(self.block_offsets(), self.psd_dims)
        ]
        return free, nonneg, blocks

    def same_data(self, other: "SdpProblem") -> bool:
        return (
            self.n_free == other.n_free
            and self.n_nonneg == other.n_nonneg
            and self.psd_dims == other.psd_dims
            and (self.A != other.A).nnz == 0
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    # -- sparse-triplet text format --------------------------------------

    def to_text(self) -> str:
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [
            f"free {self.n_free}",
            f"nonneg {self.n_nonneg}",
            "psd " + " ".join(str(n) for n in self.psd_dims),
            f"rows {self.n_rows}",
            f"triplets {coo.nnz}",
        ]
        for k in order:
            lines.append(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}")
        lines.append("rhs")
        lines.extend(repr(float(v)) for v in self.b)
        lines.append("objective")
        lines.extend(f"{i} {float(v)!r}" for i, v in enumerate(self.c) if v != 0.0)
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SdpProblem":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        it = iter(lines)

        def header(key: str) -> List[str]:
            parts = next(it).split()
            if not parts or parts[0] != key:
                raise ValueError(f"expected {key!r} section in problem text")
            return parts[1:]

        n_free = int(header("free")[0])
        n_nonneg = int(header("nonneg")[0])
        psd_dims = tuple(int(v) for v in header("psd"))
        n_rows = int(header("rows")[0])
        nnz = int(header("triplets")[0])
        rows, cols, vals = [], [], []
        for _ in range(nnz):
            r, c, v = next(it).split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
        header("rhs")
        b = np.array([float(next(it)) for _ in range(n_rows)])
        header("objective")
        n_columns = n_free + n_nonneg + sum(svec_length(n) for n in psd_dims)
        c = np.zeros(n_columns)
        for line in it:
            if line == "end":
                break
            i, v = line.split()
            c[int(i)] = float(v)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_columns))
        return cls(n_free, n_nonneg, psd_dims, A, b, c)


def write_problem(problem: SdpProblem, path: Union[str, Path]) -> None:
    Path(path).write_text(problem.to_text())


def read_problem(path: Union[str, Path]) -> SdpProblem:
    return SdpProblem.from_text(Path(path).read_text())

