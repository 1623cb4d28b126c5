"""Normalized Laplacians of precision matrices, vectorization and stacking.

With ``D = diag(Theta)`` the Laplacian ``D^-1/2 (D - Theta) D^-1/2`` has a zero
diagonal and off-diagonal entries equal to the partial correlations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class LaplacianSequence:
    matrices: np.ndarray
    subject_id: str = ""
    acquisition: str = ""
    task_labels: tuple[str, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ValueError(f"expected an (n, p, p) stack, got shape {m.shape}")
        object.__setattr__(self, "matrices", m)
        labels = tuple(self.task_labels) or ("",) * m.shape[0]
        if len(labels) != m.shape[0]:
            raise ValueError("task_labels length differs from the number of matrices")
        object.__setattr__(self, "task_labels", labels)

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    @property
    def p(self) -> int:
        return self.matrices.shape[1]

    def vectorized(self) -> np.ndarray:
        """``(n, p(p-1)/2)`` matrix of upper-triangle entries."""
        j, k = np.triu_indices(self.p, 1)
        return self.matrices[:, j, k]


@dataclass(frozen=True)
class RowMeta:
    subject_id: str
    acquisition: str
    time: int
    task: str


@dataclass(frozen=True, eq=False)
class StackedLaplacians:
    """All sessions' vectorized Laplacians stacked row-wise, with row metadata."""

    matrix: np.ndarray
    row_meta: tuple[RowMeta, ...]
    node_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "row_meta", tuple(self.row_meta))
        object.__setattr__(self, "node_labels", tuple(self.node_labels))
        p = len(self.node_labels)
        if self.matrix.shape != (len(self.row_meta), p * (p - 1) // 2):
            raise ValueError(f"matrix shape {self.matrix.shape} inconsistent with "
                             f"{len(self.row_meta)} rows and p={p}")

    @property
    def p(self) -> int:
        return len(self.node_labels)

    @property
    def edge_index(self) -> list[tuple[int, int]]:
        return edge_index(self.p)

    @property
    def edge_names(self) -> list[str]:
        return edge_names(self.node_labels)

    def session_keys(self) -> list[tuple[str, str]]:
        seen: dict[tuple[str, str], None] = {}
        for m in self.row_meta:
            seen.setdefault((m.subject_id, m.acquisition), None)
        return list(seen)

    def session_rows(self, subject_id: str, acquisition: str) -> np.ndarray:
        """Row indices of one session, in time order."""
        return np.array([r for r, m in enumerate(self.row_meta)
                         if m.subject_id == subject_id and m.acquisition == acquisition], dtype=int)

    def session(self, subject_id: str, acquisition: str) -> tuple[np.ndarray, list[str]]:
        rows = self.session_rows(subject_id, acquisition)
        return self.matrix[rows], [self.row_meta[r].task for r in rows]


def edge_index(p: int) -> list[tuple[int, int]]:
    """Column order of vectorized Laplacians: node pairs ``(j, k)``, ``j < k``, lexicographic."""
    j, k = np.triu_indices(p, 1)
    return list(zip(j.tolist(), k.tolist()))


def edge_names(node_labels: Sequence[str]) -> list[str]:
    return [f"{node_labels[j]}--{node_labels[k]}" for j, k in edge_index(len(node_labels))]


def laplacian(theta, marginal: bool = False) -> np.ndarray:
    """Normalized Laplacian of a precision matrix (or a stack of them).

    ``marginal=True`` scales by the marginal variances ``diag(inv(Theta))``
    instead of the precision diagonal; kept only for sensitivity checks.
    """
    theta = np.asarray(theta, dtype=float)
    if marginal:
        d = np.diagonal(np.linalg.inv(theta), axis1=-2, axis2=-1)
    else:
        d = np.diagonal(theta, axis1=-2, axis2=-1)
    if np.any(d <= 0):
        raise ValueError("nonpositive diagonal entry; cannot normalize")
    s = 1.0 / np.sqrt(d)
    D = np.zeros_like(theta)
    idx = np.arange(theta.shape[-1])
    D[..., idx, idx] = d
    L = s[..., :, None] * (D - theta) * s[..., None, :]
    L = 0.5 * (L + np.swapaxes(L, -1, -2))
    if not marginal:
        L[..., idx, idx] = 0.0
    return L


def laplacian_sequence(prec, subject_id: str = "", acquisition: str = "",
                       task_labels: Sequence[str] = (), marginal: bool = False) -> LaplacianSequence:
    matrices = prec.matrices if hasattr(prec, "matrices") else prec
    return LaplacianSequence(laplacian(matrices, marginal=marginal), subject_id, acquisition,
                             tuple(task_labels))


def vectorize_upper(L) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    j, k = np.triu_indices(L.shape[-1], 1)
    return L[..., j, k]


def devectorize_upper(v, p: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize_upper` for symmetric, zero-diagonal matrices."""
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    if p is None:
        p = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if p * (p - 1) // 2 != m:
        raise ValueError(f"length {m} is not a triangular number p(p-1)/2")
    out = np.zeros(v.shape[:-1] + (p, p))
    j, k = np.triu_indices(p, 1)
    out[..., j, k] = v
    out[..., k, j] = v
    return out


def stack_population(sequences: Sequence[LaplacianSequence],
                     node_labels: Sequence[str] | None = None) -> StackedLaplacians:
    """Stack sessions in the given order, time-ascending within each session."""
    if not sequences:
        raise ValueError("no sequences to stack")
    p = sequences[0].p
    for seq in sequences:
        if seq.p != p:
            raise ValueError(f"mismatched p: {seq.p} vs {p}")
    if node_labels is None:
        node_labels = [f"N{j + 1}" for j in range(p)]
    if len(node_labels) != p:
        raise ValueError("node_labels length differs from p")
    rows = np.vstack([seq.vectorized() for seq in sequences])
    meta = [RowMeta(seq.subject_id, seq.acquisition, t + 1, seq.task_labels[t])
            for seq in sequences for t in range(seq.n)]
    return StackedLaplacians(rows, tuple(meta), tuple(node_labels))


def save_stacked(stacked: StackedLaplacians, matrix_path, meta_path):
    with open(matrix_path, "w") as fh:
        fh.write("\t".join(stacked.edge_names) + "\n")
        for row in stacked.matrix:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(meta_path, "w") as fh:
        fh.write("subject\tacquisition\ttime\ttask\n")
        for m in stacked.row_meta:
            fh.write(f"{m.subject_id}\t{m.acquisition}\t{m.time}\t{m.task}\n")


def load_stacked(matrix_path, meta_path) -> StackedLaplacians:
    with open(matrix_path) as fh:
        names = fh.readline().rstrip("\n").split("\t")
        rows = [[float(v) for v in line.rstrip("\n").split("\t")] for line in fh if line.strip()]
    nodes: dict[str, None] = {}
    for name in names:
        a, b = name.split("--")
        nodes.setdefault(a, None)
        nodes.setdefault(b, None)
    with open(meta_path) as fh:
        fh.readline()
        meta = []
        for line in fh:
            if line.strip():
                s, a, t, task = line.rstrip("\n").split("\t")
                meta.append(RowMeta(s, a, int(t), task))
    p = len(nodes)
    return StackedLaplacians(np.array(rows).reshape(len(rows), p * (p - 1) // 2), tuple(meta),
                             tuple(nodes))
