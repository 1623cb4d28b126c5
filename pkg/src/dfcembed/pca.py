"""Unsupervised embedding: principal components of stacked vectorized Laplacians."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dfcembed.laplacian import StackedLaplacians, edge_index


@dataclass(frozen=True)
class Edge:
    node_j: str
    node_k: str
    j: int
    k: int
    weight: float
    rank: int


@dataclass(frozen=True, eq=False)
class PcaModel:
    components: np.ndarray          # (k, m), orthonormal rows
    eigenvalues: np.ndarray         # (k,), nonincreasing
    column_means: np.ndarray        # (m,), zeros when uncentered
    total_variance: float
    node_labels: tuple[str, ...]
    centered: bool = True

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros(self.k)
        return self.eigenvalues / self.total_variance

    @property
    def edge_index(self) -> list[tuple[int, int]]:
        return edge_index(len(self.node_labels))


def _fix_signs(components: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(idx)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(stacked, k: int = 2, center: bool = True,
            node_labels: Sequence[str] | None = None) -> PcaModel:
    """Leading ``k`` eigenvectors of the (column-centered) edge covariance.

    The eigenproblem is solved on whichever Gram form is smaller. The covariance
    divisor is ``rows - 1``.
    """
    if isinstance(stacked, StackedLaplacians):
        X, node_labels = stacked.matrix, stacked.node_labels
    else:
        X = np.asarray(stacked, dtype=float)
        if node_labels is None:
            p = int(round((1 + math.sqrt(1 + 8 * X.shape[1])) / 2))
            node_labels = [f"N{j + 1}" for j in range(p)]
    rows, m = X.shape
    if not 1 <= k <= min(rows, m):
        raise ValueError(f"k={k} out of range [1, {min(rows, m)}]")

    means = X.mean(axis=0) if center else np.zeros(m)
    Xc = X - means
    denom = max(rows - 1, 1)
    total = float(np.sum(Xc * Xc) / denom)

    comps = None
    if rows < m:
        evals, evecs = np.linalg.eigh(Xc @ Xc.T / denom)
        evals, evecs = evals[::-1][:k], evecs[:, ::-1][:, :k]
        if np.all(evals > 1e-12 * max(total, 1e-300)):
            comps = (Xc.T @ evecs / np.sqrt(evals * denom)).T
    if comps is None:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc / denom)
        evals, comps = evals[::-1][:k], evecs[:, ::-1][:, :k].T
    evals = np.maximum(evals, 0.0)
    return PcaModel(components=_fix_signs(np.ascontiguousarray(comps)), eigenvalues=evals,
                    column_means=means, total_variance=total,
                    node_labels=tuple(node_labels), centered=center)


def project_pca(model: PcaModel, rows) -> np.ndarray:
    """``k x n`` embedding of a session's vectorized Laplacians."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.components.shape[1]:
        raise ValueError(f"expected {model.components.shape[1]} edge columns, got {rows.shape[1]}")
    return model.components @ (rows - model.column_means).T


def mean_trajectory(model, stacked: StackedLaplacians, acquisition: str | None = None,
                    project=None) -> np.ndarray:
    """Pointwise average of per-session trajectories, optionally for one acquisition."""
    project = project or project_pca
    trajs = []
    for subject_id, acq in stacked.session_keys():
        if acquisition is not None and acq != acquisition:
            continue
        rows, _ = stacked.session(subject_id, acq)
        trajs.append(np.atleast_2d(project(model, rows)))
    if not trajs:
        raise ValueError(f"no sessions for acquisition {acquisition!r}")
    lengths = {t.shape[1] for t in trajs}
    if len(lengths) > 1:
        raise ValueError(f"sessions have unequal lengths {sorted(lengths)}")
    return np.mean(trajs, axis=0)


def n_retained(n_edges: int, retain_fraction: float) -> int:
    if not 0 < retain_fraction <= 1:
        raise ValueError("retain_fraction must be in (0, 1]")
    # guard against products like 0.07 * 100 = 7.000000000000001
    return min(n_edges, math.ceil(retain_fraction * n_edges - 1e-9))


def ranked_edges(weights: np.ndarray, node_labels: Sequence[str], count: int | None = None,
                 columns: Sequence[int] | None = None) -> list[Edge]:
    """Edges sorted by ``|weight|`` descending, ties in edge order."""
    pairs = edge_index(len(node_labels))
    columns = list(range(len(weights))) if columns is None else list(columns)
    order = sorted(range(len(weights)), key=lambda i: (-abs(weights[i]), columns[i]))
    if count is not None:
        order = order[:count]
    out = []
    for rank, i in enumerate(order, start=1):
        j, k = pairs[columns[i]]
        out.append(Edge(node_labels[j], node_labels[k], j, k, float(weights[i]), rank))
    return out


def component_network(model: PcaModel, component: int, retain_fraction: float = 0.02) -> list[Edge]:
    """The ``ceil(retain_fraction * n_edges)`` largest-magnitude loadings of one component."""
    if not 0 <= component < model.k:
        raise IndexError(f"component {component} out of range for k={model.k}")
    w = model.components[component]
    return ranked_edges(w, model.node_labels, n_retained(len(w), retain_fraction))


def write_trajectory(path, labels: Sequence[str], traj, prefix: str = "comp"):
    traj = np.atleast_2d(traj)
    with open(path, "w") as fh:
        fh.write("time\ttask_label\t" + "\t".join(f"{prefix}_{c + 1}" for c in range(traj.shape[0]))
                 + "\n")
        for t in range(traj.shape[1]):
            fh.write(f"{t + 1}\t{labels[t]}\t" + "\t".join(repr(float(v)) for v in traj[:, t]) + "\n")


def write_network(path, edges: Sequence[Edge]):
    with open(path, "w") as fh:
        fh.write("node_j\tnode_k\tweight\trank\n")
        for e in edges:
            fh.write(f"{e.node_j}\t{e.node_k}\t{float(e.weight)!r}\t{e.rank}\n")


def save_pca_model(model: PcaModel, path):
    names = [f"{model.node_labels[j]}--{model.node_labels[k]}" for j, k in model.edge_index]
    with open(path, "w") as fh:
        fh.write(f"# centered={int(model.centered)}\ttotal_variance={float(model.total_variance)!r}\n")
        fh.write("row\teigenvalue\t" + "\t".join(names) + "\n")
        fh.write("mean\tnan\t" + "\t".join(repr(float(v)) for v in model.column_means) + "\n")
        for c in range(model.k):
            fh.write(f"comp_{c + 1}\t{float(model.eigenvalues[c])!r}\t"
                     + "\t".join(repr(float(v)) for v in model.components[c]) + "\n")


def load_pca_model(path) -> PcaModel:
    with open(path) as fh:
        meta = dict(item.split("=") for item in fh.readline()[1:].strip().split("\t"))
        names = fh.readline().rstrip("\n").split("\t")[2:]
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    nodes: dict[str, None] = {}
    for name in names:
        a, b = name.split("--")
        nodes.setdefault(a, None)
        nodes.setdefault(b, None)
    means = np.array([float(v) for v in rows[0][2:]])
    comps = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    evals = np.array([float(r[1]) for r in rows[1:]])
    return PcaModel(comps, evals, means, float(meta["total_variance"]), tuple(nodes),
                    bool(int(meta["centered"])))
