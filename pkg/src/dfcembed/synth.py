"""Synthetic piecewise-stationary networks, time series and recovery scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dfcembed.ingest import Population, SubjectSession
from dfcembed.single import SUPPORT_TOL


@dataclass(frozen=True, eq=False)
class GroundTruth:
    precisions: np.ndarray                       # (n, p, p)
    change_points: tuple[int, ...]               # first index of each new segment
    true_edges: tuple[frozenset, ...]            # support per segment
    labels: tuple[str, ...]                      # per time point
    discriminative_edges: frozenset = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return self.precisions.shape[0]

    @property
    def p(self) -> int:
        return self.precisions.shape[1]


def _upper_pairs(p):
    j, k = np.triu_indices(p, 1)
    return list(zip(j.tolist(), k.tolist()))


def _random_values(rng, size, low=0.2, high=0.5):
    return rng.uniform(low, high, size) * rng.choice([-1.0, 1.0], size)


def _dominant_diagonal(theta: np.ndarray, margin: float = 0.5) -> np.ndarray:
    off = np.abs(theta).sum(axis=1) - np.abs(np.diag(theta))
    theta = theta.copy()
    np.fill_diagonal(theta, off + margin)
    return theta


def _support(theta) -> frozenset:
    return frozenset((j, k) for j, k in _upper_pairs(theta.shape[0])
                     if abs(theta[j, k]) > SUPPORT_TOL)


def generate_piecewise_network(p: int, segment_lengths: Sequence[int],
                               edges_per_segment, seed=None) -> GroundTruth:
    """Piecewise-constant sparse SPD precision sequence.

    Each segment gets a fresh random support of the requested size with
    off-diagonal values drawn from +-[0.2, 0.5]; diagonals are set by diagonal
    dominance (absolute row sum + 0.5).
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    lengths = [int(x) for x in segment_lengths]
    if not lengths or any(x < 1 for x in lengths):
        raise ValueError("segment lengths must be positive")
    n_edges = ([int(edges_per_segment)] * len(lengths) if np.isscalar(edges_per_segment)
               else [int(x) for x in edges_per_segment])
    if len(n_edges) != len(lengths):
        raise ValueError("edges_per_segment must be scalar or one per segment")
    pairs = _upper_pairs(p)
    if any(e < 0 or e > len(pairs) for e in n_edges):
        raise ValueError(f"edges per segment must lie in [0, {len(pairs)}]")

    rng = np.random.default_rng(seed)
    blocks, supports, labels, starts = [], [], [], []
    t = 0
    for s, (length, ne) in enumerate(zip(lengths, n_edges)):
        theta = np.zeros((p, p))
        chosen = rng.choice(len(pairs), size=ne, replace=False) if ne else []
        vals = _random_values(rng, ne)
        for idx, v in zip(chosen, vals):
            j, k = pairs[idx]
            theta[j, k] = theta[k, j] = v
        theta = _dominant_diagonal(theta)
        blocks.append(np.broadcast_to(theta, (length, p, p)))
        supports.append(_support(theta))
        labels += [f"segment_{s + 1}"] * length
        if s:
            starts.append(t)
        t += length
    return GroundTruth(np.concatenate(blocks).copy(), tuple(starts), tuple(supports), tuple(labels))


def sample_timeseries(truth: GroundTruth, seed=None, subject_id: str = "sim01",
                      acquisition: str = "LR", node_labels: Sequence[str] | None = None,
                      sampling_interval: float = 0.72) -> SubjectSession:
    """Independent rows ``x_i ~ N(0, inv(Theta_i))``."""
    rng = np.random.default_rng(seed)
    n, p = truth.n, truth.p
    z = rng.standard_normal((n, p))
    X = np.empty((n, p))
    cache: dict[bytes, np.ndarray] = {}
    for i in range(n):
        key = truth.precisions[i].tobytes()
        if key not in cache:
            cache[key] = np.linalg.cholesky(np.linalg.inv(truth.precisions[i]))
        X[i] = cache[key] @ z[i]
    if node_labels is None:
        node_labels = [f"N{j + 1:02d}" for j in range(p)]
    return SubjectSession(subject_id, acquisition, X, tuple(node_labels), truth.labels,
                          sampling_interval)


def block_design(n: int, block_length: int, labels: Sequence[str], start: int = 0) -> list[str]:
    """Labels cycling through ``labels`` in blocks, beginning with ``labels[start]``."""
    return [labels[(start + t // block_length) % len(labels)] for t in range(n)]


def generate_two_task_population(S: int, n: int, p: int, n_discriminative: int, seed=None,
                                 *, block_length: int | None = None,
                                 task_labels: tuple[str, str] = ("0-back", "2-back"),
                                 acquisitions: Sequence[str] = ("LR", "RL"),
                                 n_base_edges: int | None = None, n_subject_edges: int = 1,
                                 effect: float = 0.6, sampling_interval: float = 0.72):
    """Two-condition block-design population.

    Every session shares a base network; the ``n_discriminative`` designated
    edges (node-disjoint when ``p`` allows) take value ``+effect`` under
    ``task_labels[0]`` and ``-effect`` under ``task_labels[1]``. Each subject adds
    ``n_subject_edges`` random edges of its own and jitters the base values.
    Diagonals are fixed per subject, so only the designated edges differ between
    conditions. Blocks default to ``n // 3`` time points, ``n_base_edges`` to
    ``p // 2``. Acquisitions alternate which task opens the run.

    Returns ``(population, truths)`` with ``truths[(subject_id, acquisition)]``.
    """
    pairs = _upper_pairs(p)
    if S < 1 or n < 2 or p < 2:
        raise ValueError("need S >= 1, n >= 2, p >= 2")
    if not 0 <= n_discriminative <= len(pairs):
        raise ValueError(f"n_discriminative must lie in [0, {len(pairs)}]")
    n_base = p // 2 if n_base_edges is None else n_base_edges
    if n_discriminative + n_base + n_subject_edges > len(pairs):
        raise ValueError("too many edges requested for p")
    block_length = block_length or max(1, n // 3)

    rng = np.random.default_rng(seed)
    order = [pairs[i] for i in rng.permutation(len(pairs))]
    # node-disjoint designated edges where possible, so no node carries two effects
    disc, used = [], set()
    for j, k in order:
        if len(disc) < n_discriminative and j not in used and k not in used:
            disc.append((j, k))
            used.update((j, k))
    disc += [e for e in order if e not in disc][: n_discriminative - len(disc)]
    rest = [e for e in order if e not in disc]
    base = rest[:n_base]
    base_vals = _random_values(rng, n_base)
    free = rest[n_base:]
    node_labels = tuple(f"N{j + 1:02d}" for j in range(p))

    sessions, truths = [], {}
    for s in range(S):
        sid = f"sub{s + 1:03d}"
        common = np.zeros((p, p))
        for (j, k), v in zip(base, base_vals + rng.normal(0.0, 0.05, n_base)):
            common[j, k] = common[k, j] = v
        own = rng.choice(len(free), size=n_subject_edges, replace=False) if n_subject_edges else []
        for idx, v in zip(own, _random_values(rng, n_subject_edges)):
            j, k = free[idx]
            common[j, k] = common[k, j] = v
        conds = []
        for sign in (1.0, -1.0):
            theta = common.copy()
            for j, k in disc:
                theta[j, k] = theta[k, j] = sign * effect
            conds.append(theta)
        # same diagonal in both conditions
        diag = np.max([np.abs(c).sum(axis=1) for c in conds], axis=0) + 0.5
        for c in conds:
            np.fill_diagonal(c, diag)
        cond_of = dict(zip(task_labels, conds))

        for a, acq in enumerate(acquisitions):
            labels = block_design(n, block_length, task_labels, start=a)
            prec = np.array([cond_of[lab] for lab in labels])
            starts = tuple(i for i in range(1, n) if labels[i] != labels[i - 1])
            truth = GroundTruth(prec, starts, tuple(_support(c) for c in conds), tuple(labels),
                                frozenset(disc))
            session = sample_timeseries(truth, rng.integers(2**32), sid, acq, node_labels,
                                        sampling_interval)
            sessions.append(session)
            truths[(sid, acq)] = truth
    return Population(tuple(sessions)), truths


def _prf(est: set, true: set):
    tp = len(est & true)
    precision = tp / len(est) if est else 1.0
    recall = tp / len(true) if true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def change_points(matrices: np.ndarray, tol: float = SUPPORT_TOL) -> list[int]:
    """Indices ``i >= 1`` where ``Theta_i`` differs from ``Theta_{i-1}`` beyond ``tol``."""
    m = np.asarray(matrices)
    if m.shape[0] < 2:
        return []
    jumps = np.abs(np.diff(m, axis=0)).reshape(m.shape[0] - 1, -1).max(axis=1)
    return (np.flatnonzero(jumps > tol) + 1).tolist()


def truth_from_sequence(matrices) -> GroundTruth:
    """Rebuild a :class:`GroundTruth` from a stored piecewise-constant precision stack."""
    m = np.asarray(matrices, dtype=float)
    starts = tuple(change_points(m))
    return GroundTruth(m, starts, tuple(_support(m[i]) for i in (0,) + starts),
                       ("",) * m.shape[0])


def score_recovery(estimated, truth: GroundTruth) -> dict:
    """Per-time support precision/recall/F1 and change-point agreement."""
    est = estimated.matrices if hasattr(estimated, "matrices") else np.asarray(estimated)
    if est.shape != truth.precisions.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.precisions.shape}")
    precision, recall, f1 = [], [], []
    for i in range(truth.n):
        pr = _prf(set(_support(est[i])), set(_support(truth.precisions[i])))
        precision.append(pr[0])
        recall.append(pr[1])
        f1.append(pr[2])
    cp_est = change_points(est)
    cp_true = change_points(truth.precisions)
    if cp_est and cp_true:
        dist = float(np.mean([min(abs(c - t) for t in cp_true) for c in cp_est]))
    elif not cp_est and not cp_true:
        dist = 0.0
    else:
        dist = float("nan")
    return {
        "precision": np.array(precision), "recall": np.array(recall), "f1": np.array(f1),
        "mean_precision": float(np.mean(precision)), "mean_recall": float(np.mean(recall)),
        "mean_f1": float(np.mean(f1)),
        "n_change_points": len(cp_est), "n_true_change_points": len(cp_true),
        "change_point_error": len(cp_est) - len(cp_true),
        "change_points": cp_est, "change_point_distance": dist,
    }
