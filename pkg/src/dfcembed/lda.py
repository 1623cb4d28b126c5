"""Supervised embedding: sparse per-subject screening, stability selection, pooled LDA.

Each subject's contrast-labeled rows are fit with a two-class sparse discriminant
(optimal scoring with an l1 + small ridge penalty, solved by coordinate descent,
penalty chosen by stratified cross-validation). Edges selected by at least a
fraction ``tau`` of subjects are kept, and a shrinkage LDA on the pooled rows of
those edges gives the discriminative projection.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np
from sklearn.model_selection import StratifiedKFold

from dfcembed.laplacian import StackedLaplacians, edge_index, edge_names
from dfcembed.pca import Edge, mean_trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastSpec:
    positive_label: str
    negative_label: str

    def __post_init__(self):
        if self.positive_label == self.negative_label:
            raise ValueError("contrast labels must differ")

    def mask(self, labels: Sequence[str]) -> np.ndarray:
        labels = np.asarray(labels, dtype=object)
        return (labels == self.positive_label) | (labels == self.negative_label)

    def indicator(self, labels: Sequence[str]) -> np.ndarray:
        """+1 for positive, -1 for negative, 0 elsewhere."""
        labels = np.asarray(labels, dtype=object)
        return (labels == self.positive_label).astype(float) - (labels == self.negative_label)

    def swapped(self) -> "ContrastSpec":
        return ContrastSpec(self.negative_label, self.positive_label)


@dataclass(frozen=True, eq=False)
class ScreenResult:
    selection_frequency: np.ndarray
    selected_edges: tuple[int, ...]
    tau: float

    @property
    def p_prime(self) -> int:
        return len(self.selected_edges)


@dataclass(frozen=True, eq=False)
class LdaModel:
    weights: np.ndarray              # unit norm, raw edge units
    intercept: float
    selected_edges: tuple[int, ...]
    shrinkage: float
    contrast: ContrastSpec
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    node_labels: tuple[str, ...] = ()

    @property
    def p_prime(self) -> int:
        return len(self.selected_edges)


# ---------------------------------------------------------------------------
# elastic-net coordinate descent
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _enet_objective(X, y, beta, lam, ridge):
    r = y - X @ beta
    return 0.5 * (r @ r) / X.shape[0] + lam * np.abs(beta).sum() + 0.5 * ridge * (beta @ beta)


@numba.njit(cache=True)
def _enet_cd(X, y, lam, ridge, beta, tol, max_sweeps, history):
    """Cyclic coordinate descent on ``1/(2n)||y - Xb||^2 + lam|b|_1 + ridge/2 |b|^2``.

    Updates ``beta`` in place; returns the number of sweeps. ``history`` (if
    nonempty) receives the objective after each sweep.
    """
    n, m = X.shape
    col_sq = np.empty(m)
    for j in range(m):
        col_sq[j] = (X[:, j] @ X[:, j]) / n
    r = y - X @ beta
    sweep = 0
    while sweep < max_sweeps:
        max_change = 0.0
        for j in range(m):
            if col_sq[j] == 0.0:
                beta[j] = 0.0
                continue
            old = beta[j]
            rho = (X[:, j] @ r) / n + col_sq[j] * old
            if rho > lam:
                new = (rho - lam) / (col_sq[j] + ridge)
            elif rho < -lam:
                new = (rho + lam) / (col_sq[j] + ridge)
            else:
                new = 0.0
            if new != old:
                r -= X[:, j] * (new - old)
                beta[j] = new
                change = abs(new - old)
                if change > max_change:
                    max_change = change
        if sweep < history.shape[0]:
            history[sweep] = _enet_objective(X, y, beta, lam, ridge)
        sweep += 1
        if max_change < tol:
            break
    return sweep


def elastic_net(X, y, lam: float, ridge: float = 2.0, beta0=None, tol: float = 1e-6,
                max_sweeps: int = 10000, return_history: bool = False):
    X = np.asfortranarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    history = np.full(max_sweeps if return_history else 0, np.nan)
    sweeps = _enet_cd(X, y, float(lam), float(ridge), beta, tol, max_sweeps, history)
    if return_history:
        return beta, history[:sweeps]
    return beta


def _standardize_columns(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd_safe = np.where(sd > 1e-12, sd, 1.0)
    Z = (X - mean) / sd_safe
    Z[:, sd <= 1e-12] = 0.0
    return Z, mean, sd_safe


def optimal_scores(is_pos: np.ndarray) -> np.ndarray:
    """Centered, unit-variance two-class scores (positive class gets the positive value)."""
    n1 = is_pos.sum()
    n0 = is_pos.size - n1
    return np.where(is_pos, np.sqrt(n0 / n1), -np.sqrt(n1 / n0))


def lambda_max(X, is_pos) -> float:
    """Smallest penalty at which the standardized sparse-discriminant fit is all zero."""
    Z, _, _ = _standardize_columns(np.asarray(X, dtype=float))
    return float(np.max(np.abs(Z.T @ optimal_scores(np.asarray(is_pos, bool)))) / Z.shape[0])


def _fit_path(Z, score, grid, ridge, tol):
    """Coefficients along a decreasing penalty grid (warm-started)."""
    beta = np.zeros(Z.shape[1])
    path = []
    for lam in grid:
        beta = elastic_net(Z, score, lam, ridge, beta0=beta, tol=tol)
        path.append(beta.copy())
    return path


def _midpoint_accuracy(beta, Ztr, ytr, Zte, yte):
    if not np.any(beta):
        # null model: predict the training majority class
        return float(np.mean(yte == (ytr.mean() >= 0.5)))
    ptr = Ztr @ beta
    m1, m0 = ptr[ytr].mean(), ptr[~ytr].mean()
    pte = Zte @ beta
    pred = (pte - 0.5 * (m1 + m0)) * np.sign(m1 - m0) > 0
    return float(np.mean(pred == yte))


def sparse_lda_subject(X, labels, contrast: ContrastSpec | None = None,
                       lambda_grid: Sequence[float] | None = None, cv_folds: int = 5,
                       ridge: float = 2.0, n_lambda: int = 20, lambda_min_ratio: float = 0.01,
                       tol: float = 1e-6) -> set[int]:
    """Edges chosen by a cross-validated two-class sparse discriminant for one subject.

    ``labels`` may be task-label strings (rows outside ``contrast`` are dropped)
    or booleans marking the positive class. Without ``lambda_grid`` a geometric
    grid from ``lambda_max`` down to ``lambda_min_ratio * lambda_max`` is used.
    Ties in held-out accuracy go to the larger penalty. The ridge term keeps
    groups of equally informative, correlated edges together rather than letting
    the lasso pick one of them arbitrarily.
    """
    X = np.asarray(X, dtype=float)
    if contrast is not None:
        keep = contrast.mask(labels)
        X = X[keep]
        is_pos = np.asarray(labels, dtype=object)[keep] == contrast.positive_label
    else:
        is_pos = np.asarray(labels, dtype=bool)
    if is_pos.all() or not is_pos.any():
        raise ValueError("both contrast classes must be present")
    if cv_folds < 2:
        raise ValueError("cv_folds must be >= 2")

    Z, _, _ = _standardize_columns(X)
    score = optimal_scores(is_pos)
    if lambda_grid is None:
        lmax = float(np.max(np.abs(Z.T @ score)) / Z.shape[0])
        grid = lmax * np.geomspace(1.0, lambda_min_ratio, n_lambda)
    else:
        if not len(lambda_grid):
            raise ValueError("lambda_grid is empty")
        grid = np.array(sorted(map(float, lambda_grid), reverse=True))

    folds = min(cv_folds, int(is_pos.sum()), int((~is_pos).sum()))
    if folds < 2:
        raise ValueError("too few rows per class for cross-validation")
    acc = np.zeros(len(grid))
    # split on a label-free encoding so swapping the contrast gives the same folds
    strata = is_pos == is_pos[0]
    for tr, te in StratifiedKFold(n_splits=folds).split(Z, strata):
        Ztr, mu, sd = _standardize_columns(X[tr])
        Zte = (X[te] - mu) / sd
        path = _fit_path(Ztr, optimal_scores(is_pos[tr]), grid, ridge, tol)
        for g, beta in enumerate(path):
            acc[g] += _midpoint_accuracy(beta, Ztr, is_pos[tr], Zte, is_pos[te])
    acc /= folds
    best = int(np.flatnonzero(acc >= acc.max() - 1e-12)[0])   # grid is decreasing

    path = _fit_path(Z, score, grid, ridge, tol)
    if not any(np.any(b) for b in path):
        warnings.warn("sparse discriminant is all zero at every penalty", stacklevel=2)
        return set()
    return set(np.flatnonzero(path[best]).tolist())


def screen_subjects(stacked: StackedLaplacians, contrast: ContrastSpec,
                    acquisition: str | None = None, **kwargs) -> dict[str, set[int]]:
    """Run :func:`sparse_lda_subject` on every subject's pooled contrast rows."""
    by_subject: dict[str, list[np.ndarray]] = {}
    labels_by_subject: dict[str, list[str]] = {}
    for subject_id, acq in stacked.session_keys():
        if acquisition is not None and acq != acquisition:
            continue
        rows, labels = stacked.session(subject_id, acq)
        by_subject.setdefault(subject_id, []).append(rows)
        labels_by_subject.setdefault(subject_id, []).extend(labels)
    out = {}
    for subject_id, blocks in by_subject.items():
        out[subject_id] = sparse_lda_subject(np.vstack(blocks), labels_by_subject[subject_id],
                                             contrast, **kwargs)
        logger.debug("subject %s: %d edges selected", subject_id, len(out[subject_id]))
    return out


def stability_screen(selected_sets: Iterable[Iterable[int]], S: int | None = None,
                     tau: float = 0.6, n_edges: int | None = None) -> ScreenResult:
    """Keep edges selected by at least a fraction ``tau`` of subjects (boundary inclusive)."""
    sets = [set(s) for s in selected_sets]
    S = len(sets) if S is None else S
    if S < 1:
        raise ValueError("S must be >= 1")
    if not 0 < tau <= 1:
        raise ValueError("tau must be in (0, 1]")
    if n_edges is None:
        n_edges = max((max(s) for s in sets if s), default=-1) + 1
    counts = np.zeros(n_edges)
    for s in sets:
        for e in s:
            counts[e] += 1
    freq = counts / S
    # guard the inclusive boundary against rounding, e.g. 3/5 vs 0.6
    selected = tuple(np.flatnonzero(freq >= tau - 1e-12).tolist())
    return ScreenResult(freq, selected, float(tau))


def fit_lda(X, labels, contrast: ContrastSpec | None = None, shrinkage: float = 0.1,
            selected_edges: Sequence[int] | None = None,
            node_labels: Sequence[str] = ()) -> LdaModel:
    """Two-class shrinkage LDA on the given (already restricted) edge columns.

    ``w = ((1 - g) Sw + g diag(Sw))^-1 (mu_pos - mu_neg)``, normalized to unit
    length, with the intercept at the midpoint of the projected class means.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if contrast is not None:
        keep = contrast.mask(labels)
        X = X[keep]
        is_pos = np.asarray(labels, dtype=object)[keep] == contrast.positive_label
    else:
        is_pos = np.asarray(labels, dtype=bool)
        contrast = ContrastSpec("1", "0")
    if X.shape[1] < 1:
        raise ValueError("no selected edges to fit")
    if is_pos.all() or not is_pos.any():
        raise ValueError("both contrast classes must be present")
    if not 0 <= shrinkage <= 1:
        raise ValueError("shrinkage must be in [0, 1]")
    if selected_edges is None:
        selected_edges = range(X.shape[1])

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = (X - mean) / scale
    mu1, mu0 = Z[is_pos].mean(axis=0), Z[~is_pos].mean(axis=0)
    resid = Z - np.where(is_pos[:, None], mu1, mu0)
    Sw = resid.T @ resid / max(len(Z) - 2, 1)
    Sreg = (1 - shrinkage) * Sw + shrinkage * np.diag(np.diag(Sw))
    try:
        w = np.linalg.solve(Sreg, mu1 - mu0)
        if np.linalg.cond(Sreg) > 1e14:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise ValueError("within-class covariance is singular; use shrinkage > 0") from None

    # back to raw edge units; diagonal shrinkage commutes with column scaling
    w = w / scale
    norm = np.linalg.norm(w)
    if not norm > 0:
        raise ValueError("class means coincide; no discriminative direction")
    w = w / norm
    m1 = X[is_pos].mean(axis=0) @ w
    m0 = X[~is_pos].mean(axis=0) @ w
    return LdaModel(weights=w, intercept=float(0.5 * (m1 + m0)),
                    selected_edges=tuple(int(e) for e in selected_edges),
                    shrinkage=float(shrinkage), contrast=contrast, feature_mean=mean,
                    feature_scale=scale, node_labels=tuple(node_labels))


def fit_lda_stacked(stacked: StackedLaplacians, screen: ScreenResult, contrast: ContrastSpec,
                    acquisition: str | None = None, shrinkage: float = 0.1) -> LdaModel:
    rows, labels = [], []
    for subject_id, acq in stacked.session_keys():
        if acquisition is not None and acq != acquisition:
            continue
        r, lab = stacked.session(subject_id, acq)
        rows.append(r)
        labels.extend(lab)
    X = np.vstack(rows)[:, list(screen.selected_edges)]
    return fit_lda(X, labels, contrast, shrinkage, screen.selected_edges, stacked.node_labels)


def project_lda(model: LdaModel, rows) -> np.ndarray:
    """Signed discriminant score for every row (full edge-width rows)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if model.selected_edges and rows.shape[1] <= max(model.selected_edges):
        raise ValueError(f"rows have {rows.shape[1]} edge columns; model needs "
                         f"{max(model.selected_edges) + 1}")
    return rows[:, list(model.selected_edges)] @ model.weights - model.intercept


def evaluate_heldout(model: LdaModel, stacked: StackedLaplacians, contrast: ContrastSpec | None = None,
                     acquisition: str | None = None) -> dict:
    """Time-point accuracy, mean trajectory and its correlation with the task indicator."""
    contrast = contrast or model.contrast
    correct = total = 0
    labels0 = None
    for subject_id, acq in stacked.session_keys():
        if acquisition is not None and acq != acquisition:
            continue
        rows, labels = stacked.session(subject_id, acq)
        labels0 = labels if labels0 is None else labels0
        mask = contrast.mask(labels)
        traj = project_lda(model, rows[mask])
        truth = np.asarray(labels, dtype=object)[mask] == contrast.positive_label
        correct += int(np.sum((traj > 0) == truth))
        total += int(mask.sum())
    if total == 0:
        raise ValueError("no contrast-labeled time points in validation data")
    mean = mean_trajectory(model, stacked, acquisition, project=project_lda)[0]
    mask = contrast.mask(labels0)
    ind = contrast.indicator(labels0)[mask]
    traj = mean[mask]
    if np.std(traj) == 0 or np.std(ind) == 0:
        corr = float("nan")
    else:
        corr = float(np.corrcoef(traj, ind)[0, 1])
    return {"accuracy": correct / total, "n_points": total, "mean_trajectory": mean,
            "task_labels": list(labels0), "task_correlation": corr}


def lda_network(model: LdaModel, node_labels: Sequence[str] | None = None) -> list[Edge]:
    """One signed edge per selected edge, in edge order; positive weight favours the positive class."""
    node_labels = tuple(node_labels or model.node_labels)
    pairs = edge_index(len(node_labels))
    order = sorted(range(model.p_prime), key=lambda i: (-abs(model.weights[i]), model.selected_edges[i]))
    rank = {i: r for r, i in enumerate(order, start=1)}
    out = []
    for i, e in enumerate(model.selected_edges):
        j, k = pairs[e]
        out.append(Edge(node_labels[j], node_labels[k], j, k, float(model.weights[i]), rank[i]))
    return out


def write_screen(path, screen: ScreenResult, node_labels: Sequence[str]):
    names = edge_names(node_labels)
    chosen = set(screen.selected_edges)
    with open(path, "w") as fh:
        fh.write("edge\tselection_frequency\tselected\n")
        for e, name in enumerate(names):
            f = screen.selection_frequency[e] if e < len(screen.selection_frequency) else 0.0
            fh.write(f"{name}\t{float(f)!r}\t{int(e in chosen)}\n")


def save_lda_model(model: LdaModel, path):
    names = edge_names(model.node_labels)
    with open(path, "w") as fh:
        fh.write(f"# positive_label={model.contrast.positive_label}\t"
                 f"negative_label={model.contrast.negative_label}\t"
                 f"intercept={float(model.intercept)!r}\tshrinkage={float(model.shrinkage)!r}\t"
                 f"n_nodes={len(model.node_labels)}\n")
        fh.write("edge\tindex\tweight\tmean\tscale\n")
        for i, e in enumerate(model.selected_edges):
            fh.write(f"{names[e]}\t{e}\t{float(model.weights[i])!r}\t"
                     f"{float(model.feature_mean[i])!r}\t{float(model.feature_scale[i])!r}\n")


def load_lda_model(path, node_labels: Sequence[str] = ()) -> LdaModel:
    with open(path) as fh:
        meta = dict(item.split("=", 1) for item in fh.readline()[1:].strip().split("\t"))
        fh.readline()
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return LdaModel(
        weights=np.array([float(r[2]) for r in rows]),
        intercept=float(meta["intercept"]),
        selected_edges=tuple(int(r[1]) for r in rows),
        shrinkage=float(meta["shrinkage"]),
        contrast=ContrastSpec(meta["positive_label"], meta["negative_label"]),
        feature_mean=np.array([float(r[3]) for r in rows]),
        feature_scale=np.array([float(r[4]) for r in rows]),
        node_labels=tuple(node_labels),
    )
