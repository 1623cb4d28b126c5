"""Gaussian-kernel weighted covariance estimates at every time point."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dfcembed.ingest import SubjectSession


@dataclass(frozen=True, eq=False)
class CovarianceSequence:
    """Stack of ``n`` symmetric PSD ``p x p`` covariance matrices."""

    matrices: np.ndarray
    bandwidth: float

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ValueError(f"expected an (n, p, p) stack, got shape {m.shape}")
        object.__setattr__(self, "matrices", m)

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    @property
    def p(self) -> int:
        return self.matrices.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.matrices[i]


def _as_array(session) -> np.ndarray:
    if isinstance(session, SubjectSession):
        return session.data
    X = np.asarray(session, dtype=float)
    if X.ndim != 2:
        raise ValueError("time series must be 2-d (n, p)")
    return X


def kernel_weights(n: int, bandwidth: float, leave_one_out: bool = False) -> np.ndarray:
    """Row-normalized Gaussian weights ``w[i, j]`` over time lags."""
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    lag = np.subtract.outer(np.arange(n), np.arange(n)).astype(float)
    w = np.exp(-lag ** 2 / (2.0 * bandwidth ** 2))
    if leave_one_out:
        np.fill_diagonal(w, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def _weighted_moments(X: np.ndarray, W: np.ndarray):
    mu = W @ X
    cov = np.empty((X.shape[0], X.shape[1], X.shape[1]))
    for i in range(X.shape[0]):
        Xc = X - mu[i]
        cov[i] = (Xc * W[i][:, None]).T @ Xc
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return mu, cov


def kernel_weighted_covariances(session, bandwidth: float) -> CovarianceSequence:
    """Weighted covariance around the weighted mean at each time point.

    ``session`` may be a :class:`SubjectSession` or a raw ``(n, p)`` array.
    """
    X = _as_array(session)
    _, cov = _weighted_moments(X, kernel_weights(X.shape[0], bandwidth))
    return CovarianceSequence(cov, float(bandwidth))


def loo_log_likelihood(session, bandwidth: float, ridge: float = 1e-6) -> float:
    """Sum over time of the Gaussian log-density of ``X_i`` under leave-one-out moments."""
    X = _as_array(session)
    n, p = X.shape
    mu, cov = _weighted_moments(X, kernel_weights(n, bandwidth, leave_one_out=True))
    cov = cov + ridge * np.eye(p)
    sign, logdet = np.linalg.slogdet(cov)
    resid = X - mu
    maha = np.einsum("ij,ij->i", resid, np.linalg.solve(cov, resid[..., None])[..., 0])
    return float(np.sum(-0.5 * (p * np.log(2 * np.pi) + logdet + maha)))


def select_bandwidth(session, candidate_grid: Sequence[float], ridge: float = 1e-6) -> float:
    """Pick the kernel bandwidth maximizing leave-one-out predictive log-likelihood.

    Ties go to the larger bandwidth.
    """
    grid = [float(h) for h in candidate_grid]
    if not grid:
        raise ValueError("candidate_grid is empty")
    if any(h <= 0 for h in grid):
        raise ValueError("bandwidth candidates must be positive")
    if len(grid) == 1:
        return grid[0]
    best_h, best_ll = None, -np.inf
    for h in sorted(set(grid), reverse=True):
        ll = loo_log_likelihood(session, h, ridge)
        if ll > best_ll:
            best_h, best_ll = h, ll
    # every candidate degenerate: fall back to the smoothest estimate
    return max(grid) if best_h is None else best_h
