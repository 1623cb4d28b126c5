"""Smooth sparse precision-matrix sequences by ADMM.

Minimizes, over a sequence of precision matrices ``Theta_1..Theta_n``::

    sum_i [-log det Theta_i + tr(S_i Theta_i)]
        + lambda1 * sum_i ||offdiag(Theta_i)||_1
        + lambda2 * sum_{i>=2} ||Theta_i - Theta_{i-1}||_1

The splitting keeps a dense positive definite iterate ``Theta`` (log-det prox,
closed form by eigendecomposition) and a consensus iterate ``Z`` that carries the
nonsmooth penalties. Every entry trajectory of ``Z`` is a one dimensional fused
lasso, solved exactly by dynamic programming.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import linprog

from dfcembed.covariance import CovarianceSequence

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-8


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1
    rho: float = 1.0
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    max_iter: int = 5000
    adaptive_rho: bool = False
    penalize_diagonal: bool = False

    def __post_init__(self):
        if not self.lambda1 >= 0 or not self.lambda2 >= 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class PrecisionSequence:
    """Estimated precision matrices, one per time point, plus solver metadata."""

    matrices: np.ndarray
    lambda1: float = 0.0
    lambda2: float = 0.0
    objective_value: float = float("nan")
    converged: bool = True
    n_iter: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim == 2:
            m = m[None]
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

    def support(self, i: int) -> set[tuple[int, int]]:
        """Edges ``(j, k)``, ``j < k``, with ``|Theta_i[j, k]| > 1e-8``."""
        j, k = np.triu_indices(self.p, 1)
        mask = np.abs(self.matrices[i][j, k]) > SUPPORT_TOL
        return set(zip(j[mask].tolist(), k[mask].tolist()))

    def supports(self) -> list[set[tuple[int, int]]]:
        return [self.support(i) for i in range(self.n)]


def _stack(x) -> np.ndarray:
    if isinstance(x, (PrecisionSequence, CovarianceSequence)):
        return x.matrices
    m = np.asarray(x, dtype=float)
    return m[None] if m.ndim == 2 else m


# ---------------------------------------------------------------------------
# 1-d fused lasso
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _tv_denoise(y, lam, out):
    """Exact minimizer of 0.5*sum (b-y)^2 + lam*sum |b_i - b_{i-1}| (linear-time DP).

    The derivative of each forward message is piecewise linear; it is stored as
    knots ``x`` with slope/intercept increments ``a``/``b`` between the active
    window ``[l, r]``. Back-pointers are clipping intervals ``[tm, tp]``.
    """
    n = y.shape[0]
    scale = 1.0
    for i in range(n):
        scale = max(scale, abs(y[i]))
    # the solution lies within 2*lam of y, so a negligible lam is exactly a copy;
    # it also keeps the slope bookkeeping away from cancellation at subnormal lam
    if n == 1 or lam <= 1e-15 * scale:
        for i in range(n):
            out[i] = y[i]
        return
    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = y[0] - lam
    tp[0] = y[0] + lam
    l = n - 1
    r = n
    x[l] = tm[0]
    x[r] = tp[0]
    a[l] = 1.0
    b[l] = lam - y[0]
    a[r] = -1.0
    b[r] = lam + y[0]
    afirst = 1.0
    bfirst = -lam - y[1]
    alast = -1.0
    blast = y[1] - lam

    for k in range(1, n - 1):
        alo = afirst
        blo = bfirst
        lo = l
        while lo <= r:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1
        tm[k] = (-lam - blo) / alo
        l = lo - 1
        x[l] = tm[k]

        ahi = alast
        bhi = blast
        hi = r
        while hi >= l:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1
        tp[k] = (lam + bhi) / (-ahi)
        r = hi + 1
        x[r] = tp[k]

        a[l] = alo
        b[l] = blo + lam
        a[r] = ahi
        b[r] = bhi + lam
        afirst = 1.0
        bfirst = -lam - y[k + 1]
        alast = -1.0
        blast = y[k + 1] - lam

    alo = afirst
    blo = bfirst
    lo = l
    while lo <= r:
        if alo * x[lo] + blo > 0.0:
            break
        alo += a[lo]
        blo += b[lo]
        lo += 1
    out[n - 1] = -blo / alo

    for k in range(n - 2, -1, -1):
        if out[k + 1] > tp[k]:
            out[k] = tp[k]
        elif out[k + 1] < tm[k]:
            out[k] = tm[k]
        else:
            out[k] = out[k + 1]


@numba.njit(cache=True)
def _fused_lasso_rows(Y, fuse, shrink):
    """Row-wise fused lasso then soft threshold; ``shrink[m]`` is per row."""
    out = np.empty_like(Y)
    for m in range(Y.shape[0]):
        _tv_denoise(Y[m], fuse, out[m])
        t = shrink[m]
        if t > 0.0:
            for i in range(Y.shape[1]):
                v = out[m, i]
                if v > t:
                    out[m, i] = v - t
                elif v < -t:
                    out[m, i] = v + t
                else:
                    out[m, i] = 0.0
    return out


def fused_lasso_chain(y, a: float = 1.0, l1: float = 0.0, l2: float = 0.0) -> np.ndarray:
    """Exact minimizer of ``sum (a/2)(z_i - y_i)^2 + l1 sum |z_i| + l2 sum |z_i - z_{i-1}|``.

    Solves the pure fusion problem by dynamic programming and soft-thresholds the
    result by ``l1 / a``, which is exact for a chain.
    """
    y = np.ascontiguousarray(np.atleast_1d(np.asarray(y, dtype=float)))
    if y.ndim != 1 or y.size < 1:
        raise ValueError("y must be a nonempty vector")
    if not a > 0:
        raise ValueError("a must be positive")
    if l1 < 0 or l2 < 0:
        raise ValueError("penalties must be nonnegative")
    return _fused_lasso_rows(y[None], l2 / a, np.array([l1 / a]))[0]


def fused_lasso_objective(z, y, a, l1, l2) -> float:
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(0.5 * a * np.sum((z - y) ** 2) + l1 * np.sum(np.abs(z))
                 + l2 * np.sum(np.abs(np.diff(z))))


# ---------------------------------------------------------------------------
# objective and solver
# ---------------------------------------------------------------------------

def _check_pd(theta: np.ndarray) -> np.ndarray:
    """Return log-determinants; raise if any matrix is not positive definite."""
    sym = 0.5 * (theta + theta.transpose(0, 2, 1))
    eig = np.linalg.eigvalsh(sym)
    if np.any(eig[:, 0] <= 0):
        i = int(np.argmin(eig[:, 0]))
        raise ValueError(f"precision matrix at t={i} is not positive definite "
                         f"(min eigenvalue {eig[i, 0]:.3g})")
    return np.sum(np.log(eig), axis=1)


def _l1(theta: np.ndarray, penalize_diagonal: bool) -> float:
    total = np.abs(theta).sum()
    if not penalize_diagonal:
        total -= np.abs(np.diagonal(theta, axis1=1, axis2=2)).sum()
    return float(total)


def neg_log_likelihoods(prec, cov) -> np.ndarray:
    """Per-time ``-log det Theta_i + tr(S_i Theta_i)``."""
    theta, S = _stack(prec), _stack(cov)
    if theta.shape != S.shape:
        raise ValueError(f"shape mismatch {theta.shape} vs {S.shape}")
    logdet = _check_pd(theta)
    return -logdet + np.einsum("ijk,ikj->i", S, theta)


def objective_value(prec, cov, lambda1: float, lambda2: float,
                    penalize_diagonal: bool = False) -> float:
    """Penalized negative log-likelihood of a precision sequence."""
    theta = _stack(prec)
    fit = neg_log_likelihoods(theta, cov).sum()
    fuse = np.abs(np.diff(theta, axis=0)).sum() if theta.shape[0] > 1 else 0.0
    return float(fit + lambda1 * _l1(theta, penalize_diagonal) + lambda2 * fuse)


def prox_logdet(S: np.ndarray, A: np.ndarray, rho: float) -> np.ndarray:
    """Batched argmin of ``-log det T + tr(S T) + rho/2 ||T - A||_F^2``."""
    d, Q = np.linalg.eigh(rho * A - S)
    theta = (d + np.sqrt(d * d + 4.0 * rho)) / (2.0 * rho)
    return np.einsum("nij,nj,nkj->nik", Q, theta, Q)


class _ChainIndex:
    """Upper-triangle (incl. diagonal) entry trajectories of a symmetric stack."""

    def __init__(self, p: int):
        self.j, self.k = np.triu_indices(p)
        self.is_diag = self.j == self.k

    def gather(self, M: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(M[:, self.j, self.k].T)

    def scatter(self, Y: np.ndarray, n: int, p: int) -> np.ndarray:
        out = np.empty((n, p, p))
        out[:, self.j, self.k] = Y.T
        out[:, self.k, self.j] = Y.T
        return out


def solve_single(cov, config: SolverConfig | None = None, init=None) -> PrecisionSequence:
    """Run ADMM on the smooth sparse precision objective.

    ``init`` optionally warm-starts from ``(Z, U)`` stacks; otherwise ``Z = I``
    and ``U = 0``. The returned matrices are the ``Z`` iterates, which carry
    exact zeros and exact ties.
    """
    config = config or SolverConfig()
    S = _stack(cov)
    n, p, _ = S.shape
    chains = _ChainIndex(p)
    rho = float(config.rho)
    l1_rows = np.where(chains.is_diag & (not config.penalize_diagonal), 0.0, config.lambda1)

    if init is None:
        Z = np.broadcast_to(np.eye(p), (n, p, p)).copy()
        U = np.zeros((n, p, p))
    else:
        Z, U = (np.array(m, dtype=float, copy=True) for m in init)

    sqrt_dim = math.sqrt(n * p * p)
    converged = False
    r_norm = s_norm = float("inf")
    it = 0
    for it in range(1, int(config.max_iter) + 1):
        theta = prox_logdet(S, Z - U, rho)

        Z_old = Z
        Y = chains.gather(theta + U)
        Zc = _fused_lasso_rows(Y, config.lambda2 / rho, l1_rows / rho)
        Z = chains.scatter(Zc, n, p)

        U = U + theta - Z

        r_norm = float(np.linalg.norm(theta - Z))
        s_norm = float(rho * np.linalg.norm(Z - Z_old))
        eps_pri = sqrt_dim * config.eps_abs + config.eps_rel * max(
            np.linalg.norm(theta), np.linalg.norm(Z))
        eps_dual = sqrt_dim * config.eps_abs + config.eps_rel * rho * np.linalg.norm(U)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

        if config.adaptive_rho:
            if r_norm > 10 * s_norm:
                rho *= 2.0
                U /= 2.0
            elif s_norm > 10 * r_norm:
                rho /= 2.0
                U *= 2.0

    if not converged:
        warnings.warn(
            f"ADMM did not converge in {config.max_iter} iterations "
            f"(primal residual {r_norm:.3g}, dual residual {s_norm:.3g})",
            ConvergenceWarning, stacklevel=2)

    try:
        obj = objective_value(Z, S, config.lambda1, config.lambda2, config.penalize_diagonal)
    except ValueError:
        obj = float("nan")
    logger.debug("solve_single: %d iterations, converged=%s, objective=%.6g", it, converged, obj)
    return PrecisionSequence(
        matrices=Z, lambda1=config.lambda1, lambda2=config.lambda2, objective_value=obj,
        converged=converged, n_iter=it, primal_residual=r_norm, dual_residual=s_norm,
        extra={"U": U, "rho": rho},
    )


# ---------------------------------------------------------------------------
# optimality check
# ---------------------------------------------------------------------------

def _chain_kkt(grad, theta, lambda1, lambda2, tol):
    """Smallest max-violation of ``grad_i + l1*s_i + l2*(t_i - t_{i+1}) = 0`` over subgradients."""
    n = grad.size
    if n == 1 or lambda2 == 0:
        nz = np.abs(theta) > tol
        resid = np.where(nz, np.abs(grad + lambda1 * np.sign(theta)),
                         np.maximum(np.abs(grad) - lambda1, 0.0))
        return float(resid.max())

    # variables: s (n), t (n-1, t[m] belongs to difference theta[m+1]-theta[m]), eps
    nv = 2 * n
    A = np.zeros((n, nv - 1))
    A[np.arange(n), np.arange(n)] = lambda1
    for m in range(n - 1):
        A[m + 1, n + m] += lambda2
        A[m, n + m] -= lambda2
    A_ub = np.hstack([np.vstack([A, -A]), -np.ones((2 * n, 1))])
    b_ub = np.concatenate([-grad, grad])

    bounds = []
    for i in range(n):
        if lambda1 == 0:
            bounds.append((0.0, 0.0))
        elif abs(theta[i]) > tol:
            s = float(np.sign(theta[i]))
            bounds.append((s, s))
        else:
            bounds.append((-1.0, 1.0))
    diff = np.diff(theta)
    for m in range(n - 1):
        if abs(diff[m]) > tol:
            s = float(np.sign(diff[m]))
            bounds.append((s, s))
        else:
            bounds.append((-1.0, 1.0))
    bounds.append((0.0, None))
    c = np.zeros(nv)
    c[-1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"KKT linear program failed: {res.message}")
    return float(res.x[-1])


def kkt_residual(prec, cov, lambda1: float, lambda2: float,
                 penalize_diagonal: bool = False, tol: float = SUPPORT_TOL) -> float:
    """Max-norm distance from subgradient stationarity, minimized over subgradients.

    Entries with ``|value| <= tol`` count as zero and successive differences with
    ``|diff| <= tol`` count as ties.
    """
    theta, S = _stack(prec), _stack(cov)
    _check_pd(theta)
    grad = S - np.linalg.inv(theta)
    n, p, _ = theta.shape
    worst = 0.0
    for j, k in zip(*np.triu_indices(p)):
        l1 = lambda1 if (j != k or penalize_diagonal) else 0.0
        worst = max(worst, _chain_kkt(grad[:, j, k], theta[:, j, k], l1, lambda2, tol))
    return worst


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------

def aic(prec, cov) -> float:
    """``sum_i -2 loglik_i + 2 * sum_i (#nonzero upper off-diagonal entries)``."""
    theta = _stack(prec)
    fit = 2.0 * neg_log_likelihoods(theta, cov).sum()
    j, k = np.triu_indices(theta.shape[1], 1)
    df = int(np.count_nonzero(np.abs(theta[:, j, k]) > SUPPORT_TOL))
    return float(fit + 2.0 * df)


def aic_grid(cov, grid1: Sequence[float], grid2: Sequence[float],
             template: SolverConfig | None = None, warm_start: bool = True) -> list[dict]:
    """Fit every ``(lambda1, lambda2)`` pair and report its AIC.

    Rows are ordered by decreasing ``lambda1`` then decreasing ``lambda2``.
    Non-converged fits are reported with ``aic = nan`` and a warning.
    """
    template = template or SolverConfig()
    if not len(grid1) or not len(grid2):
        raise ValueError("lambda grids must be nonempty")
    rows = []
    for l1 in sorted(set(map(float, grid1)), reverse=True):
        init = None
        for l2 in sorted(set(map(float, grid2)), reverse=True):
            cfg = replace(template, lambda1=l1, lambda2=l2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                est = solve_single(cov, cfg, init=init)
            if warm_start:
                init = (est.matrices, est.extra["U"])
            if not est.converged:
                warnings.warn(f"skipping lambda1={l1}, lambda2={l2}: solver did not converge",
                              ConvergenceWarning, stacklevel=2)
                value = float("nan")
            else:
                try:
                    value = aic(est, cov)
                except ValueError:
                    value = float("nan")
            rows.append({"lambda1": l1, "lambda2": l2, "aic": value,
                         "converged": est.converged, "n_iter": est.n_iter})
    return rows


def tune_hyperparams(cov, grid1: Sequence[float], grid2: Sequence[float],
                     template: SolverConfig | None = None, tie_tol: float = 1e-6,
                     report: list | None = None) -> SolverConfig:
    """Choose ``(lambda1, lambda2)`` by AIC over a grid.

    Near-ties (within ``tie_tol`` relative) go to the larger ``lambda1``, then the
    larger ``lambda2``. If ``report`` is a list, the per-pair rows are appended to it.
    """
    template = template or SolverConfig()
    if len(grid1) == 1 and len(grid2) == 1:
        return replace(template, lambda1=float(grid1[0]), lambda2=float(grid2[0]))
    rows = aic_grid(cov, grid1, grid2, template)
    if report is not None:
        report.extend(rows)
    valid = [r for r in rows if np.isfinite(r["aic"])]
    if not valid:
        raise RuntimeError("every grid point failed to converge")
    best = valid[0]
    for r in valid[1:]:
        if r["aic"] < best["aic"] - tie_tol * max(1.0, abs(best["aic"])):
            best = r
    return replace(template, lambda1=best["lambda1"], lambda2=best["lambda2"])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_precision_sequence(prec: PrecisionSequence, path):
    """Text container: a metadata comment line, then one ``# t=<i>`` block per time point."""
    with open(path, "w") as fh:
        fh.write(f"# lambda1={float(prec.lambda1)!r}\tlambda2={float(prec.lambda2)!r}\t"
                 f"converged={int(prec.converged)}\tn_iter={prec.n_iter}\t"
                 f"objective={float(prec.objective_value)!r}\n")
        for i, M in enumerate(prec.matrices, start=1):
            fh.write(f"# t={i}\n")
            for row in M:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_precision_sequence(path) -> PrecisionSequence:
    meta = {}
    blocks: list[list[list[float]]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# t="):
                blocks.append([])
            elif line.startswith("#"):
                for item in line[1:].strip().split("\t"):
                    key, _, value = item.partition("=")
                    meta[key] = value
            else:
                if not blocks:
                    raise ValueError(f"{path}: matrix row before any '# t=' header")
                blocks[-1].append([float(v) for v in line.split("\t")])
    return PrecisionSequence(
        matrices=np.array(blocks, dtype=float),
        lambda1=float(meta.get("lambda1", "nan")),
        lambda2=float(meta.get("lambda2", "nan")),
        objective_value=float(meta.get("objective", "nan")),
        converged=bool(int(meta.get("converged", "1"))),
        n_iter=int(meta.get("n_iter", "0")),
    )
