"""Exact minimum-cost perfect matching on K_{n,n} and Monte Carlo of the scaled cost.

The solver is the successive-shortest-augmenting-path (Hungarian) method
with row/column potentials; the potentials it ends with form a dual
certificate, so every solve can be checked for optimality independently.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .randomness import SeedSpec, derive_stream, sample_weibull


@dataclass
class AssignmentInstance:
    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ValueError(f"cost matrix must be square and non-empty, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix has non-finite entries")
        if np.any(c < 0):
            raise ValueError("cost matrix has negative entries")
        self.costs = c

    @property
    def n(self) -> int:
        return self.costs.shape[0]


@dataclass
class MatchingResult:
    assignment: np.ndarray  # assignment[i] = column matched to row i (0-based)
    total_cost: float
    dual_row: np.ndarray
    dual_col: np.ndarray

    def certificate_gap(self, costs: np.ndarray) -> tuple[float, float]:
        """Worst dual infeasibility and worst slackness violation on matched pairs."""
        reduced = costs - self.dual_row[:, None] - self.dual_col[None, :]
        infeasible = max(0.0, -float(reduced.min()))
        matched = reduced[np.arange(len(self.assignment)), self.assignment]
        return infeasible, float(np.abs(matched).max())


@numba.njit(cache=True)
def _hungarian(c):
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j, 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    return assignment, u[1:].copy(), v[1:].copy()


@numba.njit(cache=True)
def _batch_min_cost(stack):
    out = np.empty(stack.shape[0])
    for b in range(stack.shape[0]):
        c = stack[b]
        a, _, _ = _hungarian(c)
        s = 0.0
        for i in range(c.shape[0]):
            s += c[i, a[i]]
        out[b] = s
    return out


def solve_assignment(instance: AssignmentInstance | np.ndarray) -> MatchingResult:
    """Minimum-cost perfect matching with optimal dual potentials."""
    if not isinstance(instance, AssignmentInstance):
        instance = AssignmentInstance(instance)
    c = instance.costs
    assignment, u, v = _hungarian(c)
    total = float(c[np.arange(instance.n), assignment].sum())
    return MatchingResult(assignment=assignment, total_cost=total, dual_row=u, dual_col=v)


def sample_instance(n: int, q: float, rng: np.random.Generator) -> AssignmentInstance:
    if n < 1:
        raise ValueError("n must be at least 1")
    return AssignmentInstance(sample_weibull(q, rng, (n, n)))


def parisi_reference(n: int) -> float:
    """Exact expected minimum cost for exp(1) costs, sum_{k<=n} 1/k**2."""
    if n < 1:
        raise ValueError("n must be at least 1")
    k = np.arange(n, 0, -1, dtype=np.float64)  # smallest terms first
    return float(np.sum(1.0 / (k * k)))


def scale_factor(n: int, q: float) -> float:
    return float(n) ** (-1.0 + 1.0 / q)


@dataclass
class Welford:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add_batch(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        m2b = float(((values - mb) ** 2).sum())
        self.merge(Welford(nb, mb, m2b))

    def merge(self, other: "Welford") -> None:
        n = self.count + other.count
        if n == 0:
            return
        d = other.mean - self.mean
        self.mean += d * other.count / n
        self.m2 += other.m2 + d * d * self.count * other.count / n
        self.count = n

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def std_err(self) -> float:
        return math.sqrt(self.variance / self.count)


def block_size(n: int) -> int:
    """Instances per Monte Carlo task; depends on ``n`` only, never on worker count."""
    return int(max(1, min(4096, 2**20 // (n * n))))


def _block_task(args):
    n, q, seed, block, count = args
    rng = derive_stream(seed, n, block)
    stack = sample_weibull(q, rng, (count, n, n))
    return _batch_min_cost(stack) * scale_factor(n, q)


def scaled_cost_samples(n: int, q: float, samples: int, seed: SeedSpec, jobs: int = 1):
    """Yield arrays of scaled costs ``n**(-1+1/q) * M``, one array per block, in block order."""
    bs = block_size(n)
    tasks = []
    for b, start in enumerate(range(0, samples, bs)):
        tasks.append((n, q, seed, b, min(bs, samples - start)))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            yield from ex.map(_block_task, tasks)
    else:
        for t in tasks:
            yield _block_task(t)


def estimate_scaled_cost(
    n: int, q: float, samples: int, seed: SeedSpec, jobs: int = 1
) -> tuple[float, float]:
    """Mean and standard error of ``n**(-1+1/q) * M(K_{n,n}^q)`` over ``samples`` instances."""
    if samples < 2:
        raise ValueError("need at least 2 samples")
    acc = Welford()
    for values in scaled_cost_samples(n, q, samples, seed, jobs):
        acc.add_batch(values)
    return acc.mean, acc.std_err


@dataclass
class BetaEstimate:
    q: float
    per_n: list = field(default_factory=list)  # (n, mean, std_err, samples), sorted by n
    extrapolated: float = math.nan
    uncertainty: float = math.nan
    slope: float = math.nan
    model: str = "mean(n) = beta + b/n, weighted least squares"


def fit_beta(sizes, means, std_errs=None) -> tuple[float, float, float]:
    """Least-squares fit of ``mean(n) = beta + b / n``.

    Returns ``(beta, uncertainty, b)``. With standard errors the fit is
    weighted and the uncertainty is the Monte Carlo covariance inflated by
    the residual chi-square when that exceeds one; without them the
    uncertainty comes from the residuals alone.
    """
    n = np.asarray(sizes, dtype=np.float64)
    y = np.asarray(means, dtype=np.float64)
    if len(np.unique(n)) < 3:
        raise ValueError("need at least 3 distinct sizes for the a + b/n fit")
    X = np.column_stack([np.ones_like(n), 1.0 / n])
    dof = len(n) - 2
    if std_errs is None:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(X.T @ X)
    else:
        se = np.asarray(std_errs, dtype=np.float64)
        if np.any(se <= 0):
            raise ValueError("standard errors must be positive")
        w = 1.0 / se**2
        A = X.T @ (w[:, None] * X)
        coef = np.linalg.solve(A, X.T @ (w * y))
        cov = np.linalg.inv(A)
        resid = y - X @ coef
        chi2 = float((w * resid**2).sum())
        if dof > 0 and chi2 / dof > 1.0:
            cov = cov * (chi2 / dof)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), float(coef[1])


def extrapolate_beta(q: float, sizes, samples: int, seed: SeedSpec, jobs: int = 1) -> BetaEstimate:
    sizes = sorted(int(s) for s in sizes)
    if len(set(sizes)) < 3:
        raise ValueError("need at least 3 distinct sizes")
    est = BetaEstimate(q=q)
    for n in sizes:
        mean, se = estimate_scaled_cost(n, q, samples, seed, jobs)
        est.per_n.append((n, mean, se, samples))
    beta, unc, b = fit_beta([r[0] for r in est.per_n], [r[1] for r in est.per_n],
                            [r[2] for r in est.per_n])
    est.extrapolated, est.uncertainty, est.slope = beta, unc, b
    return est
