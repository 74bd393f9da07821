"""Finite Gamma-mixture fitting by expectation-maximization.

The M-step matches weighted first and second moments per component.
Those moment identities are written in shape-scale form (mean = a * s,
variance = a * s^2); the canonical shape-rate parameters follow as
shape = mean^2 / var and rate = mean / var.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, FitError, InitializationError
from .mixture import MixtureModel
from .special import gamma_log_pdf

__all__ = ["EmOptions", "FitResult", "kmeans_init", "e_step", "m_step", "fit_em", "total_log_likelihood"]

# Per-component variances are floored at this fraction of the sample
# variance so near-singleton clusters cannot drive the rate to infinity.
VARIANCE_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class EmOptions:
    k: int
    max_iters: int = 1000
    tol: float = 1e-8
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise DomainError(f"tol must be > 0, got {self.tol}")
        if self.restarts < 1:
            raise DomainError(f"restarts must be >= 1, got {self.restarts}")


@dataclass(frozen=True)
class FitResult:
    model: MixtureModel
    log_likelihood: float
    iterations: int
    converged: bool
    ll_trace: tuple[float, ...]


def _check_data(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("data must be a non-empty 1-D array")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("data must be finite and strictly positive")
    return arr


def _moment_match(mean: np.ndarray, var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return mean**2 / var, mean / var


def kmeans_init(data, k: int, seed: int) -> MixtureModel:
    """Moment-matched Gamma mixture from a 1-D k-means clustering.

    Uses k-means++ seeding and at most 100 Lloyd iterations; empty
    clusters are re-seeded from the point farthest from its center.
    """
    x = _check_data(data)
    if np.unique(x).size < k:
        raise InitializationError(f"need at least {k} distinct values, got {np.unique(x).size}")
    global_var = float(np.var(x))
    if global_var == 0.0:
        raise InitializationError("data has zero variance")

    rng = np.random.default_rng(seed)
    centers = np.empty(k)
    centers[0] = x[rng.integers(x.size)]
    for j in range(1, k):
        d2 = np.min((x[:, None] - centers[None, :j]) ** 2, axis=1)
        centers[j] = x[rng.choice(x.size, p=d2 / d2.sum())]

    assign = np.zeros(x.size, dtype=int)
    for _ in range(100):
        new_assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        dist = np.abs(x - centers[new_assign])
        for j in range(k):
            if not np.any(new_assign == j):
                far = int(np.argmax(dist))
                new_assign[far] = j
                dist[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centers = np.array([x[assign == j].mean() for j in range(k)])

    floor = VARIANCE_FLOOR_FRACTION * global_var
    weights = np.empty(k)
    means = np.empty(k)
    variances = np.empty(k)
    for j in range(k):
        members = x[assign == j]
        weights[j] = members.size / x.size
        means[j] = members.mean()
        variances[j] = max(float(np.var(members)), floor)
    shapes, rates = _moment_match(means, variances)
    return MixtureModel.from_arrays(weights, shapes, rates)


def _log_density_matrix(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    return np.log(model.weights) + gamma_log_pdf(x[:, None], model.shapes, model.rates)


def e_step(model: MixtureModel, data) -> np.ndarray:
    """Responsibility matrix (N, K): posterior component membership of
    every sample under the current model, rows summing to 1."""
    x = _check_data(data)
    logs = _log_density_matrix(model, x)
    norms = logsumexp(logs, axis=1)
    bad = ~np.isfinite(norms)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise FitError(f"sample {i} (value {x[i]!r}) has zero density under every component")
    return np.exp(logs - norms[:, None])


def m_step(resp, data) -> MixtureModel:
    """Re-estimate weights and moment-matched component parameters from
    responsibilities."""
    x = _check_data(data)
    phi = np.asarray(resp, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != x.size:
        raise DomainError("responsibilities must be an (N, K) matrix matching data")
    col = phi.sum(axis=0)
    if np.any(col <= 0):
        raise FitError(f"empty component(s) at indices {np.flatnonzero(col <= 0).tolist()}")
    weights = col / x.size
    means = (phi * x[:, None]).sum(axis=0) / col
    variances = (phi * (x[:, None] - means) ** 2).sum(axis=0) / col

    global_var = float(np.var(x))
    if global_var == 0.0:
        raise FitError("degenerate data: zero overall variance")
    variances = np.maximum(variances, VARIANCE_FLOOR_FRACTION * global_var)
    shapes, rates = _moment_match(means, variances)
    return MixtureModel.from_arrays(weights / weights.sum(), shapes, rates)


def total_log_likelihood(model: MixtureModel, data) -> float:
    x = _check_data(data)
    return float(np.sum(logsumexp(_log_density_matrix(model, x), axis=1)))


def _fit_once(x: np.ndarray, opts: EmOptions, seed: int) -> FitResult:
    model = kmeans_init(x, opts.k, seed)
    ll = total_log_likelihood(model, x)
    trace = [ll]
    converged = False
    iterations = 0
    for _ in range(opts.max_iters):
        candidate = m_step(e_step(model, x), x)
        ll_new = total_log_likelihood(candidate, x)
        if ll_new < ll:
            # The moment-matching M-step is not an exact maximizer; a
            # drop means the achievable fixed point has been bracketed.
            converged = True
            break
        model = candidate
        iterations += 1
        trace.append(ll_new)
        if abs(ll_new - ll) <= opts.tol * abs(ll):
            ll = ll_new
            converged = True
            break
        ll = ll_new
    return FitResult(model, ll, iterations, converged, tuple(trace))


def fit_em(data, opts: EmOptions) -> FitResult:
    """Fit a K-component Gamma mixture by EM from a k-means start.

    Stops when the relative log-likelihood change falls below
    ``opts.tol`` or after ``opts.max_iters`` iterations; with several
    restarts the highest-likelihood run wins.  Deterministic for fixed
    (data, opts).
    """
    x = _check_data(data)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(opts.seed).spawn(opts.restarts)]
    best: FitResult | None = None
    for seed in seeds:
        result = _fit_once(x, opts, seed)
        if best is None or result.log_likelihood > best.log_likelihood:
            best = result
    return best
