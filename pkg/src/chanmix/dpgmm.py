"""Truncated stick-breaking Dirichlet-process Gamma mixture.

Hierarchy (K = truncation level; component index k runs over 1..K and
stick index j over 1..K-1):

    concentration          ~ Gamma(1, 1)
    sticks[j]              ~ Beta(1, concentration)
    weights                = stick_break(sticks)
    shape_prior_shape[k]   ~ InverseGamma(h.shape_prior_shape_shape, h.shape_prior_shape_scale)
    shape_prior_scale[k]   ~ Exponential(h.shape_prior_scale_rate)
    rate_prior_shape[k]    ~ Gamma(h.rate_prior_shape_shape, h.rate_prior_shape_rate)
    rate_prior_rate[k]     ~ InverseGamma(h.rate_prior_rate_shape, h.rate_prior_rate_scale)
    shapes[k]              ~ InverseGamma(shape_prior_shape[k], shape_prior_scale[k])
    rates[k]               ~ Gamma(rate_prior_shape[k], rate_prior_rate[k])
    x_i                    ~ sum_k weights[k] * Gamma(shapes[k], rates[k])

Allocation variables are marginalized analytically, so the posterior is
a smooth density over positive/interval-constrained coordinates and can
be driven by gradient-based samplers after a log/logit change of
variables.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import digamma as _digamma
from scipy.special import expit, gammaincinv, gammaln

from .errors import DomainError
from .mixture import MixtureModel
from .special import (
    beta_log_pdf,
    exponential_log_pdf,
    gamma_log_pdf,
    inverse_gamma_log_pdf,
)

__all__ = [
    "HyperPriors",
    "LatentState",
    "UnconstrainedState",
    "stick_break",
    "log_prior",
    "log_likelihood",
    "log_posterior_unnormalized",
    "grad_log_posterior",
    "unconstrain",
    "state_dim",
    "PosteriorTarget",
    "initial_state_from_em",
]


@dataclass(frozen=True)
class HyperPriors:
    """Fixed top-level constants of the hierarchy (vague by default).

    Field names read ``<latent block>_<parameter of its prior>``: e.g.
    ``shape_prior_scale_rate`` is the rate of the exponential prior put
    on each component's ``shape_prior_scale``.
    """

    shape_prior_shape_shape: float = 1.0
    shape_prior_shape_scale: float = 1.0
    shape_prior_scale_rate: float = 0.001
    rate_prior_shape_shape: float = 1.0
    rate_prior_shape_rate: float = 1.0
    rate_prior_rate_shape: float = 1.0
    rate_prior_rate_scale: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{f.name} must be finite and positive, got {v}")


_BLOCKS = (
    "shape_prior_shape",
    "shape_prior_scale",
    "rate_prior_shape",
    "rate_prior_rate",
    "shapes",
    "rates",
)


@dataclass(frozen=True)
class LatentState:
    """Full parameter vector of the truncated mixture, in constrained
    coordinates."""

    concentration: float
    sticks: np.ndarray
    shape_prior_shape: np.ndarray
    shape_prior_scale: np.ndarray
    rate_prior_shape: np.ndarray
    rate_prior_rate: np.ndarray
    shapes: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sticks", np.asarray(self.sticks, dtype=float))
        for name in _BLOCKS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        k = self.shapes.size
        if k < 1:
            raise DomainError("truncation must be >= 1")
        if self.sticks.size != k - 1:
            raise DomainError(f"expected {k - 1} stick fractions, got {self.sticks.size}")
        for name in _BLOCKS:
            arr = getattr(self, name)
            if arr.size != k:
                raise DomainError(f"{name} must have length {k}, got {arr.size}")
            if not np.all(np.isfinite(arr)) or not np.all(arr > 0):
                raise DomainError(f"{name} must be finite and strictly positive")
        if not (np.isfinite(self.concentration) and self.concentration > 0):
            raise DomainError("concentration must be finite and positive")
        if self.sticks.size and (
            not np.all(np.isfinite(self.sticks))
            or np.any(self.sticks <= 0)
            or np.any(self.sticks >= 1)
        ):
            raise DomainError("stick fractions must lie strictly inside (0, 1)")

    @property
    def truncation(self) -> int:
        return self.shapes.size

    def weights(self) -> np.ndarray:
        return stick_break(self.sticks)


def state_dim(truncation: int) -> int:
    """Length of the flat unconstrained vector for a given truncation."""
    return 7 * truncation


def _layout(truncation: int):
    # [log concentration | logit sticks | six log blocks of length K]
    k = truncation
    idx = {"concentration": slice(0, 1), "sticks": slice(1, k)}
    start = k
    for name in _BLOCKS:
        idx[name] = slice(start, start + k)
        start += k
    return idx


@dataclass(frozen=True)
class UnconstrainedState:
    """Coordinate-wise log/logit image of a ``LatentState`` plus the
    log-Jacobian of the constraining map."""

    values: np.ndarray
    truncation: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (state_dim(self.truncation),):
            raise DomainError(
                f"expected vector of length {state_dim(self.truncation)}, got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.size

    def log_jacobian(self) -> float:
        return _log_jacobian(self.values, self.truncation)

    def constrain(self) -> LatentState:
        idx = _layout(self.truncation)
        v = self.values
        return LatentState(
            concentration=float(np.exp(v[idx["concentration"]])[0]),
            sticks=expit(v[idx["sticks"]]),
            **{name: np.exp(v[idx[name]]) for name in _BLOCKS},
        )


def unconstrain(state: LatentState) -> UnconstrainedState:
    """Map a constrained state to log/logit coordinates (round-trip
    exact to well below 1e-12)."""
    k = state.truncation
    v = np.empty(state_dim(k))
    idx = _layout(k)
    v[idx["concentration"]] = np.log(state.concentration)
    v[idx["sticks"]] = np.log(state.sticks) - np.log1p(-state.sticks)
    for name in _BLOCKS:
        v[idx[name]] = np.log(getattr(state, name))
    return UnconstrainedState(v, k)


def _log_jacobian(values: np.ndarray, truncation: int) -> float:
    idx = _layout(truncation)
    t = values[idx["sticks"]]
    # log V + log(1 - V) for logit coordinates, log x for log coordinates
    jac = -np.logaddexp(0.0, -t).sum() - np.logaddexp(0.0, t).sum()
    jac += values[idx["concentration"]].sum()
    for name in _BLOCKS:
        jac += values[idx[name]].sum()
    return float(jac)


def stick_break(sticks) -> np.ndarray:
    """Weights from stick fractions; the truncation remainder goes to
    the last component so the weights sum to 1 exactly."""
    v = np.asarray(sticks, dtype=float)
    if v.size and (not np.all(np.isfinite(v)) or np.any(v <= 0) or np.any(v >= 1)):
        raise DomainError("stick fractions must lie strictly inside (0, 1)")
    # computing each weight as a difference of consecutive remainders
    # makes the total telescope exactly
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    weights = np.empty(v.size + 1)
    weights[:-1] = remaining[:-1] - remaining[1:]
    weights[-1] = remaining[-1]
    return weights


def log_prior(state: LatentState, hyper: HyperPriors) -> float:
    """Sum of the log-densities of every level of the hierarchy."""
    total = gamma_log_pdf(state.concentration, 1.0, 1.0)
    if state.sticks.size:
        total += float(np.sum(beta_log_pdf(state.sticks, 1.0, state.concentration)))
    total += float(
        np.sum(
            inverse_gamma_log_pdf(
                state.shape_prior_shape, hyper.shape_prior_shape_shape, hyper.shape_prior_shape_scale
            )
        )
    )
    total += float(np.sum(exponential_log_pdf(state.shape_prior_scale, hyper.shape_prior_scale_rate)))
    total += float(
        np.sum(
            gamma_log_pdf(
                state.rate_prior_shape, hyper.rate_prior_shape_shape, hyper.rate_prior_shape_rate
            )
        )
    )
    total += float(
        np.sum(
            inverse_gamma_log_pdf(
                state.rate_prior_rate, hyper.rate_prior_rate_shape, hyper.rate_prior_rate_scale
            )
        )
    )
    total += float(np.sum(inverse_gamma_log_pdf(state.shapes, state.shape_prior_shape, state.shape_prior_scale)))
    total += float(np.sum(gamma_log_pdf(state.rates, state.rate_prior_shape, state.rate_prior_rate)))
    return float(total)


def log_likelihood(state: LatentState, data) -> float:
    """Marginal log-likelihood: allocation variables summed out
    analytically, log-sum-exp over components per sample."""
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        return 0.0
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError("data must be finite and strictly positive")
    log_w = np.log(state.weights())
    const = state.shapes * np.log(state.rates) - gammaln(state.shapes) + log_w
    m = (
        np.log(x)[:, None] * (state.shapes - 1.0)[None, :]
        - x[:, None] * state.rates[None, :]
        + const[None, :]
    )
    peak = m.max(axis=1)
    return float(np.sum(peak + np.log(np.exp(m - peak[:, None]).sum(axis=1))))


def log_posterior_unnormalized(u: UnconstrainedState, data, hyper: HyperPriors) -> float:
    """log prior + log likelihood + log-Jacobian at the constrained
    image of ``u``; -inf only where the image degenerates to the
    boundary of the support (numerical over/underflow)."""
    return PosteriorTarget(data, hyper, u.truncation).value(u.values)


def grad_log_posterior(u: UnconstrainedState, data, hyper: HyperPriors) -> np.ndarray:
    """Exact analytic gradient of ``log_posterior_unnormalized`` with
    respect to every unconstrained coordinate."""
    _, grad = PosteriorTarget(data, hyper, u.truncation)(u.values)
    return grad


class PosteriorTarget:
    """Callable target for the samplers: value and gradient of the
    unnormalized log-posterior over flat unconstrained vectors.

    Pure given (data, hyper, truncation); safe to call concurrently.
    The data-independent prior constants and the coordinate layout are
    precomputed once because samplers evaluate this in a tight loop.
    """

    def __init__(self, data, hyper: HyperPriors, truncation: int):
        x = np.asarray(data, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise DomainError("data must be a non-empty 1-D array")
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise DomainError("data must be finite and strictly positive")
        if truncation < 1:
            raise DomainError("truncation must be >= 1")
        self.data = x
        self.log_data = np.log(x)
        # per-sample feature rows [log x, x, 1]: the component log-density
        # matrix is a rank-3 product against [shape-1, -rate, normalizer]
        self._features = np.vstack([self.log_data, x, np.ones(x.size)])
        self.hyper = hyper
        self.truncation = truncation
        self.dim = state_dim(truncation)
        h, k = hyper, truncation
        # state-independent normalizers of the five per-component priors
        # plus the exponential's log-rate
        self._prior_const = k * (
            h.shape_prior_shape_shape * np.log(h.shape_prior_shape_scale)
            - float(gammaln(h.shape_prior_shape_shape))
            + np.log(h.shape_prior_scale_rate)
            + h.rate_prior_shape_shape * np.log(h.rate_prior_shape_rate)
            - float(gammaln(h.rate_prior_shape_shape))
            + h.rate_prior_rate_shape * np.log(h.rate_prior_rate_scale)
            - float(gammaln(h.rate_prior_rate_shape))
        )

    def __call__(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        return self._eval(values, want_grad=True)

    def value(self, values: np.ndarray) -> float:
        return self._eval(values, want_grad=False)[0]

    def _eval(self, values: np.ndarray, want_grad: bool) -> tuple[float, np.ndarray]:
        k = self.truncation
        v = np.asarray(values, dtype=float)
        grad = np.zeros(v.size) if want_grad else _EMPTY
        if v.shape != (self.dim,):
            raise DomainError(f"expected vector of length {self.dim}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            return -np.inf, grad

        h = self.hyper
        u_conc = v[0]
        t = v[1:k]
        # the six positive blocks are contiguous: one exp covers them all
        block_logs = v[k:]
        with np.errstate(over="ignore", under="ignore"):
            conc = np.exp(u_conc)
            sticks = expit(t)
            blocks = np.exp(block_logs)
        # coordinates beyond exp(+/-200) are numerically boundary images:
        # gradients would overflow while the posterior mass there is nil
        if abs(u_conc) > 200.0 or np.any(np.abs(block_logs) > 200.0):
            return -np.inf, grad
        if t.size and (np.any(sticks == 0.0) or np.any(sticks == 1.0)):
            return -np.inf, grad

        lam, kap, nu, tau, alf, bet = (blocks[i * k : (i + 1) * k] for i in range(6))
        log_lam, log_kap, log_nu, log_tau, log_alf, log_bet = (
            block_logs[i * k : (i + 1) * k] for i in range(6)
        )

        # log sigmoid(+/- t), stable at extreme logits
        log_v = -np.logaddexp(0.0, -t)
        log_1mv = -np.logaddexp(0.0, t)
        sum_log_1mv = log_1mv.sum()

        # -- prior -----------------------------------------------------
        inv_lam = 1.0 / lam
        inv_tau = 1.0 / tau
        inv_alf = 1.0 / alf
        gammaln_lam = gammaln(lam)
        gammaln_nu = gammaln(nu)
        prior = self._prior_const - conc + t.size * u_conc + (conc - 1.0) * sum_log_1mv
        prior += (
            -(h.shape_prior_shape_shape + 1.0) * log_lam.sum()
            - h.shape_prior_shape_scale * inv_lam.sum()
            - h.shape_prior_scale_rate * kap.sum()
            + (h.rate_prior_shape_shape - 1.0) * log_nu.sum()
            - h.rate_prior_shape_rate * nu.sum()
            - (h.rate_prior_rate_shape + 1.0) * log_tau.sum()
            - h.rate_prior_rate_scale * inv_tau.sum()
        )
        prior += (lam * log_kap).sum() - gammaln_lam.sum() - ((lam + 1.0) * log_alf).sum() - (kap * inv_alf).sum()
        prior += (nu * log_tau).sum() - gammaln_nu.sum() + ((nu - 1.0) * log_bet).sum() - (tau * bet).sum()

        # -- likelihood --------------------------------------------------
        # log weights straight from the logits:
        # log pi_m = log V_m + sum_{l<m} log(1 - V_l)
        log_w = np.empty(k)
        np.cumsum(log_1mv, out=log_w[1:])
        log_w[0] = 0.0
        log_w[:-1] += log_v
        coeff = np.column_stack([alf - 1.0, -bet, alf * log_bet - gammaln(alf) + log_w])
        m = coeff @ self._features
        peak = m.max(axis=0)
        m -= peak[None, :]
        # entries this far below the per-sample peak contribute nothing;
        # clipping keeps exp() and the reductions out of subnormal range
        np.maximum(m, -700.0, out=m)
        np.exp(m, out=m)
        se = m.sum(axis=0)
        lik = peak.sum() + np.log(se).sum()

        jac = u_conc + log_v.sum() + sum_log_1mv + block_logs.sum()
        value = float(prior + lik + jac)
        if not np.isfinite(value):
            return -np.inf, grad
        if not want_grad:
            return value, grad

        # -- gradient ----------------------------------------------------
        # per-component responsibility masses and weighted data moments
        x = self.data
        log_x = self.log_data
        inv_se = 1.0 / se
        weighted = np.column_stack([inv_se, log_x * inv_se, x * inv_se])
        stt = m @ weighted
        s = stt[:, 0]
        t1 = stt[:, 1]
        t2 = stt[:, 2]

        d_alf = t1 + s * (log_bet - _digamma(alf)) - (lam + 1.0) * inv_alf + kap * inv_alf**2
        d_bet = s * alf / bet - t2 + (nu - 1.0) / bet - tau
        d_lam = (
            -(h.shape_prior_shape_shape + 1.0) * inv_lam
            + h.shape_prior_shape_scale * inv_lam**2
            + log_kap
            - _digamma(lam)
            - log_alf
        )
        d_kap = -h.shape_prior_scale_rate + lam / kap - inv_alf
        d_nu = (
            (h.rate_prior_shape_shape - 1.0) / nu
            - h.rate_prior_shape_rate
            + log_tau
            - _digamma(nu)
            + log_bet
        )
        d_tau = (
            -(h.rate_prior_rate_shape + 1.0) * inv_tau
            + h.rate_prior_rate_scale * inv_tau**2
            + nu * inv_tau
            - bet
        )

        grad[0] = conc * (-1.0 + sum_log_1mv) + t.size + 1.0
        if t.size:
            # chain rule through V = sigmoid(t) folded in analytically so
            # no term divides by V or 1 - V
            tail = np.cumsum(s[::-1])[::-1]
            grad[1:k] = (
                -(conc - 1.0) * sticks
                + s[:-1] * (1.0 - sticks)
                - tail[1:] * sticks
                + (1.0 - 2.0 * sticks)
            )
        gb = grad[k:]
        gb[0 * k : 1 * k] = lam * d_lam
        gb[1 * k : 2 * k] = kap * d_kap
        gb[2 * k : 3 * k] = nu * d_nu
        gb[3 * k : 4 * k] = tau * d_tau
        gb[4 * k : 5 * k] = alf * d_alf
        gb[5 * k : 6 * k] = bet * d_bet
        gb += 1.0
        return value, grad


_EMPTY = np.empty(0)


def initial_state_from_em(
    model: MixtureModel, data, truncation: int, hyper: HyperPriors, leftover: float = 0.02
) -> LatentState:
    """Seed the truncated model from a moment-matched EM fit.

    The EM components occupy the leading sticks (scaled so ``leftover``
    mass remains), extra components get halving sticks and the global
    moment match of the data; per-component hyperparameters start at
    their prior means (medians where the mean does not exist).
    """
    if truncation < 1:
        raise DomainError("truncation must be >= 1")
    x = np.asarray(data, dtype=float)
    k_fit = min(model.k, truncation)
    weights = model.weights[:k_fit]
    if k_fit < truncation:
        weights = weights * (1.0 - leftover) / weights.sum()
    else:
        weights = weights / weights.sum()

    sticks = np.empty(truncation - 1)
    remaining = 1.0
    for j in range(truncation - 1):
        if j < k_fit and remaining > 0:
            frac = min(max(weights[j] / remaining, 1e-12), 1.0 - 1e-12)
        else:
            frac = 0.5
        sticks[j] = frac
        remaining *= 1.0 - frac

    mean, var = float(np.mean(x)), float(np.var(x))
    if var <= 0:
        raise DomainError("data has zero variance")
    fill_shape, fill_rate = mean**2 / var, mean / var
    shapes = np.full(truncation, fill_shape)
    rates = np.full(truncation, fill_rate)
    shapes[:k_fit] = model.shapes[:k_fit]
    rates[:k_fit] = model.rates[:k_fit]

    h = hyper
    ig_median = lambda shape, scale: scale / gammaincinv(shape, 0.5)
    return LatentState(
        concentration=1.0,
        sticks=sticks,
        shape_prior_shape=np.full(truncation, ig_median(h.shape_prior_shape_shape, h.shape_prior_shape_scale)),
        shape_prior_scale=np.full(truncation, 1.0 / h.shape_prior_scale_rate),
        rate_prior_shape=np.full(truncation, h.rate_prior_shape_shape / h.rate_prior_shape_rate),
        rate_prior_rate=np.full(truncation, ig_median(h.rate_prior_rate_shape, h.rate_prior_rate_scale)),
        shapes=shapes,
        rates=rates,
    )
