"""Finite Gamma mixtures: representation, evaluation, sampling.

``MixtureModel`` is the shared output type of both fitters.  Models are
immutable after construction and stored in canonical order (descending
weight, ties broken by ascending shape) so that fits can be compared
without worrying about label permutations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .special import gamma_log_pdf

__all__ = ["GammaComponent", "MixtureModel", "mixture_log_pdf", "sample", "effective_components"]

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class GammaComponent:
    """One weighted shape-rate Gamma kernel."""

    weight: float
    shape: float
    rate: float

    def __post_init__(self):
        for name in ("weight", "shape", "rate"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (np.isfinite(self.weight) and 0 < self.weight <= 1):
            raise DomainError(f"weight must lie in (0, 1], got {self.weight}")
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise DomainError(f"shape must be finite and positive, got {self.shape}")
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise DomainError(f"rate must be finite and positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2


class MixtureModel:
    """Immutable finite Gamma mixture in canonical component order."""

    __slots__ = ("_components", "_weights", "_shapes", "_rates")

    def __init__(self, components: Iterable[GammaComponent]):
        comps = tuple(components)
        if len(comps) < 1:
            raise DomainError("a mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError(f"component weights must sum to 1, got {total!r}")
        comps = tuple(sorted(comps, key=lambda c: (-c.weight, c.shape)))
        object.__setattr__(self, "_components", comps)
        for name, values in (
            ("_weights", [c.weight for c in comps]),
            ("_shapes", [c.shape for c in comps]),
            ("_rates", [c.rate for c in comps]),
        ):
            arr = np.asarray(values, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __setattr__(self, name, value):
        raise AttributeError("MixtureModel is immutable")

    @classmethod
    def from_arrays(cls, weights, shapes, rates) -> "MixtureModel":
        weights, shapes, rates = (np.asarray(a, dtype=float) for a in (weights, shapes, rates))
        if not (weights.shape == shapes.shape == rates.shape) or weights.ndim != 1:
            raise DomainError("weights, shapes and rates must be equal-length 1-D arrays")
        return cls(GammaComponent(w, a, b) for w, a, b in zip(weights, shapes, rates))

    @property
    def components(self) -> tuple[GammaComponent, ...]:
        return self._components

    @property
    def k(self) -> int:
        return len(self._components)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def shapes(self) -> np.ndarray:
        return self._shapes

    @property
    def rates(self) -> np.ndarray:
        return self._rates

    def mean(self) -> float:
        return float(np.sum(self._weights * self._shapes / self._rates))

    def __eq__(self, other) -> bool:
        return isinstance(other, MixtureModel) and self._components == other._components

    def __hash__(self):
        return hash(self._components)

    def __repr__(self) -> str:
        body = ", ".join(
            f"(w={c.weight:.6g}, shape={c.shape:.6g}, rate={c.rate:.6g})" for c in self._components
        )
        return f"MixtureModel[{body}]"

    # -- interchange format ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "components": [
                {"weight": c.weight, "shape": c.shape, "rate": c.rate} for c in self._components
            ]
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MixtureModel":
        try:
            comps = payload["components"]
            return cls(GammaComponent(c["weight"], c["shape"], c["rate"]) for c in comps)
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed mixture payload: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        return cls.from_dict(json.loads(text))


def mixture_log_pdf(model: MixtureModel, x):
    """Log-density of the mixture at x >= 0, via log-sum-exp.

    Safe for shapes up to at least 1e4 where a linear-space sum would
    overflow.
    """
    xv = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xv)) or np.any(xv < 0):
        raise DomainError(f"x must be finite and >= 0, got {x!r}")
    logs = np.log(model.weights) + gamma_log_pdf(
        xv[..., np.newaxis], model.shapes, model.rates
    )
    out = logsumexp(logs, axis=-1)
    if np.ndim(x) == 0:
        return float(out)
    return out


def sample(model: MixtureModel, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. values: a categorical pick over weights, then a
    Gamma draw from the chosen component.  Deterministic for a fixed
    seed."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    probs = model.weights / model.weights.sum()
    idx = rng.choice(model.k, size=n, p=probs)
    return rng.gamma(shape=model.shapes[idx], scale=1.0 / model.rates[idx])


def effective_components(model: MixtureModel, threshold: float = 0.001) -> int:
    """Number of components whose weight exceeds ``threshold``."""
    if not (0 <= threshold < 1):
        raise DomainError(f"threshold must lie in [0, 1), got {threshold}")
    return int(np.sum(model.weights > threshold))
