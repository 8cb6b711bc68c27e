"""Domain identities and the small immutable vector types shared by every module.

All vectors are positionally aligned to a canonical domain order (the order
domains were declared in). Values are stored as plain tuples so instances are
hashable, comparable, and serialize exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDomainSetError, InvalidLossError, InvalidWeightsError

# Tolerance on sum(weights) == 1; every update renormalizes exactly, so real
# drift stays at the few-ulp level and this bound only catches genuine misuse.
SIMPLEX_ATOL = 1e-9


def _float_tuple(values: Iterable[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class DomainSet:
    """Ordered collection of uniquely named domains with per-domain corpus sizes.

    The declaration order is canonical for a run: every weight, loss, and
    velocity vector is positionally aligned to ``names``.
    """

    names: tuple[str, ...]
    token_counts: tuple[int, ...]

    def __init__(self, names: Sequence[str], token_counts: Sequence[int]):
        names_t = tuple(str(n) for n in names)
        counts_t = tuple(int(c) for c in token_counts)
        if not names_t:
            raise InvalidDomainSetError("domain set must contain at least one domain")
        if len(set(names_t)) != len(names_t):
            raise InvalidDomainSetError(f"domain names must be unique, got {names_t}")
        if len(counts_t) != len(names_t):
            raise InvalidDomainSetError(
                f"token_counts has {len(counts_t)} entries for {len(names_t)} domains"
            )
        if any(c < 0 for c in counts_t):
            raise InvalidDomainSetError("token counts must be non-negative")
        object.__setattr__(self, "names", names_t)
        object.__setattr__(self, "token_counts", counts_t)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown domain {name!r}") from None

    @property
    def total_tokens(self) -> int:
        return sum(self.token_counts)


@dataclass(frozen=True)
class WeightVector:
    """Per-domain sampling proportions; a point on the probability simplex."""

    values: tuple[float, ...]

    def __init__(self, values: Iterable[float]):
        vals = _float_tuple(values)
        if not vals:
            raise InvalidWeightsError("weight vector must be non-empty")
        if any(not math.isfinite(v) for v in vals):
            raise InvalidWeightsError(f"weights must be finite, got {vals}")
        if any(v < 0.0 for v in vals):
            raise InvalidWeightsError(f"weights must be non-negative, got {vals}")
        total = math.fsum(vals)
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise InvalidWeightsError(f"weights must sum to 1 within {SIMPLEX_ATOL}, got {total!r}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def to_numpy(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class LossVector:
    """Per-domain mean negative log-likelihood, in nats per token."""

    values: tuple[float, ...]

    def __init__(self, values: Iterable[float]):
        vals = _float_tuple(values)
        if not vals:
            raise InvalidLossError("loss vector must be non-empty")
        if any(not math.isfinite(v) for v in vals):
            raise InvalidLossError(f"losses must be finite, got {vals}")
        if any(v < 0.0 for v in vals):
            raise InvalidLossError(f"losses must be non-negative, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def to_numpy(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class VelocityVector:
    """Per-domain normalized remaining progress, clamped to [0, 1].

    1 means no progress toward the target yet, 0 means the target is reached;
    higher values mark domains that are learning more slowly.
    """

    values: tuple[float, ...]

    def __init__(self, values: Iterable[float]):
        vals = _float_tuple(values)
        if not vals:
            raise ValueError("velocity vector must be non-empty")
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValueError(f"velocities must lie in [0, 1], got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def to_numpy(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


def normalize(raw: Iterable[float]) -> WeightVector:
    """Rescale non-negative values to sum to 1.

    Raises InvalidWeightsError on negative entries, non-finite entries, or an
    all-zero input.
    """
    vals = _float_tuple(raw)
    if any(not math.isfinite(v) for v in vals):
        raise InvalidWeightsError(f"cannot normalize non-finite values {vals}")
    if any(v < 0.0 for v in vals):
        raise InvalidWeightsError(f"cannot normalize negative values {vals}")
    total = math.fsum(vals)
    if total <= 0.0:
        raise InvalidWeightsError("cannot normalize an all-zero vector")
    return WeightVector(v / total for v in vals)


def default_weights(domains: DomainSet) -> WeightVector:
    """Token-ratio weights: each domain in proportion to its corpus size."""
    if domains.total_tokens <= 0:
        raise InvalidDomainSetError("default weights need a positive total token count")
    zero = [n for n, c in zip(domains.names, domains.token_counts) if c <= 0]
    if zero:
        raise InvalidDomainSetError(f"default weights need positive token counts; zero for {zero}")
    return normalize(domains.token_counts)
