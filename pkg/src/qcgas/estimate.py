from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


class NumericalRejection(ValueError):
    """A well-formed request the numerics cannot honour (e.g. A(a) <= 0)."""


@dataclass(frozen=True)
class Estimate:
    """A numerical value with an absolute error bound.

    ``method`` is one of ``"quadrature"``, ``"monte-carlo"``, ``"closed-form"``,
    ``"mixed"`` or ``"lattice-sum"``.  ``breakdown`` carries per-term
    contributions, truncation tails and statistical errors; ``warning`` is set
    when a requested tolerance could not be met.
    """

    value: float
    error: float
    method: str
    breakdown: dict[str, Any] = field(default_factory=dict)
    warning: str | None = None

    def __post_init__(self):
        if not self.error >= 0:
            raise ValueError(f"error bound must be nonnegative, got {self.error}")

    @property
    def lower(self) -> float:
        return self.value - self.error

    @property
    def upper(self) -> float:
        return self.value + self.error

    def __float__(self) -> float:
        return float(self.value)
