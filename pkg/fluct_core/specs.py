"""
Process, mark rule and scaling parameters.

These are plain frozen dataclasses, validated on construction and shared
freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Union

import numpy as np

from .exceptions import SpecValidationError
from .measures import LevyMeasureSpec, ZERO_MEASURE

# Mark rule kinds
MARK_CONSTANT = "constant"
MARK_FUNCTION = "function"

# Size-dependent mark families: f(x) as a function of x / scale
MARK_FAMILIES = ("linear-cap", "saturating")


@dataclass(frozen=True)
class ProcessSpec:
    """Finite-variation spectrally positive process: drift d' < 0 plus jumps."""
    drift: float = -1.0
    levy_measure: LevyMeasureSpec = ZERO_MEASURE

    def __post_init__(self):
        if not (self.drift < 0 and np.isfinite(self.drift)):
            raise SpecValidationError(f"drift must be strictly negative, got {self.drift}", "drift")

    def rescaled(self, scaling: "ScalingParams") -> "ProcessSpec":
        """Spec of (1/n) Z(d_n t): drift d' d_n / n, measure d_n Lambda(n .)."""
        return ProcessSpec(
            drift=self.drift * scaling.d_n / scaling.n,
            levy_measure=self.levy_measure.rescaled(scaling.n, scaling.d_n),
        )

    def describe(self) -> Dict[str, object]:
        return {"drift": self.drift, "levy_measure": self.levy_measure.describe()}


@dataclass(frozen=True)
class ScalingParams:
    """Space scale n and time scale d_n."""
    n: int
    d_n: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise SpecValidationError(f"n must be a positive integer, got {self.n}", "n")
        if not (self.d_n > 0 and np.isfinite(self.d_n)):
            raise SpecValidationError(f"d_n must be positive, got {self.d_n}", "d_n")

    @property
    def alpha(self) -> float:
        """Exponential parameter of the local time weights, d_n / n."""
        return self.d_n / self.n


IDENTITY_SCALING = ScalingParams(n=1, d_n=1.0)


@dataclass(frozen=True)
class MarkRule:
    """
    Probability that a jump of a given size carries a mark.

    kind "constant" marks with probability theta regardless of size.
    kind "function" uses a family of f(x / scale):
        linear-cap:  min(1, x / scale)
        saturating:  1 - exp(-x / scale)
    size_factor multiplies the argument, so a rule built for unscaled sizes
    evaluates f(n r) on rescaled sizes r after on_rescaled_sizes(n).
    """
    kind: str = MARK_CONSTANT
    theta: float = 0.0
    family: Optional[str] = None
    scale: float = 1.0
    size_factor: float = 1.0

    def __post_init__(self):
        if self.kind == MARK_CONSTANT:
            if not 0.0 <= self.theta <= 1.0:
                raise SpecValidationError(f"mark probability must lie in [0, 1], got {self.theta}", "theta")
        elif self.kind == MARK_FUNCTION:
            if self.family not in MARK_FAMILIES:
                raise SpecValidationError(f"unknown mark family {self.family!r}", "family")
            if not self.scale > 0:
                raise SpecValidationError("mark scale must be positive", "scale")
        else:
            raise SpecValidationError(f"unknown mark kind {self.kind!r}", "kind")
        if not self.size_factor > 0:
            raise SpecValidationError("size_factor must be positive", "size_factor")

    @classmethod
    def constant(cls, theta: float) -> "MarkRule":
        return cls(kind=MARK_CONSTANT, theta=float(theta))

    @classmethod
    def linear_cap(cls, scale: float = 1.0) -> "MarkRule":
        return cls(kind=MARK_FUNCTION, family="linear-cap", scale=float(scale))

    @classmethod
    def saturating(cls, scale: float = 1.0) -> "MarkRule":
        return cls(kind=MARK_FUNCTION, family="saturating", scale=float(scale))

    @property
    def is_constant(self) -> bool:
        return self.kind == MARK_CONSTANT

    @property
    def slope_at_zero(self) -> float:
        """lim f(r)/r as r -> 0 (0 for constant rules with theta = 0, inf otherwise)."""
        if self.is_constant:
            return 0.0 if self.theta == 0 else np.inf
        return self.size_factor / self.scale

    def probability(self, sizes: Union[float, np.ndarray]) -> np.ndarray:
        sizes = np.asarray(sizes, dtype=float)
        if self.is_constant:
            return np.full(sizes.shape, self.theta)
        x = self.size_factor * sizes / self.scale
        if self.family == "linear-cap":
            return np.clip(x, 0.0, 1.0)
        return -np.expm1(-np.maximum(x, 0.0))

    def on_rescaled_sizes(self, n: float) -> "MarkRule":
        if self.is_constant:
            return self
        return replace(self, size_factor=self.size_factor * n)

    def describe(self) -> Dict[str, object]:
        if self.is_constant:
            return {"kind": self.kind, "theta": self.theta}
        return {"kind": self.kind, "family": self.family, "scale": self.scale, "size_factor": self.size_factor}


NO_MARKS = MarkRule.constant(0.0)
ALWAYS_MARK = MarkRule.constant(1.0)
