"""
Registered analytic families and experiment presets.

A family fixes the unscaled process and the time scale d_n = n^p; its
limit drift c (for the truncation h(u) = 1 ^ u), Gaussian coefficient b^2
and limit Levy measure are hard-coded closed forms. A preset adds the mark
regime:

    B1: theta_n = min(1, theta * n / d_n)      so (d_n / n) theta_n -> theta
    B2: f_n(x)  = min(1, kappa * x / n)        so f_n(n u) -> 1 ^ (kappa u)
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from .constants import Assumption
from .exceptions import UnsupportedFamilyError, UsageError
from .measures import LevyMeasureSpec, ZERO_MEASURE, exponential_measure
from .specs import MarkRule, NO_MARKS, ProcessSpec, ScalingParams


@dataclass(frozen=True)
class LevyFamily:
    family_id: str
    description: str
    base_spec: ProcessSpec
    time_exponent: float
    limit_drift: float
    limit_b2: float
    limit_measure: LevyMeasureSpec = ZERO_MEASURE

    def scaling(self, n: int) -> ScalingParams:
        return ScalingParams(n=n, d_n=float(n) ** self.time_exponent)

    def rescaled_spec(self, n: int) -> ProcessSpec:
        return self.base_spec.rescaled(self.scaling(n))


@dataclass(frozen=True)
class Preset:
    """Family plus mark regime; theta is used under B1, kappa under B2."""
    preset_id: str
    family: LevyFamily
    assumption: Assumption
    theta: float = 0.0
    kappa: float = 0.0
    track_marks: bool = True

    def __post_init__(self):
        if self.theta < 0 or self.kappa < 0:
            raise UsageError(f"preset {self.preset_id}: theta and kappa must be nonnegative")

    def mark_rule(self, n: int) -> MarkRule:
        """Mark rule on unscaled jump sizes for index n."""
        if self.assumption is Assumption.B1:
            if self.theta == 0:
                return NO_MARKS
            return MarkRule.constant(min(1.0, self.theta * n / self.family.scaling(n).d_n))
        if self.kappa == 0:
            return NO_MARKS
        return MarkRule.linear_cap(scale=n / self.kappa)

    def member(self, n: int) -> Tuple[ProcessSpec, MarkRule, ScalingParams]:
        """(unscaled spec, unscaled mark rule, scaling) for index n."""
        return self.family.base_spec, self.mark_rule(n), self.family.scaling(n)

    def with_assumption(self, kind: str, theta: Optional[float] = None,
                        kappa: Optional[float] = None) -> "Preset":
        try:
            assumption = Assumption(kind)
        except ValueError:
            raise UsageError(f"unknown assumption {kind!r}; expected B1 or B2") from None
        return replace(
            self,
            assumption=assumption,
            theta=self.theta if theta is None else float(theta),
            kappa=self.kappa if kappa is None else float(kappa),
        )

    def describe(self) -> Dict[str, object]:
        return {
            "preset": self.preset_id,
            "family": self.family.family_id,
            "assumption": self.assumption.value,
            "theta": self.theta,
            "kappa": self.kappa,
            "time_exponent": self.family.time_exponent,
        }


FAMILIES: Dict[str, LevyFamily] = {
    family.family_id: family
    for family in (
        LevyFamily(
            family_id="drift-only",
            description="no jumps, Z(t) = -t, d_n = n",
            base_spec=ProcessSpec(drift=-1.0),
            time_exponent=1.0,
            limit_drift=1.0,
            limit_b2=0.0,
        ),
        LevyFamily(
            family_id="critical-exponential",
            description="Lambda = e^{-r} dr, drift -1, d_n = n^2",
            base_spec=ProcessSpec(drift=-1.0, levy_measure=exponential_measure(1.0, 1.0)),
            time_exponent=2.0,
            limit_drift=0.0,
            limit_b2=2.0,
        ),
        LevyFamily(
            family_id="subcritical-exponential",
            description="Lambda = (1/2) e^{-r} dr, drift -1, d_n = n",
            base_spec=ProcessSpec(drift=-1.0, levy_measure=exponential_measure(0.5, 1.0)),
            time_exponent=1.0,
            limit_drift=0.5,
            limit_b2=0.0,
        ),
    )
}

PRESETS: Dict[str, Preset] = {
    preset.preset_id: preset
    for preset in (
        Preset("drift-only", FAMILIES["drift-only"], Assumption.B1),
        Preset("crit-exp-B1-theta2", FAMILIES["critical-exponential"], Assumption.B1, theta=2.0),
        Preset("crit-exp-B2", FAMILIES["critical-exponential"], Assumption.B2, kappa=1.0),
        Preset("subcritical-exponential", FAMILIES["subcritical-exponential"], Assumption.B1,
               theta=1.0, track_marks=False),
    )
}


def registered_presets() -> List[str]:
    return sorted(PRESETS)


def get_preset(preset_id: str) -> Preset:
    """
    Look up a registered preset.

    Raises:
        UnsupportedFamilyError: If the id is not registered
    """
    try:
        return PRESETS[preset_id]
    except KeyError:
        raise UnsupportedFamilyError(f"unknown preset {preset_id!r}", registered_presets()) from None


def get_family(family_id: str) -> LevyFamily:
    try:
        return FAMILIES[family_id]
    except KeyError:
        raise UnsupportedFamilyError(f"unknown family {family_id!r}", sorted(FAMILIES)) from None
