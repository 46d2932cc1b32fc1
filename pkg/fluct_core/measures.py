"""
Levy measures on (0, inf) built from atoms and analytic density families.

A measure is a finite collection of components. Each component knows its
mass, tail, the integrated tails used by the scale function solver, its
Laplace integral, how to sample from its normalized law and how it
transforms under the rescaling r -> r/n, mass -> d_n * mass.

Supported density families:
    - ExponentialDensity: mass * rate * exp(-rate * r)
    - UniformDensity:     mass / (high - low) on (low, high]
    - PowerCutoffDensity: scale * r^(-beta) on r > cutoff (cutoff may be 0
                          when 1 < beta < 2, giving infinite total mass)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from .exceptions import NumericFailureError, SpecValidationError, UnsupportedMeasureError

logger = logging.getLogger(__name__)

# Absolute floor for quadrature error checks
QUAD_ABS_FLOOR = 1e-13
# Subdivision limit passed to scipy.integrate.quad
QUAD_LIMIT = 200


def quad_checked(func: Callable[[float], float], lower: float, upper: float,
                 rel_tol: float, points: Sequence[float] = ()) -> float:
    """
    Integrate with scipy.integrate.quad and enforce the error bound.

    Args:
        func: Scalar integrand
        lower: Lower limit (finite)
        upper: Upper limit (may be np.inf)
        rel_tol: Required relative error
        points: Optional interior break points (finite ranges only)

    Returns:
        The integral value

    Raises:
        NumericFailureError: If the reported error exceeds the tolerance
    """
    if upper <= lower:
        return 0.0
    kwargs = dict(epsrel=rel_tol, epsabs=QUAD_ABS_FLOOR, limit=QUAD_LIMIT, full_output=1)
    if points and np.isfinite(upper):
        inner = [p for p in points if lower < p < upper]
        if inner:
            kwargs["points"] = inner
    result = integrate.quad(func, lower, upper, **kwargs)
    value, abserr = result[0], result[1]
    tolerance = max(rel_tol * abs(value), QUAD_ABS_FLOOR) * 100.0
    if not np.isfinite(value) or abserr > tolerance:
        raise NumericFailureError(
            f"quadrature on [{lower}, {upper}] did not converge (value={value}, error={abserr})",
            achieved_error=abserr, tolerance=tolerance,
        )
    return value


def _as_array(u) -> np.ndarray:
    return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class Atom:
    """Point mass of the Levy measure."""
    location: float
    mass: float

    def __post_init__(self):
        if not (self.location > 0 and np.isfinite(self.location)):
            raise SpecValidationError(f"atom location must be positive, got {self.location}", "location")
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise SpecValidationError(f"atom mass must be positive, got {self.mass}", "mass")


@dataclass(frozen=True)
class ExponentialDensity:
    """Density mass * rate * exp(-rate * r) on (0, inf)."""
    mass: float
    rate: float
    family: str = field(default="exponential", init=False)

    def __post_init__(self):
        if not (self.mass > 0 and self.rate > 0):
            raise SpecValidationError("exponential density needs mass > 0 and rate > 0", "exponential")

    @property
    def total_mass(self) -> float:
        return self.mass

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return (1.0 / self.rate,)

    @property
    def support(self) -> Tuple[float, float]:
        return 0.0, np.inf

    def density(self, r):
        r = _as_array(r)
        return np.where(r > 0, self.mass * self.rate * np.exp(-self.rate * np.maximum(r, 0.0)), 0.0)

    def tail(self, u):
        u = np.maximum(_as_array(u), 0.0)
        return self.mass * np.exp(-self.rate * u)

    def integrated_tail(self, u):
        u = np.maximum(_as_array(u), 0.0)
        return -self.mass * np.expm1(-self.rate * u) / self.rate

    def integrated_tail_sq(self, u):
        u = np.maximum(_as_array(u), 0.0)
        x = self.rate * u
        return self.mass * (-np.expm1(-x) - x * np.exp(-x)) / self.rate ** 2

    def laplace_integral(self, lam: float, rel_tol: float) -> float:
        return self.mass * lam / (lam + self.rate)

    def first_moment(self) -> float:
        return self.mass / self.rate

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)

    def sample_size_biased(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(2.0, 1.0 / self.rate, size)

    def rescaled(self, n: float, d_n: float) -> "ExponentialDensity":
        return ExponentialDensity(mass=d_n * self.mass, rate=self.rate * n)

    def describe(self) -> Dict[str, Union[str, float]]:
        return {"family": self.family, "mass": self.mass, "rate": self.rate}


@dataclass(frozen=True)
class UniformDensity:
    """Density mass / (high - low) on (low, high]."""
    mass: float
    low: float
    high: float
    family: str = field(default="uniform", init=False)

    def __post_init__(self):
        if not (self.mass > 0 and 0 <= self.low < self.high < np.inf):
            raise SpecValidationError("uniform density needs mass > 0 and 0 <= low < high", "uniform")

    @property
    def total_mass(self) -> float:
        return self.mass

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return (self.low, self.high)

    @property
    def support(self) -> Tuple[float, float]:
        return self.low, self.high

    @property
    def _height(self) -> float:
        return self.mass / (self.high - self.low)

    def density(self, r):
        r = _as_array(r)
        return np.where((r > self.low) & (r <= self.high), self._height, 0.0)

    def tail(self, u):
        u = _as_array(u)
        return self._height * np.clip(self.high - np.maximum(u, self.low), 0.0, None)

    def integrated_tail(self, u):
        u = np.maximum(_as_array(u), 0.0)
        a, b, h = self.low, self.high, self._height
        mid = h * ((u * u - a * a) / 2.0 + u * (b - u))
        return np.where(u <= a, self.mass * u, np.where(u >= b, self.mass * (a + b) / 2.0, mid))

    def integrated_tail_sq(self, u):
        u = np.maximum(_as_array(u), 0.0)
        a, b, h = self.low, self.high, self._height
        mid = 0.5 * h * ((u ** 3 - a ** 3) / 3.0 + u * u * (b - u))
        full = 0.5 * h * (b ** 3 - a ** 3) / 3.0
        return np.where(u <= a, 0.5 * self.mass * u * u, np.where(u >= b, full, mid))

    def laplace_integral(self, lam: float, rel_tol: float) -> float:
        if lam == 0:
            return 0.0
        a, b = self.low, self.high
        # (e^{-lam a} - e^{-lam b}) / (lam (b - a)) written to avoid cancellation
        mean_exp = math.exp(-lam * a) * (-math.expm1(-lam * (b - a))) / (lam * (b - a))
        return self.mass * (1.0 - mean_exp)

    def first_moment(self) -> float:
        return self.mass * (self.low + self.high) / 2.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.high - (self.high - self.low) * rng.random(size)

    def sample_size_biased(self, rng: np.random.Generator, size: int) -> np.ndarray:
        a2, b2 = self.low ** 2, self.high ** 2
        return np.sqrt(a2 + (b2 - a2) * rng.random(size))

    def rescaled(self, n: float, d_n: float) -> "UniformDensity":
        return UniformDensity(mass=d_n * self.mass, low=self.low / n, high=self.high / n)

    def describe(self) -> Dict[str, Union[str, float]]:
        return {"family": self.family, "mass": self.mass, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class PowerCutoffDensity:
    """Density scale * r^(-beta) on r > cutoff."""
    scale: float
    beta: float
    cutoff: float
    family: str = field(default="power-cutoff", init=False)

    def __post_init__(self):
        if not (self.scale > 0 and self.beta > 1 and self.cutoff >= 0):
            raise SpecValidationError("power-cutoff density needs scale > 0, beta > 1, cutoff >= 0", "power-cutoff")
        if self.cutoff == 0 and self.beta >= 2:
            raise SpecValidationError("power-cutoff with cutoff 0 needs beta < 2 for finite variation", "power-cutoff")

    @property
    def total_mass(self) -> float:
        if self.cutoff == 0:
            return np.inf
        return self.scale * self.cutoff ** (1.0 - self.beta) / (self.beta - 1.0)

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return (self.cutoff, max(1.0, self.cutoff))

    @property
    def support(self) -> Tuple[float, float]:
        return self.cutoff, np.inf

    def density(self, r):
        r = _as_array(r)
        safe = np.where(r > self.cutoff, r, 1.0)
        return np.where(r > self.cutoff, self.scale * safe ** (-self.beta), 0.0)

    def tail(self, u):
        u = np.maximum(_as_array(u), self.cutoff)
        with np.errstate(divide="ignore"):
            return self.scale * u ** (1.0 - self.beta) / (self.beta - 1.0)

    def _power_integral(self, power: float, u):
        # integral of r^power over (cutoff, u]
        if power == -1.0:
            return np.log(u / self.cutoff)
        return (u ** (power + 1.0) - self.cutoff ** (power + 1.0)) / (power + 1.0)

    def integrated_tail(self, u):
        u = np.maximum(_as_array(u), 0.0)
        eps, c = self.cutoff, self.scale
        above = np.maximum(u, eps if eps > 0 else 1e-300)
        outer = c * self._power_integral(1.0 - self.beta, above) + above * self.tail(above)
        inner = u * self.tail(eps) if eps > 0 else np.zeros_like(u)
        return np.where(u <= eps, inner, outer)

    def integrated_tail_sq(self, u):
        u = np.maximum(_as_array(u), 0.0)
        eps, c = self.cutoff, self.scale
        above = np.maximum(u, eps if eps > 0 else 1e-300)
        outer = 0.5 * (c * self._power_integral(2.0 - self.beta, above) + above * above * self.tail(above))
        inner = 0.5 * u * u * self.tail(eps) if eps > 0 else np.zeros_like(u)
        return np.where(u <= eps, inner, outer)

    def laplace_integral(self, lam: float, rel_tol: float) -> float:
        if lam == 0:
            return 0.0

        def integrand(r):
            return -math.expm1(-lam * r) * self.scale * r ** (-self.beta)

        split = max(1.0, self.cutoff)
        head = quad_checked(integrand, self.cutoff, split, rel_tol)
        tail = quad_checked(integrand, split, np.inf, rel_tol)
        return head + tail

    def first_moment(self) -> float:
        if self.beta <= 2:
            return np.inf
        return self.scale * self.cutoff ** (2.0 - self.beta) / (self.beta - 2.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.cutoff == 0:
            raise UnsupportedMeasureError("power-cutoff with cutoff 0 has infinite mass; use a positive cutoff")
        return self.cutoff * (1.0 - rng.random(size)) ** (-1.0 / (self.beta - 1.0))

    def sample_size_biased(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.beta <= 2 or self.cutoff == 0:
            raise UnsupportedMeasureError("size-biased power-cutoff law needs beta > 2 and a positive cutoff")
        return self.cutoff * (1.0 - rng.random(size)) ** (-1.0 / (self.beta - 2.0))

    def rescaled(self, n: float, d_n: float) -> "PowerCutoffDensity":
        return PowerCutoffDensity(scale=d_n * self.scale * n ** (1.0 - self.beta), beta=self.beta,
                                  cutoff=self.cutoff / n)

    def describe(self) -> Dict[str, Union[str, float]]:
        return {"family": self.family, "scale": self.scale, "beta": self.beta, "cutoff": self.cutoff}


DensityComponent = Union[ExponentialDensity, UniformDensity, PowerCutoffDensity]


@dataclass(frozen=True)
class LevyMeasureSpec:
    """
    Levy measure as atoms plus density components.

    The zero measure (no atoms, no densities) is allowed and gives the
    deterministic drift process.
    """
    atoms: Tuple[Atom, ...] = ()
    densities: Tuple[DensityComponent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "densities", tuple(self.densities))
        small_jump_mass = float(self.integrated_tail(1.0))
        if not np.isfinite(small_jump_mass):
            raise SpecValidationError("measure must satisfy integral of (1 ^ r) finite", "levy_measure")

    @property
    def is_zero(self) -> bool:
        return not self.atoms and not self.densities

    @property
    def total_mass(self) -> float:
        """Total mass, or np.inf as the infinite-mass marker."""
        return sum(a.mass for a in self.atoms) + sum(d.total_mass for d in self.densities)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.total_mass))

    @property
    def breakpoints(self) -> List[float]:
        pts = {a.location for a in self.atoms}
        for d in self.densities:
            pts.update(p for p in d.breakpoints if p > 0)
        return sorted(pts)

    def tail(self, u):
        """Tail mass Lambda((u, inf))."""
        u = _as_array(u)
        out = np.zeros_like(u)
        for a in self.atoms:
            out = out + np.where(u < a.location, a.mass, 0.0)
        for d in self.densities:
            out = out + d.tail(u)
        return out

    def integrated_tail(self, u):
        """integral_0^u tail(s) ds = integral of (r ^ u) Lambda(dr)."""
        u = np.maximum(_as_array(u), 0.0)
        out = np.zeros_like(u)
        for a in self.atoms:
            out = out + a.mass * np.minimum(u, a.location)
        for d in self.densities:
            out = out + d.integrated_tail(u)
        return out

    def integrated_tail_sq(self, u):
        """integral_0^u s tail(s) ds = 1/2 integral of (r ^ u)^2 Lambda(dr)."""
        u = np.maximum(_as_array(u), 0.0)
        out = np.zeros_like(u)
        for a in self.atoms:
            out = out + 0.5 * a.mass * np.minimum(u, a.location) ** 2
        for d in self.densities:
            out = out + d.integrated_tail_sq(u)
        return out

    def laplace_integral(self, lam: float, rel_tol: float = 1e-10) -> float:
        """integral of (1 - e^{-lam r}) Lambda(dr)."""
        total = sum(a.mass * -math.expm1(-lam * a.location) for a in self.atoms)
        for d in self.densities:
            total += d.laplace_integral(lam, rel_tol)
        return total

    def first_moment(self) -> float:
        """integral of r Lambda(dr), np.inf when divergent."""
        return sum(a.mass * a.location for a in self.atoms) + sum(d.first_moment() for d in self.densities)

    def integrate(self, func: Callable[[float], float], rel_tol: float = 1e-10,
                  upper: float = np.inf, points: Sequence[float] = ()) -> float:
        """
        integral of func(r) Lambda(dr) over (0, upper].

        Args:
            func: Scalar function of the jump size
            rel_tol: Relative quadrature tolerance per component
            upper: Upper integration limit
            points: Extra kinks of func passed to the quadrature

        Raises:
            NumericFailureError: If a component quadrature fails
        """
        total = sum(a.mass * func(a.location) for a in self.atoms if a.location <= upper)
        for d in self.densities:
            lo, hi = d.support
            hi = min(hi, upper)
            if hi <= lo:
                continue

            def integrand(r, d=d):
                return func(r) * float(d.density(r))

            pts = sorted({p for p in list(d.breakpoints) + list(points) if lo < p < hi and np.isfinite(p)})
            if np.isfinite(hi):
                total += quad_checked(integrand, lo, hi, rel_tol, points=pts)
            else:
                split = pts[-1] + 1.0 if pts else max(lo, 0.0) + 1.0
                total += quad_checked(integrand, lo, split, rel_tol, points=pts)
                total += quad_checked(integrand, split, np.inf, rel_tol)
        return total

    def component_masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms] + [d.total_mass for d in self.densities], dtype=float)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw i.i.d. jump sizes from Lambda / total_mass."""
        if not self.is_finite:
            raise UnsupportedMeasureError(
                "sampling needs finite total mass; use a truncated preset (positive cutoff)",
                total_mass=self.total_mass,
            )
        if size == 0 or self.is_zero:
            return np.empty(0)
        masses = self.component_masses()
        counts = rng.multinomial(size, masses / masses.sum())
        pieces = []
        for count, comp in zip(counts, list(self.atoms) + list(self.densities)):
            if count == 0:
                continue
            if isinstance(comp, Atom):
                pieces.append(np.full(count, comp.location))
            else:
                pieces.append(comp.sample(rng, count))
        out = np.concatenate(pieces)
        # components were drawn in blocks; restore exchangeability
        rng.shuffle(out)
        return out

    def sample_size_biased(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw from r Lambda(dr) / integral of r Lambda(dr)."""
        if size == 0:
            return np.empty(0)
        comps = list(self.atoms) + list(self.densities)
        weights = np.array([c.mass * c.location if isinstance(c, Atom) else c.first_moment() for c in comps])
        if not np.all(np.isfinite(weights)):
            raise UnsupportedMeasureError("size-biased sampling needs a finite first moment")
        counts = rng.multinomial(size, weights / weights.sum())
        pieces = []
        for count, comp in zip(counts, comps):
            if count == 0:
                continue
            if isinstance(comp, Atom):
                pieces.append(np.full(count, comp.location))
            else:
                pieces.append(comp.sample_size_biased(rng, count))
        out = np.concatenate(pieces)
        rng.shuffle(out)
        return out

    def rescaled(self, n: float, d_n: float) -> "LevyMeasureSpec":
        """The measure d_n * Lambda(n .)."""
        return LevyMeasureSpec(
            atoms=tuple(Atom(location=a.location / n, mass=d_n * a.mass) for a in self.atoms),
            densities=tuple(d.rescaled(n, d_n) for d in self.densities),
        )

    def describe(self) -> Dict[str, object]:
        return {
            "atoms": [{"location": a.location, "mass": a.mass} for a in self.atoms],
            "densities": [d.describe() for d in self.densities],
            "total_mass": self.total_mass,
        }


def exponential_measure(mass: float = 1.0, rate: float = 1.0) -> LevyMeasureSpec:
    """Convenience constructor for mass * rate * e^{-rate r} dr."""
    return LevyMeasureSpec(densities=(ExponentialDensity(mass=mass, rate=rate),))


def atomic_measure(*atoms: Tuple[float, float]) -> LevyMeasureSpec:
    """Convenience constructor from (location, mass) pairs."""
    return LevyMeasureSpec(atoms=tuple(Atom(location=loc, mass=m) for loc, m in atoms))


ZERO_MEASURE = LevyMeasureSpec()
