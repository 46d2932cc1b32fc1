"""
Analytic layer: Laplace exponent, its roots and inverse, the scale
function, killing, the marked ladder Levy measure and the limit parameters
of a registered family.

For a finite-variation spectrally positive process with drift d' < 0 and
Levy measure Lambda:

    psi(lam)   = -d' lam - integral (1 - e^{-lam r}) Lambda(dr)
    eta        = largest root of psi (0 unless psi'(0+) < 0)
    phi        = inverse of psi on [eta, inf)
    W          = renewal solution of W(x) = A + A integral_0^x W(x - u) tail(u) du,
                 A = -1/d' = W(0)

The ladder measure of the marked ladder height process is

    mu(dy, dq) = integral_0^inf e^{-eta x} dx Lambda(x + dy) Bernoulli(g(x + y))(dq)

with undershoot x and overshoot y.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from .constants import Assumption, Criticality, DEFAULT_TOLERANCES, Tolerances
from .exceptions import (NumericFailureError, RefinementNeededError, SpecValidationError,
                         UnsupportedFamilyError, UnsupportedMeasureError)
from .measures import LevyMeasureSpec, quad_checked
from .presets import Preset, get_family
from .specs import MarkRule, ProcessSpec, ScalingParams

logger = logging.getLogger(__name__)

# |psi'(0+)| below this (relative to |d'|) counts as critical
CRITICAL_SLOPE_TOL = 1e-12
# Doublings allowed when bracketing roots
MAX_BRACKET_DOUBLINGS = 200
# Kill depth search: marching step multiplier and maximum doublings of the range
KILL_DEPTH_STEP_FACTOR = 10.0
KILL_DEPTH_MAX_DOUBLINGS = 12
KILL_DEPTH_START = 16.0
# Index sequence n = 2^k used to evaluate limits of mark parameters
LIMIT_SEQUENCE_POWERS = range(3, 31)
LIMIT_SEQUENCE_RTOL = 1e-9


# ==============================================================================
# 1) LAPLACE EXPONENT, ROOTS, INVERSE
# ==============================================================================

def laplace_exponent(spec: ProcessSpec, lam: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """
    psi(lam) = -d' lam - integral (1 - e^{-lam r}) Lambda(dr).

    Raises:
        SpecValidationError: If lam < 0
        NumericFailureError: If a quadrature misses tolerances.quad_rel
    """
    if not lam >= 0:
        raise SpecValidationError(f"lambda must be nonnegative, got {lam}", "lam")
    return -spec.drift * lam - spec.levy_measure.laplace_integral(lam, tolerances.quad_rel)


def psi_slope_at_zero(spec: ProcessSpec) -> float:
    """psi'(0+) = -d' - integral r Lambda(dr); -inf when the mean jump is infinite."""
    return -spec.drift - spec.levy_measure.first_moment()


def criticality(spec: ProcessSpec) -> Criticality:
    slope = psi_slope_at_zero(spec)
    if abs(slope) <= CRITICAL_SLOPE_TOL * abs(spec.drift):
        return Criticality.CRITICAL
    return Criticality.SUBCRITICAL if slope > 0 else Criticality.SUPERCRITICAL


def _largest_root(psi: Callable[[float], float], xtol: float) -> float:
    # caller guarantees psi'(0+) < 0, so psi < 0 just right of 0
    hi = 1.0
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if psi(hi) > 0:
            break
        hi *= 2.0
    else:
        raise NumericFailureError("could not bracket the largest root of psi from above")
    lo = hi / 2.0
    while psi(lo) >= 0:
        hi, lo = lo, lo / 2.0
        if lo < 1e-300:
            raise NumericFailureError("could not bracket the largest root of psi from below")
    return optimize.bisect(psi, lo, hi, xtol=xtol)


def _invert(psi: Callable[[float], float], eta: float, a: float, tolerances: Tolerances) -> float:
    if not a >= 0:
        raise SpecValidationError(f"a must be nonnegative, got {a}", "a")
    if a == 0:
        return eta
    hi = max(2.0 * eta, 1.0)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if psi(hi) >= a:
            break
        hi *= 2.0
    root = optimize.brentq(lambda x: psi(x) - a, eta, hi, xtol=1e-15, rtol=4.5e-15, maxiter=500)
    residual = abs(psi(root) - a)
    bound = tolerances.phi_rel * max(1.0, a)
    if residual > bound:
        raise NumericFailureError(f"phi({a}) residual {residual:.3e} above {bound:.3e}",
                                  achieved_error=residual, tolerance=bound)
    return root


def eta_root(spec: ProcessSpec, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Largest root of psi: 0 when psi'(0+) >= 0, else the positive root by bisection."""
    if criticality(spec) is not Criticality.SUPERCRITICAL:
        return 0.0
    eta = _largest_root(lambda lam: laplace_exponent(spec, lam, tolerances), tolerances.eta_abs)
    logger.debug(f"calc.eta: eta={eta:.15g} for drift={spec.drift:g}")
    return eta


def phi_inverse(spec: ProcessSpec, a: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """
    phi(a): the unique lam >= eta with psi(lam) = a.

    Raises:
        NumericFailureError: If |psi(phi(a)) - a| exceeds phi_rel * max(1, a)
    """
    return _invert(lambda lam: laplace_exponent(spec, lam, tolerances), eta_root(spec, tolerances), a, tolerances)


def kill_rate(spec: ProcessSpec) -> float:
    """psi'(0+) when positive (W(inf) = 1/psi'(0+)), else 0."""
    slope = psi_slope_at_zero(spec)
    return float(slope) if criticality(spec) is Criticality.SUBCRITICAL else 0.0


def rescale(spec: ProcessSpec, scaling: ScalingParams) -> ProcessSpec:
    """Spec of (1/n) Z(d_n t): drift d' d_n / n and measure d_n Lambda(n .)."""
    rescaled = spec.rescaled(scaling)
    logger.debug(f"calc.rescale: n={scaling.n} d_n={scaling.d_n:g} drift={rescaled.drift:g}")
    return rescaled


# ==============================================================================
# 2) SCALE FUNCTION
# ==============================================================================

def _march_scale(spec: ProcessSpec, x_max: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Product-trapezoid march for W on the grid k h, k = 0..K.

    The integral over each cell [u_j, u_j + h] of the linear interpolant of
    W(x_k - u) against tail(u) uses the exact cell moments of the tail,
    obtained from the closed-form integrated tails, so infinite-mass
    measures need no special treatment.
    """
    steps = max(1, int(math.ceil(x_max / h - 1e-9)))
    grid = h * np.arange(steps + 1)
    A = -1.0 / spec.drift
    measure = spec.levy_measure
    i1 = measure.integrated_tail(grid)
    i2 = measure.integrated_tail_sq(grid)
    m0 = np.diff(i1)
    m1 = (np.diff(i2) - grid[:-1] * m0) / h
    a = m0 - m1   # weight of the left node of each cell
    b = m1        # weight of the right node
    w = np.empty(steps)
    w[0] = a[0]
    w[1:] = a[1:] + b[:-1]
    denominator = 1.0 - A * a[0]
    if denominator <= 0:
        raise RefinementNeededError(f"scale function step h={h:g} too coarse (1 - A a_0 = {denominator:.3e})",
                                    step=h, estimated_error=np.inf)
    values = np.empty(steps + 1)
    values[0] = A
    for k in range(1, steps + 1):
        history = np.dot(w[1:k], values[k - 1:0:-1]) + b[k - 1] * values[0]
        values[k] = A * (1.0 + history) / denominator
    return grid, values


def scale_function(spec: ProcessSpec, x_grid: Sequence[float],
                   tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """
    Scale function W on x_grid by Volterra marching with a Richardson check.

    Args:
        spec: Finite-variation process spec
        x_grid: Nondecreasing nonnegative evaluation points
        tolerances: scale_step is the marching step h, scale_tol the error bound

    Returns:
        W(x) for each grid point; W(0) = -1/d' exactly

    Raises:
        SpecValidationError: If the grid is empty, negative or decreasing
        RefinementNeededError: If the h vs h/2 estimate exceeds scale_tol
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.size == 0 or x_grid[0] < 0 or np.any(np.diff(x_grid) < 0) or not np.all(np.isfinite(x_grid)):
        raise SpecValidationError("x_grid must be a nonempty nondecreasing list of finite nonnegative reals",
                                  "x_grid")
    A = -1.0 / spec.drift
    x_max = float(x_grid[-1])
    if spec.levy_measure.is_zero or x_max == 0:
        return np.full(x_grid.shape, A)

    h = min(tolerances.scale_step, x_max)
    coarse_grid, coarse = _march_scale(spec, x_max, h)
    fine_grid, fine = _march_scale(spec, coarse_grid[-1], h / 2.0)
    error = float(np.max(np.abs(coarse - fine[::2]))) / 3.0
    bound = tolerances.scale_tol * max(1.0, float(np.max(np.abs(fine))))
    logger.debug(f"calc.scale: steps={len(fine_grid) - 1} h={h / 2.0:g} richardson_error={error:.3e}")
    if error > bound:
        raise RefinementNeededError(
            f"scale function error estimate {error:.3e} above {bound:.3e}; decrease scale_step",
            step=h, estimated_error=error, tolerance=bound,
        )
    return np.interp(x_grid, fine_grid, fine)


def volterra_residual(spec: ProcessSpec, x_points: Sequence[float],
                      tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """|W(x) - A (1 + integral_0^x W(x - u) tail(u) du)| with W from the fine march."""
    x_points = np.asarray(x_points, dtype=float)
    A = -1.0 / spec.drift
    if spec.levy_measure.is_zero:
        return np.zeros(x_points.shape)
    x_max = float(np.max(x_points))
    grid = np.linspace(0.0, x_max, int(math.ceil(x_max / (tolerances.scale_step / 2.0))) + 1)
    values = scale_function(spec, grid, tolerances)
    out = np.empty(x_points.shape)
    for i, x in enumerate(x_points):
        if x == 0:
            out[i] = abs(values[0] - A)
            continue
        conv, _ = integrate.quad(lambda u: float(np.interp(x - u, grid, values)) * float(spec.levy_measure.tail(u)),
                                 0.0, x, limit=1000, epsabs=1e-12, epsrel=1e-10)
        out[i] = abs(float(np.interp(x, grid, values)) - A * (1.0 + conv))
    return out


def scale_laplace_transform(spec: ProcessSpec, lam: float, upper: float,
                            tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Trapezoid value of integral_0^upper e^{-lam x} W(x) dx on the marching grid."""
    grid = np.linspace(0.0, upper, int(math.ceil(upper / tolerances.scale_step)) + 1)
    return float(integrate.trapezoid(np.exp(-lam * grid) * scale_function(spec, grid, tolerances), grid))


def kill_depth(spec: ProcessSpec, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """
    Smallest depth x below the running supremum from which a new record has
    probability 1 - W(x) / W(inf) below kill_depth_tol; inf unless subcritical.
    """
    rate = kill_rate(spec)
    if rate == 0:
        return np.inf
    if spec.levy_measure.is_zero:
        return 0.0
    h = KILL_DEPTH_STEP_FACTOR * tolerances.scale_step
    x_max = KILL_DEPTH_START
    for _ in range(KILL_DEPTH_MAX_DOUBLINGS):
        grid, values = _march_scale(spec, x_max, h)
        gap = 1.0 - values * rate
        below = np.flatnonzero(gap < tolerances.kill_depth_tol)
        if below.size:
            depth = float(grid[below[0]])
            logger.debug(f"calc.kill_depth: depth={depth:.6g} record_probability={gap[below[0]]:.3e}")
            return depth
        x_max *= 2.0
    raise NumericFailureError(f"kill depth not reached within x <= {x_max:g}",
                              achieved_error=float(gap[-1]), tolerance=tolerances.kill_depth_tol)


# ==============================================================================
# 3) LADDER MEASURE
# ==============================================================================

def _ell(eta: float, c):
    """integral_0^c e^{-eta x} dx."""
    c = np.asarray(c, dtype=float)
    if eta == 0:
        return c
    return -np.expm1(-eta * c) / eta


@dataclass(frozen=True)
class LadderMeasure:
    """
    Jump measure mu(dy, dq) of the marked ladder height process.

    atom_part lists, for every atom (a, m) of Lambda and q in {0, 1}, the
    tuple (a, q, mass); that mass is spread over y in (0, a) with density
    proportional to e^{-eta (a - y)}. mark_density / nomark_density cover the
    absolutely continuous components of Lambda; density() adds everything.
    """
    spec: ProcessSpec
    mark: MarkRule
    eta: float
    mu_plus_mass: float
    lambda_rate: float
    kill_rate: float
    rel_tol: float = 1e-8
    atom_part: Tuple[Tuple[float, int, float], ...] = field(default=())

    @property
    def nomark_mass(self) -> float:
        return self.mu_plus_mass - self.lambda_rate

    def _prob(self, q: Optional[int], z):
        g = self.mark.probability(z)
        if q is None:
            return np.ones_like(g)
        return g if q == 1 else 1.0 - g

    def _density_part(self, y: float, q: int) -> float:
        densities = LevyMeasureSpec(densities=self.spec.levy_measure.densities)
        if densities.is_zero:
            return 0.0
        eta = self.eta

        def integrand(z):
            return math.exp(-eta * (z - y)) * float(self._prob(q, z)) if z > y else 0.0

        return densities.integrate(integrand, self.rel_tol, points=(y,))

    def mark_density(self, y):
        """e^{eta y} integral_y^inf e^{-eta z} g(z) lambda(z) dz (density components)."""
        return np.vectorize(lambda v: self._density_part(v, 1), otypes=[float])(y)

    def nomark_density(self, y):
        return np.vectorize(lambda v: self._density_part(v, 0), otypes=[float])(y)

    def density(self, y, q: Optional[int] = None):
        """Full density of mu(dy, q) including atom pieces; q=None sums both marks."""
        y = np.asarray(y, dtype=float)
        if q is None:
            return self.density(y, 0) + self.density(y, 1)
        out = self.mark_density(y) if q == 1 else self.nomark_density(y)
        for atom in self.spec.levy_measure.atoms:
            p = float(self._prob(q, atom.location))
            out = out + np.where((y > 0) & (y < atom.location),
                                 atom.mass * p * np.exp(-self.eta * (atom.location - y)), 0.0)
        return out

    def undershoot_density(self, x):
        """e^{-eta x} tail(x): intensity of the H- jumps."""
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, np.exp(-self.eta * x) * self.spec.levy_measure.tail(x), 0.0)

    def cdf(self, y, q: Optional[int] = None):
        """mu((0, y] x q); q=None means both marks."""
        y = np.asarray(y, dtype=float)
        measure = self.spec.levy_measure
        if self.eta == 0 and (q is None or self.mark.is_constant):
            return float(np.mean(self._prob(q, 1.0))) * measure.integrated_tail(y)
        eta = self.eta

        def one(v):
            if v <= 0:
                return 0.0
            return measure.integrate(
                lambda z: float(self._prob(q, z)) * float(_ell(eta, z) - _ell(eta, max(z - v, 0.0))),
                self.rel_tol, points=(v,))

        return np.vectorize(one, otypes=[float])(y)

    def overshoot_cdf(self, y):
        """Normalized overshoot law mu((0, y] x {0, 1}) / mu_plus_mass."""
        self._require_finite()
        return self.cdf(y) / self.mu_plus_mass

    def undershoot_cdf(self, x):
        """Normalized undershoot law integral_0^x e^{-eta s} tail(s) ds / mu_plus_mass."""
        self._require_finite()
        x = np.asarray(x, dtype=float)
        measure = self.spec.levy_measure
        if self.eta == 0:
            return measure.integrated_tail(x) / self.mu_plus_mass
        eta = self.eta

        def one(v):
            if v <= 0:
                return 0.0
            return quad_checked(lambda s: math.exp(-eta * s) * float(measure.tail(s)), 0.0, v, self.rel_tol,
                                points=[p for p in measure.breakpoints if p < v])

        return np.vectorize(one, otypes=[float])(x) / self.mu_plus_mass

    def laplace_integral(self, beta: float, gamma: float) -> float:
        """integral (1 - e^{-beta y - gamma q}) mu(dy, dq)."""
        if self.spec.levy_measure.is_zero:
            return 0.0
        eta = self.eta
        mark_factor = -math.expm1(-gamma)

        def joint(z):
            # integral_0^z e^{-eta x} e^{-beta (z - x)} dx
            if beta == eta:
                return z * math.exp(-eta * z)
            return (math.exp(-eta * z) - math.exp(-beta * z)) / (beta - eta)

        def integrand(z):
            g = float(self.mark.probability(z))
            return float(_ell(eta, z)) - (1.0 - g * mark_factor) * joint(z)

        return self.spec.levy_measure.integrate(integrand, self.rel_tol)

    def bin_mass(self, x_edges: Sequence[float], y_edges: Sequence[float], q: Optional[int] = None) -> np.ndarray:
        """
        Mass of e^{-eta x} dx Lambda(x + dy) over the rectangles of an
        (undershoot, overshoot) grid; edges may end with np.inf.
        """
        x_edges = np.asarray(x_edges, dtype=float)
        y_edges = np.asarray(y_edges, dtype=float)
        measure, eta = self.spec.levy_measure, self.eta

        def joint_cdf(X, Y):
            if X <= 0 or Y <= 0:
                return 0.0

            def inner(z):
                upper = min(X, z)
                lower = max(0.0, z - Y)
                if upper <= lower:
                    return 0.0
                return float(self._prob(q, z)) * float(_ell(eta, upper) - _ell(eta, lower))

            kinks = [p for p in (X, Y, X + Y) if np.isfinite(p)]
            return measure.integrate(inner, self.rel_tol, points=kinks)

        corners = np.array([[joint_cdf(X, Y) for Y in y_edges] for X in x_edges])
        return corners[1:, 1:] - corners[:-1, 1:] - corners[1:, :-1] + corners[:-1, :-1]

    def sample(self, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Draw (undershoot, overshoot, mark) from mu normalized.

        The jump z = x + y has law ell(z) Lambda(dz) / mu_plus_mass; given z,
        x has density proportional to e^{-eta x} on (0, z) and the mark is
        Bernoulli(g(z)).

        Raises:
            UnsupportedMeasureError: If the normalized law does not exist
        """
        measure, eta = self.spec.levy_measure, self.eta
        if size == 0 or measure.is_zero:
            return np.empty(0), np.empty(0), np.empty(0, dtype=np.int8)
        self._require_finite()
        if eta == 0:
            z = measure.sample_size_biased(rng, size)
            x = z * rng.random(size)
        else:
            accepted: List[np.ndarray] = []
            remaining = size
            while remaining > 0:
                proposal = measure.sample(rng, 2 * remaining + 16)
                keep = proposal[rng.random(proposal.size) < -np.expm1(-eta * proposal)]
                accepted.append(keep[:remaining])
                remaining -= min(remaining, keep.size)
            z = np.concatenate(accepted)
            x = -np.log1p(rng.random(size) * np.expm1(-eta * z)) / eta
        marks = (rng.random(size) < self.mark.probability(z)).astype(np.int8)
        return x, z - x, marks

    def _require_finite(self):
        if not (np.isfinite(self.mu_plus_mass) and self.mu_plus_mass > 0):
            raise UnsupportedMeasureError("ladder measure has no finite positive mass to normalize",
                                          total_mass=self.mu_plus_mass)

    def describe(self) -> dict:
        return {
            "eta": self.eta,
            "mu_plus_mass": self.mu_plus_mass,
            "lambda_rate": self.lambda_rate,
            "kill_rate": self.kill_rate,
            "mark": self.mark.describe(),
        }


def ladder_measure(spec: ProcessSpec, mark: MarkRule, scaling: Optional[ScalingParams] = None,
                   tolerances: Tolerances = DEFAULT_TOLERANCES) -> LadderMeasure:
    """
    Build the marked ladder measure, rescaling spec and mark rule first when
    scaling is given. An infinite mu_plus_mass is returned as np.inf.

    Raises:
        NumericFailureError: If a mass quadrature misses tolerances.ladder_rel
    """
    if scaling is not None:
        spec = rescale(spec, scaling)
        mark = mark.on_rescaled_sizes(scaling.n)
    eta = eta_root(spec, tolerances)
    measure = spec.levy_measure
    rel = tolerances.ladder_rel

    if eta == 0:
        mu_plus = float(measure.first_moment())
    else:
        mu_plus = measure.integrate(lambda z: float(_ell(eta, z)), rel)

    if mark.is_constant:
        lam_rate = 0.0 if mark.theta == 0 else mark.theta * mu_plus
    elif not np.isfinite(mu_plus):
        # both mark families tend to 1 for large jumps
        lam_rate = np.inf
    else:
        lam_rate = measure.integrate(lambda z: float(mark.probability(z)) * float(_ell(eta, z)), rel)

    atom_part = []
    for atom in measure.atoms:
        g = float(mark.probability(atom.location))
        piece = atom.mass * float(_ell(eta, atom.location))
        atom_part.append((atom.location, 0, piece * (1.0 - g)))
        atom_part.append((atom.location, 1, piece * g))

    result = LadderMeasure(spec=spec, mark=mark, eta=eta, mu_plus_mass=mu_plus, lambda_rate=float(lam_rate),
                           kill_rate=kill_rate(spec), rel_tol=rel, atom_part=tuple(atom_part))
    logger.debug(f"calc.ladder: eta={eta:.6g} mu_plus={mu_plus:.10g} lambda={lam_rate:.10g} "
                 f"kill={result.kill_rate:.6g}")
    return result


# ==============================================================================
# 4) LIMIT PARAMETERS
# ==============================================================================

@dataclass(frozen=True)
class LimitSpec:
    """
    Limit of the rescaled family: psi(lam) = c lam + b2 lam^2 / 2
    - integral (1 - e^{-lam u} - lam (1 ^ u)) Lambda(du), plus the mark data.
    """
    drift: float
    b2: float
    limit_measure: LevyMeasureSpec
    eta: float
    theta: float
    kappa_slope: float
    rho: float
    kill: float
    assumption: Assumption

    @property
    def mark_rate(self) -> float:
        """Rate of marks carried without ladder jumps: theta under B1, rho under B2."""
        return self.theta if self.assumption is Assumption.B1 else self.rho

    def laplace_exponent(self, lam: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
        jumps = self.limit_measure.integrate(lambda u: -math.expm1(-lam * u) - lam * min(1.0, u), tolerances.quad_rel)
        return self.drift * lam + 0.5 * self.b2 * lam * lam - jumps

    def phi(self, a: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
        return _invert(lambda lam: self.laplace_exponent(lam, tolerances), self.eta, a, tolerances)

    def scale_function(self, x):
        """Closed-form W for a jump-free limit."""
        if not self.limit_measure.is_zero:
            raise UnsupportedFamilyError("closed-form limit W needs a jump-free limit")
        x = np.asarray(x, dtype=float)
        if self.b2 == 0:
            if self.drift <= 0:
                raise UnsupportedFamilyError("degenerate limit: b2 = 0 and c <= 0")
            return np.full(x.shape, 1.0 / self.drift)
        if self.drift == 0:
            return 2.0 * x / self.b2
        return -np.expm1(-2.0 * self.drift * x / self.b2) / self.drift

    def describe(self) -> dict:
        return {
            "c": self.drift,
            "b2": self.b2,
            "eta": self.eta,
            "theta": self.theta,
            "kappa_slope": self.kappa_slope,
            "rho": self.rho,
            "kill": self.kill,
            "assumption": self.assumption.value,
            "limit_measure": self.limit_measure.describe(),
        }


def _sequence_limit(term: Callable[[int], float], label: str) -> float:
    previous = None
    for power in LIMIT_SEQUENCE_POWERS:
        value = float(term(2 ** power))
        if previous is not None and abs(value - previous) <= LIMIT_SEQUENCE_RTOL * max(1.0, abs(value)):
            return value
        previous = value
    raise NumericFailureError(f"{label} does not stabilise along n = 2^k", achieved_error=np.nan)


def limit_parameters(preset: Preset, tolerances: Tolerances = DEFAULT_TOLERANCES) -> LimitSpec:
    """
    Limit parameters of a registered family under a mark assumption.

    The preset carries both inputs: preset.member(n) is the (ProcessSpec,
    MarkRule, ScalingParams) sequence and preset.assumption selects B1 or B2.
    Use Preset.with_assumption to switch the mark regime of a family.

    c, b2 and the limit Levy measure are the family's closed forms; theta
    (B1) and kappa (B2) are limits along preset.mark_rule(n).

    Raises:
        UnsupportedFamilyError: If the family is not registered
    """
    family = get_family(preset.family.family_id)
    if family != preset.family:
        raise UnsupportedFamilyError(f"family {family.family_id!r} differs from the registered definition")

    measure = family.limit_measure
    slope = family.limit_drift - measure.integrate(lambda u: max(u - 1.0, 0.0), tolerances.quad_rel)

    def psi(lam):
        jumps = measure.integrate(lambda u: -math.expm1(-lam * u) - lam * min(1.0, u), tolerances.quad_rel)
        return family.limit_drift * lam + 0.5 * family.limit_b2 * lam * lam - jumps

    eta = _largest_root(psi, tolerances.eta_abs) if slope < 0 else 0.0
    kill = float(slope) if slope > 0 else 0.0

    theta = kappa = 0.0
    if preset.assumption is Assumption.B1:
        def scaled_theta(n):
            rule = preset.mark_rule(n)
            return family.scaling(n).alpha * rule.theta
        theta = _sequence_limit(scaled_theta, "(d_n / n) theta_n")
    else:
        kappa = _sequence_limit(lambda n: preset.mark_rule(n).on_rescaled_sizes(n).slope_at_zero, "kappa")

    limit = LimitSpec(drift=family.limit_drift, b2=family.limit_b2, limit_measure=measure, eta=eta,
                      theta=theta, kappa_slope=kappa, rho=kappa * family.limit_b2, kill=kill,
                      assumption=preset.assumption)
    logger.debug(f"calc.limit: {preset.preset_id} -> {limit.describe()}")
    return limit
