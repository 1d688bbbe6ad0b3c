"""Discount curves, the log sub-additivity check, and exponential-mixture quadrature.

A discount curve is a continuous nonincreasing function d(t) with d(0) = 1
and d(t) -> 0.  Curves whose reciprocal structure is completely monotone
(exponential, hyperbolic) admit an exponential-mixture representation

    d(t) = integral_0^inf  w(u) * exp(-u * t) du,

which turns expectations E[d(tau)] of hitting times into weighted sums of
Laplace transforms E[exp(-u * tau)].  That is the backbone of every exact
oracle in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

QUAD_TOL = 1e-9

# Trapezoid rule on s = exp(v).  The integrand of the mixture integral decays
# single-exponentially as v -> -inf and double-exponentially as v -> +inf, so
# a fixed window with geometrically refined spacing converges geometrically.
_V_LO = -34.0
_V_HI = 4.2
_H0 = 0.4
_MAX_LEVEL = 6


class DiscountCurve:
    """Base class; subclasses implement `_eval_finite` on nonnegative floats."""

    def eval(self, t):
        """Evaluate d(t).  Accepts scalars or arrays; t = +inf gives 0."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0):
            raise ValueError("discount curve evaluated at negative time")
        out = np.where(np.isinf(arr), 0.0, self._eval_finite(np.where(np.isinf(arr), 0.0, arr)))
        return float(out) if np.isscalar(t) or arr.ndim == 0 else out

    def __call__(self, t):
        return self.eval(t)

    def _eval_finite(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialDiscount(DiscountCurve):
    """d(t) = exp(-alpha * t), the time-consistent benchmark."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def _eval_finite(self, t):
        return np.exp(-self.alpha * t)


@dataclass(frozen=True)
class HyperbolicDiscount(DiscountCurve):
    """d(t) = 1 / (1 + beta * t), the standard decreasing-impatience curve."""

    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def _eval_finite(self, t):
        return 1.0 / (1.0 + self.beta * t)


class TabulatedDiscount(DiscountCurve):
    """Curve given by knots (t_i, d_i); log-linear between knots, clamped past the end.

    Log-linear interpolation preserves positivity and monotonicity; segments
    that touch zero fall back to linear interpolation.
    """

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("need matching 1-d arrays with at least two knots")
        if times[0] != 0.0 or values[0] != 1.0:
            raise ValueError("table must start at (0, 1)")
        if np.any(np.diff(times) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("table values must lie in [0, 1]")
        if np.any(np.diff(values) > 0):
            raise ValueError("table values must be nonincreasing")
        self.times = times
        self.values = values

    def _eval_finite(self, t):
        t = np.minimum(t, self.times[-1])
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        v0, v1 = self.values[idx], self.values[idx + 1]
        frac = np.where(t1 > t0, (t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        lin = v0 + frac * (v1 - v0)
        pos = (v0 > 0) & (v1 > 0)
        with np.errstate(divide="ignore"):
            logv = np.exp(np.log(np.where(v0 > 0, v0, 1.0))
                          + frac * (np.log(np.where(v1 > 0, v1, 1.0))
                                    - np.log(np.where(v0 > 0, v0, 1.0))))
        return np.where(pos, logv, lin)


@dataclass(frozen=True)
class DIReport:
    """Result of a decreasing-impatience sweep over a time grid."""

    holds: bool
    worst_violation: float
    witness: tuple[float, float]


def check_decreasing_impatience(curve: DiscountCurve, time_grid, tol: float = 1e-12) -> DIReport:
    """Check d(s) * d(t) <= d(s + t) + tol over all pairs from the grid."""
    grid = np.asarray(time_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("time grid must be nonempty")
    if np.any(grid <= 0):
        raise ValueError("time grid entries must be strictly positive")
    vals = curve.eval(grid)
    prod = np.outer(vals, vals)
    sums = curve.eval(grid[:, None] + grid[None, :])
    gap = prod - sums
    i, j = np.unravel_index(np.argmax(gap), gap.shape)
    worst = float(gap[i, j])
    return DIReport(holds=worst <= tol, worst_violation=worst,
                    witness=(float(grid[i]), float(grid[j])))


def _trap_nodes(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights in s-space for integral_0^inf exp(-s) g(s) ds."""
    h = _H0 / (2 ** level)
    v = np.arange(_V_LO, _V_HI + 0.5 * h, h)
    s = np.exp(v)
    return s, h * np.exp(-s) * s


@dataclass(frozen=True)
class LaplaceMixture:
    """Discrete mixture d(t) ~= sum_i weights[i] * exp(-nodes[i] * t).

    ``weight_density`` is the continuous mixing density in u when one exists;
    a pure point mass (exponential curve) carries ``weight_density=None``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    weight_density: Optional[Callable[[np.ndarray], np.ndarray]]
    level: int = 0
    _refine: Optional[Callable[[int], "LaplaceMixture"]] = field(default=None, repr=False)

    @property
    def is_point_mass(self) -> bool:
        return self.weight_density is None

    def reconstruct(self, t):
        t = np.asarray(t, dtype=float)
        return (self.weights[None, :] * np.exp(-np.outer(t, self.nodes))).sum(axis=1)

    def expectation(self, transform) -> float:
        """sum_i w_i * transform(u_i); exact for a point mass."""
        if self.is_point_mass:
            return float(transform(float(self.nodes[0])))
        return float(np.sum(self.weights * np.asarray(transform(self.nodes), dtype=float)))

    def refined(self) -> "LaplaceMixture":
        if self._refine is None:
            return self
        return self._refine(self.level + 1)


class UnsupportedCurveError(ValueError):
    """Raised for curves with no available mixture representation."""


class QuadratureError(RuntimeError):
    """Raised when node doubling fails to converge within the level cap."""


def _hyperbolic_mixture(beta: float, level: int) -> LaplaceMixture:
    s, w = _trap_nodes(level)
    density = lambda u: np.exp(-np.asarray(u) / beta) / beta
    return LaplaceMixture(nodes=beta * s, weights=w, weight_density=density, level=level,
                          _refine=lambda lv: _hyperbolic_mixture(beta, lv))


def laplace_mixture_of(curve: DiscountCurve, quad_tol: float = QUAD_TOL,
                       t_tail: float = 100.0) -> LaplaceMixture:
    """Build the exponential-mixture representation of a curve.

    The node count is refined until the reconstructed curve matches
    ``curve.eval`` within ``quad_tol`` on a test grid covering [0, t_tail].
    Tabulated curves are rejected: no representation is available.
    """
    if isinstance(curve, ExponentialDiscount):
        return LaplaceMixture(nodes=np.array([curve.alpha]), weights=np.array([1.0]),
                              weight_density=None)
    if isinstance(curve, HyperbolicDiscount):
        tgrid = np.concatenate([[0.0], np.geomspace(1e-4, max(t_tail, 1.0), 160)])
        exact = curve.eval(tgrid)
        for level in range(_MAX_LEVEL + 1):
            mix = _hyperbolic_mixture(curve.beta, level)
            if np.max(np.abs(mix.reconstruct(tgrid) - exact)) < quad_tol:
                return mix
        raise QuadratureError("mixture reconstruction did not reach quad_tol")
    raise UnsupportedCurveError(f"no mixture representation for {type(curve).__name__}")


def exp_weighted_integral(fn, quad_tol: float = QUAD_TOL, max_level: int = _MAX_LEVEL) -> float:
    """integral_0^inf exp(-s) fn(s) ds with node doubling until agreement."""
    s, w = _trap_nodes(0)
    est = float(np.sum(w * np.asarray(fn(s), float)))
    for level in range(1, max_level + 1):
        s, w = _trap_nodes(level)
        nxt = float(np.sum(w * np.asarray(fn(s), float)))
        if abs(nxt - est) <= quad_tol:
            return nxt
        est = nxt
    raise QuadratureError("exp-weighted quadrature did not converge")


def eval_discount(curve: DiscountCurve, t):
    """Functional alias for curve.eval, matching the rest of the module API."""
    return curve.eval(t)


def make_discount(kind: str, **kwargs) -> DiscountCurve:
    """Factory used by config loading: kind in {exponential, hyperbolic, tabulated}."""
    kind = kind.lower()
    if kind == "exponential":
        return ExponentialDiscount(alpha=float(kwargs["alpha"]))
    if kind == "hyperbolic":
        return HyperbolicDiscount(beta=float(kwargs["beta"]))
    if kind == "tabulated":
        return TabulatedDiscount(kwargs["times"], kwargs["values"])
    raise ValueError(f"unknown discount kind {kind!r}")


def tail_horizon(curve: DiscountCurve, payoff_sup: float, tail_tol: float = 1e-4,
                 t_max: float = 1e7) -> float:
    """Smallest horizon T with d(T) * payoff_sup below tail_tol (bisection on a log grid)."""
    if payoff_sup <= 0:
        return 1.0
    target = tail_tol / payoff_sup
    lo, hi = 1e-6, 1.0
    while curve.eval(hi) > target:
        hi *= 2.0
        if hi > t_max:
            return t_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if curve.eval(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def mixture_expectation(curve: DiscountCurve, transform, quad_tol: float = QUAD_TOL) -> float:
    """E[d(tau)] for a hitting time tau given its Laplace transform.

    Convenience wrapper: builds the mixture and runs the adaptive doubling in
    one call.  See ``dynamics.discounted_exit_factor`` for the primitive.
    """
    from .dynamics import discounted_exit_factor

    return discounted_exit_factor(laplace_mixture_of(curve), transform, quad_tol=quad_tol)
