"""Continuation-value estimation J(x, R) = E^x[d(rho_R) f(X_rho)].

Two routes are provided and kept strictly independent so that one can check
the other: Monte Carlo over grid cells via the path engine, and exact
quadrature oracles for the rotated-barrier geometry where the hitting time
has a closed-form Laplace transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dynamics
from .discounting import DiscountCurve, HyperbolicDiscount, laplace_mixture_of
from .dynamics import (BrownianMotion, ProcessModel, ball_exit_lt,
                       discounted_exit_factor, first_passage_batch,
                       two_sided_barrier_lt)
from .parallel import indexed_map
from .regions import Grid, PolicyRegion

SQRT2 = math.sqrt(2.0)

# rotation by pi/4 used throughout the planar barrier study
ROTATION = np.array([[1.0 / SQRT2, 1.0 / SQRT2],
                     [-1.0 / SQRT2, 1.0 / SQRT2]])


class PayoffField:
    """Nonnegative continuous payoff with a known supremum."""

    def __init__(self, kind: str, fn: Callable[[np.ndarray], np.ndarray], sup: float,
                 params: Optional[dict] = None):
        self.kind = kind
        self.fn = fn
        self.sup = float(sup)
        self.params = dict(params or {})

    def eval(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.asarray(self.fn(pts), float)
        return out

    def __call__(self, points):
        return self.eval(points)

    def __repr__(self):
        return f"PayoffField({self.kind}, {self.params})"


def butterfly_payoff(a: float) -> PayoffField:
    """f(x1, x2) = |x1 - x2| clipped at a: the long-spread payoff."""
    if a <= 0:
        raise ValueError("cap must be positive")
    return PayoffField("butterfly", lambda p: np.minimum(np.abs(p[:, 0] - p[:, 1]), a),
                       sup=a, params={"a": a})


def put_payoff(strike: float) -> PayoffField:
    if strike <= 0:
        raise ValueError("strike must be positive")
    return PayoffField("put", lambda p: np.maximum(strike - p[:, 0], 0.0),
                       sup=np.inf, params={"strike": strike})


def constant_payoff(level: float) -> PayoffField:
    if level < 0:
        raise ValueError("payoff must be nonnegative")
    return PayoffField("constant", lambda p: np.full(len(p), float(level)),
                       sup=level, params={"level": level})


def inv_quad_payoff() -> PayoffField:
    """f(x) = 1 / (1 + |x|^2): smooth, bounded by 1, varying in every coordinate."""
    return PayoffField("inv_quad", lambda p: 1.0 / (1.0 + np.sum(p * p, axis=1)),
                       sup=1.0, params={})


def grid_tabulated_payoff(grid: Grid, values: np.ndarray) -> PayoffField:
    vals = np.asarray(values, float)
    if vals.shape != tuple(grid.counts):
        raise ValueError("value table must match the grid")
    if np.any(vals < 0):
        raise ValueError("payoff must be nonnegative")

    def fn(pts):
        idx, inside = grid.cell_of(pts)
        out = np.zeros(len(pts))
        out[inside] = vals[tuple(idx[inside].T)]
        return out

    return PayoffField("grid_tabulated", fn, sup=float(vals.max()), params={})


_NAMED = {
    "butterfly": (butterfly_payoff, ("a",)),
    "put": (put_payoff, ("strike",)),
    "constant": (constant_payoff, ("level",)),
    "inv_quad": (inv_quad_payoff, ()),
}


def named_payoff(name: str, **params) -> PayoffField:
    if name not in _NAMED:
        raise ValueError(f"unknown payoff preset {name!r}")
    fn, argnames = _NAMED[name]
    return fn(**{k: params[k] for k in argnames})


@dataclass(frozen=True)
class ValueField:
    """Per-cell estimates of J(., R) with their standard errors."""

    grid: Grid
    values: np.ndarray
    std_errs: np.ndarray
    truncation_bound: np.ndarray
    n_paths: int

    def __post_init__(self):
        for name in ("values", "std_errs", "truncation_bound"):
            arr = np.asarray(getattr(self, name), float)
            if arr.shape != tuple(self.grid.counts):
                raise ValueError(f"{name} shape does not match the grid")
            object.__setattr__(self, name, arr)
        if np.any(self.std_errs < 0):
            raise ValueError("standard errors must be nonnegative")
        if np.any(self.values < -1e-12):
            raise ValueError("continuation values must be nonnegative")

    def median_std_err(self) -> float:
        return float(np.median(self.std_errs))

    def to_csv(self, path) -> None:
        from .reports import write_value_field_csv

        write_value_field_csv(path, self)


def _cell_stream(seed: int, cell_index: int) -> np.random.Generator:
    # common random numbers: the stream depends on (seed, cell) only, never on
    # the region, so fields for different policies are positively coupled
    key = np.array([seed % (1 << 64), (0xC311 + cell_index) % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class CellSimulationError(RuntimeError):
    def __init__(self, cell, cause):
        super().__init__(f"simulation failed at cell {cell}: {cause}")
        self.cell = tuple(cell)


def estimate_J_mc(model: ProcessModel, R: PolicyRegion, f: PayoffField,
                  delta: DiscountCurve, grid: Grid, n_paths: int, seed: int, *,
                  dt: float, t_tail: float, bridge: bool = True,
                  threads: int = 1, group_size: int = 32) -> ValueField:
    """Monte Carlo field of J(., R) over the grid cells.

    Every cell owns a private RNG stream keyed by (seed, cell), so values are
    identical whatever the grouping or thread count, and fields for different
    policies share their randomness cell by cell.  Paths that fail to hit by
    t_tail contribute zero; the omission is covered by the reported one-sided
    truncation bound d(t_tail) * sup f.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths per cell")
    probe = R.probe()
    centers = grid.centers()
    n_cells = len(centers)
    shape = tuple(grid.counts)
    f_sup = f.sup if np.isfinite(f.sup) else float(f.eval(centers).max())
    trunc = float(delta.eval(t_tail)) * f_sup
    tasks = [(g0, min(g0 + group_size, n_cells))
             for g0 in range(0, n_cells, group_size)]

    def values_of(res, count):
        vals = np.zeros(count * n_paths)
        ok = np.isfinite(res.hit_times)
        if ok.any():
            vals[ok] = delta.eval(res.hit_times[ok]) * f.eval(res.hit_states[ok])
        vals = vals.reshape(count, n_paths)
        return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(n_paths)

    def run_group(task):
        a, b = task
        stream = lambda local: _cell_stream(seed, a + local)
        try:
            res = dynamics.first_passage_cells(model, centers[a:b], probe, dt=dt,
                                               horizon=t_tail, n_paths=n_paths,
                                               stream_for=stream, bridge=bridge,
                                               group_size=b - a)
        except dynamics.SimulationBlowupError:
            # rerun one cell at a time to attribute the failure
            for local in range(b - a):
                try:
                    dynamics.first_passage_cells(model, centers[a + local:a + local + 1],
                                                 probe, dt=dt, horizon=t_tail,
                                                 n_paths=n_paths,
                                                 stream_for=lambda _=0, lo=local: _cell_stream(seed, a + lo),
                                                 bridge=bridge, group_size=1)
                except dynamics.SimulationBlowupError as exc:
                    raise CellSimulationError(np.unravel_index(a + local, shape),
                                              exc) from exc
            raise
        return values_of(res, b - a)

    results = indexed_map(run_group, tasks, threads=threads)
    values = np.concatenate([v for v, _ in results]).reshape(shape)
    ses = np.concatenate([s for _, s in results]).reshape(shape)
    return ValueField(grid=grid, values=np.maximum(values, 0.0), std_errs=ses,
                      truncation_bound=np.full(shape, trunc), n_paths=n_paths)


# ---------------------------------------------------------------------------
# Quadrature oracle for the rotated-barrier geometry

class CapActiveError(ValueError):
    """The payoff cap binds at the barrier: the closed form does not apply."""


def quadrature_J_barrier(y2: float, c: float, beta: float, a: float,
                         quad_tol: float = 1e-9) -> float:
    """Exact continuation value for the two-sided barrier in rotated coordinates.

    Returns sqrt(2) * c * E[ d(tau) ] for tau the exit time of a 1-d Brownian
    motion from (-c, c) started at y2, under hyperbolic discounting with rate
    beta.  Valid while the payoff at the barrier is on its linear branch,
    i.e. c <= a / sqrt(2).
    """
    if c <= 0:
        raise ValueError("barrier must be positive")
    if abs(y2) > c:
        raise ValueError("start must satisfy |y2| <= c")
    if c > a / SQRT2 + 1e-12:
        raise CapActiveError("cap active at the barrier; fall back to Monte Carlo")
    mixture = laplace_mixture_of(HyperbolicDiscount(beta), quad_tol=quad_tol)
    factor = discounted_exit_factor(mixture, lambda lam: two_sided_barrier_lt(lam, c, y2),
                                    quad_tol=quad_tol)
    return SQRT2 * c * factor


def barrier_quadrature_field(grid: Grid, b: float, beta: float, a: float) -> ValueField:
    """Quadrature-backed field of J(., R_b) on the plane.

    In-region cells carry J = f (hitting is immediate there); off-region cells
    use the exact barrier value at their rotated coordinate.
    """
    centers = grid.centers()
    f = butterfly_payoff(a)
    values = f.eval(centers).copy()
    if b > 0:
        c = b / SQRT2
        y2 = (centers[:, 1] - centers[:, 0]) / SQRT2
        off = np.abs(y2) < c
        if off.any():
            uniq, inverse = np.unique(np.round(np.abs(y2[off]), 14), return_inverse=True)
            uniq = np.minimum(uniq, c)   # guard cells sitting on the boundary
            jvals = np.array([quadrature_J_barrier(float(u), c, beta, a) for u in uniq])
            values[off] = jvals[inverse]
    shape = tuple(grid.counts)
    return ValueField(grid=grid, values=values.reshape(shape),
                      std_errs=np.zeros(shape), truncation_bound=np.zeros(shape),
                      n_paths=0)


@dataclass(frozen=True)
class RotationCheck:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def consistent(self) -> bool:
        se = math.hypot(self.lhs_se, self.rhs_se)
        return abs(self.lhs - self.rhs) <= 3.0 * max(se, 1e-12)


def rotation_consistency(x, R: PolicyRegion, f: PayoffField, delta: DiscountCurve, *,
                         n_paths: int, seed: int, dt: float, t_tail: float) -> RotationCheck:
    """Compare J at x in original coordinates against the rotated problem.

    The right-hand side simulates from Mx with the image region MR and the
    pulled-back payoff f(M^T y); for planar Brownian motion the two must agree
    within Monte Carlo error.
    """
    if R.analytic is None:
        raise ValueError("rotation check needs an analytic region")
    x = np.asarray(x, float)
    model = BrownianMotion(2)

    def mc(start, region, payoff_fn, stream_id):
        res = first_passage_batch(model, start, region.probe(), dt=dt, horizon=t_tail,
                                  rng=dynamics.RngStream(seed, stream_id).generator(),
                                  n_paths=n_paths)
        vals = np.zeros(n_paths)
        ok = np.isfinite(res.hit_times)
        if ok.any():
            vals[ok] = delta.eval(res.hit_times[ok]) * payoff_fn(res.hit_states[ok])
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))

    lhs, lhs_se = mc(x, R, f.eval, 0)
    rotated = PolicyRegion.from_analytic(R.analytic.transform(ROTATION),
                                         provenance=f"rotated({R.provenance})")
    pulled_back = lambda pts: f.eval(pts @ ROTATION)  # f(M^T y) rowwise
    rhs, rhs_se = mc(ROTATION @ x, rotated, pulled_back, 1)
    return RotationCheck(lhs=lhs, lhs_se=lhs_se, rhs=rhs, rhs_se=rhs_se)


# ---------------------------------------------------------------------------
# Ball mean-value bounds in three dimensions

@dataclass(frozen=True)
class MeanValueReport:
    lower_ok: bool
    upper_ok: bool
    k_r: float
    k_r_mc: float
    k_r_mc_se: float
    j_center: float
    j_center_se: float
    ball_avg: float
    ball_avg_se: float


def mean_value_bounds_check(x, r: float, stop_region: PolicyRegion, f: PayoffField,
                            delta: HyperbolicDiscount, n_paths: int, *, seed: int,
                            dt: float, t_tail: float, dt_ball: Optional[float] = None,
                            n_paths_k: Optional[int] = None) -> MeanValueReport:
    """Check the discounted mean-value inequalities on a ball inside the domain.

    k(r) * avg_B J <= J(x) <= avg_B J, with k(r) = E[d(ball exit time)]
    computed by exact quadrature, J(x) and the ball average by Monte Carlo.
    All inequalities are asserted within 3 combined standard errors.
    """
    x = np.asarray(x, float)
    if x.shape != (3,):
        raise ValueError("the ball bounds are a three-dimensional check")
    model = BrownianMotion(3)
    probe = stop_region.probe()
    if bool(probe.membership(x[None])[0]):
        raise ValueError("center must lie in the open continuation domain")
    sphere = x + r * _unit_sphere_points(256)
    if probe.membership(sphere).any():
        raise ValueError("ball is not contained in the continuation domain")

    mixture = laplace_mixture_of(delta)
    k_r = discounted_exit_factor(mixture, lambda lam: ball_exit_lt(lam, r))

    def discounted_values(res):
        vals = np.zeros(len(res.hit_times))
        ok = np.isfinite(res.hit_times)
        if ok.any():
            vals[ok] = delta.eval(res.hit_times[ok]) * f.eval(res.hit_states[ok])
        return vals

    res_center = first_passage_batch(model, x, probe, dt=dt, horizon=t_tail,
                                     rng=dynamics.RngStream(seed, 0).generator(),
                                     n_paths=n_paths)
    v_center = discounted_values(res_center)
    j_center = float(v_center.mean())
    j_center_se = float(v_center.std(ddof=1) / math.sqrt(n_paths))

    gen = dynamics.RngStream(seed, 1).generator()
    dirs = gen.standard_normal((n_paths, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = r * gen.random(n_paths) ** (1.0 / 3.0)
    starts = x + dirs * radii[:, None]
    res_ball = first_passage_batch(model, starts, probe, dt=dt, horizon=t_tail,
                                   rng=dynamics.RngStream(seed, 2).generator(),
                                   n_paths=n_paths)
    v_ball = discounted_values(res_ball)
    ball_avg = float(v_ball.mean())
    ball_avg_se = float(v_ball.std(ddof=1) / math.sqrt(n_paths))

    # cross-check of k(r) against straight simulation of the ball exit
    nk = n_paths_k or n_paths
    ball_probe = PolicyRegion.from_analytic(
        _ball_complement(x, r), provenance="ball-exit").probe()
    res_k = first_passage_batch(model, x, ball_probe,
                                dt=dt_ball if dt_ball is not None else r * r / 400.0,
                                horizon=max(20.0 * r * r, 1.0),
                                rng=dynamics.RngStream(seed, 3).generator(), n_paths=nk)
    vk = np.where(np.isfinite(res_k.hit_times), delta.eval(res_k.hit_times), 0.0)
    k_r_mc = float(vk.mean())
    k_r_mc_se = float(vk.std(ddof=1) / math.sqrt(nk))

    lower_se = math.hypot(k_r * ball_avg_se, j_center_se)
    upper_se = math.hypot(ball_avg_se, j_center_se)
    return MeanValueReport(
        lower_ok=bool(k_r * ball_avg <= j_center + 3.0 * lower_se),
        upper_ok=bool(j_center <= ball_avg + 3.0 * upper_se),
        k_r=k_r, k_r_mc=k_r_mc, k_r_mc_se=k_r_mc_se,
        j_center=j_center, j_center_se=j_center_se,
        ball_avg=ball_avg, ball_avg_se=ball_avg_se)


def _unit_sphere_points(n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=np.array([7, 7], dtype=np.uint64)))
    pts = gen.standard_normal((n, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _ball_complement(center, r):
    from .regions import Ball

    return Ball(center, r, inside=False)
