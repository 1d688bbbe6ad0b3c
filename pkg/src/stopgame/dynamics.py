"""Markov process models, first-passage simulation, and hitting-time transforms.

Paths are advanced by Euler-Maruyama steps.  Between consecutive samples a
Brownian-bridge crossing test is applied against each analytic boundary face
of the stopping region, which removes the order-sqrt(dt) overestimation of
hitting times that plain discretization produces; mask-only regions get no
correction and therefore need a finer step.

Every path owns a counter-based RNG stream, so results are bit-for-bit
reproducible for a fixed (seed, stream_id) and independent of how work is
scheduled across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .discounting import LaplaceMixture, QuadratureError
from .regions import RegionProbe


class SimulationBlowupError(RuntimeError):
    """Diffusion produced a non-finite state; carries the last valid time."""

    def __init__(self, last_valid_time: float):
        super().__init__(f"non-finite state after t={last_valid_time:g}")
        self.last_valid_time = last_valid_time


@dataclass(frozen=True)
class BrownianMotion:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")


@dataclass(frozen=True)
class ItoDiffusion:
    """dX = b(X) dt + sigma(X) dB with coefficients re-evaluated every step."""

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")


ProcessModel = BrownianMotion | ItoDiffusion


def ito_preset(name: str, dim: int) -> ItoDiffusion:
    """Named drift/diffusion pairs loadable from config (no custom code)."""
    if name == "ou":
        return ItoDiffusion(dim=dim, drift=lambda x: -x,
                            diffusion=lambda x: np.broadcast_to(np.eye(dim), (len(x), dim, dim)))
    if name == "contracting":
        return ItoDiffusion(dim=dim, drift=lambda x: -0.5 * x,
                            diffusion=lambda x: 0.8 * np.broadcast_to(np.eye(dim), (len(x), dim, dim)))
    raise ValueError(f"unknown diffusion preset {name!r}")


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: (seed, stream_id) fully determines the draws."""

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % (1 << 64), self.stream_id % (1 << 64)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PathSegment:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("path times must start at 0 and strictly increase")
        if len(t) != len(self.states):
            raise ValueError("times and states must have equal length")


@dataclass(frozen=True)
class SimulationResult:
    hit: bool
    hit_time: float
    hit_state: Optional[np.ndarray]
    path: PathSegment


@dataclass(frozen=True)
class BatchResult:
    hit_times: np.ndarray   # +inf where the horizon was reached first
    hit_states: np.ndarray


def _propose(model: ProcessModel, x: np.ndarray, z: np.ndarray, dt: float) -> np.ndarray:
    if isinstance(model, BrownianMotion):
        return x + math.sqrt(dt) * z
    drift = np.asarray(model.drift(x), float)
    sig = np.asarray(model.diffusion(x), float)
    if sig.ndim == 2:  # constant matrix
        dw = z @ sig.T
    else:
        dw = np.einsum("nij,nj->ni", sig, z)
    return x + drift * dt + math.sqrt(dt) * dw


def _normal_variances(model: ProcessModel, x: np.ndarray, normals: np.ndarray,
                      dt: float) -> np.ndarray:
    """Variance of the step projected on each face normal (per path)."""
    if isinstance(model, BrownianMotion):
        return np.full(len(x), dt)
    sig = np.asarray(model.diffusion(x), float)
    if sig.ndim == 2:
        proj = normals @ sig
    else:
        proj = np.einsum("ni,nij->nj", normals, sig)
    return dt * np.sum(proj * proj, axis=-1)


def _step_hits(model, probe: RegionProbe, x: np.ndarray, xn: np.ndarray, dt: float,
               uniforms: Optional[np.ndarray], bridge: bool):
    """Return (theta, point) of the earliest detected crossing in this step.

    theta is the within-step fraction in (0, 1]; +inf when nothing hit.
    Endpoint membership counts as theta = 1; a deterministic face crossing
    interpolates the segment; a fired bridge test lands at theta = 1/2.
    """
    m, d = x.shape
    theta = np.full(m, np.inf)
    point = np.zeros((m, d))

    inside = probe.membership(xn)
    if inside.any():
        theta[inside] = 1.0
        point[inside] = xn[inside]

    faces = probe.boundary_primitives
    for j, face_ in enumerate(faces):
        d1 = face_.outside_distance(x)
        d2 = face_.outside_distance(xn)
        cand_theta = np.full(m, np.inf)

        det = (d1 >= 0) & (d2 < 0)
        if det.any():
            cand_theta[det] = d1[det] / (d1[det] - d2[det])
        if bridge and uniforms is not None:
            both = (d1 >= 0) & (d2 >= 0)
            if both.any():
                var = _normal_variances(model, x, face_.normals_at(x), dt)
                with np.errstate(over="ignore"):
                    p = np.exp(-2.0 * d1[both] * d2[both] / np.maximum(var[both], 1e-300))
                fire = uniforms[both, j] < p
                sel = np.where(both)[0][fire]
                cand_theta[sel] = np.minimum(cand_theta[sel], 0.5)

        better = cand_theta < theta
        if better.any():
            seg = x[better] + cand_theta[better, None] * (xn[better] - x[better])
            pts = face_.project(seg)
            ok = probe.membership(pts)
            rows = np.where(better)[0][ok]
            theta[rows] = cand_theta[better][ok]
            point[rows] = pts[ok]
    return theta, point


def first_passage_batch(model: ProcessModel, x0, probe: RegionProbe, *, dt: float,
                        horizon: float, rng: np.random.Generator, n_paths: int,
                        bridge: bool = True) -> BatchResult:
    """Simulate n_paths from x0 until they hit the region or reach the horizon.

    The hitting time convention is rho = inf{t > 0 : X_t in region}: the
    starting point itself is never tested, only the path strictly after 0.
    Paths that survive the horizon report hit_time = +inf.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    x0 = np.asarray(x0, float)
    d = model.dim
    if x0.ndim == 1:
        x = np.broadcast_to(x0, (n_paths, d)).copy()
    else:
        if len(x0) != n_paths:
            raise ValueError("x0 batch size disagrees with n_paths")
        x = x0.astype(float).copy()

    hit_times = np.full(n_paths, np.inf)
    hit_states = np.full((n_paths, d), np.nan)
    ids = np.arange(n_paths)
    # a first-step hit from a point already inside the region means the start
    # was (numerically) regular: the true hitting state is the start itself,
    # which avoids an order-sqrt(dt) payoff bias at kinks
    start_inside = np.asarray(probe.membership(x), bool)
    n_faces = len(probe.boundary_primitives)
    n_steps = max(1, math.ceil(horizon / dt - 1e-12))
    t = 0.0
    for k in range(n_steps):
        if ids.size == 0:
            break
        step_dt = min(dt, max(horizon - t, 1e-12))
        z = rng.standard_normal((ids.size, d))
        xn = _propose(model, x, z, step_dt)
        if not np.all(np.isfinite(xn)):
            raise SimulationBlowupError(t)
        uniforms = rng.random((ids.size, n_faces)) if (bridge and n_faces) else None
        theta, point = _step_hits(model, probe, x, xn, step_dt, uniforms, bridge)
        if k == 0:
            regular = start_inside & np.isfinite(theta)
            if regular.any():
                point[regular] = x[regular]
        done = np.isfinite(theta)
        if done.any():
            rows = ids[done]
            hit_times[rows] = t + theta[done] * step_dt
            hit_states[rows] = point[done]
            ids = ids[~done]
            x = xn[~done]
        else:
            x = xn
        t += step_dt
    return BatchResult(hit_times=hit_times, hit_states=hit_states)


def first_passage_cells(model: ProcessModel, starts: np.ndarray, probe: RegionProbe, *,
                        dt: float, horizon: float, n_paths: int,
                        stream_for, bridge: bool = True,
                        group_size: int = 32, chunk_steps: int = 64) -> BatchResult:
    """First passage from many start points, one private RNG stream per start.

    Draws are pre-generated per start in fixed chunks, so each start's result
    depends only on its own stream: regrouping or threading cannot change any
    number.  Stepping happens jointly across a group of starts, which keeps
    the per-step array work large enough to amortize.

    ``stream_for(i)`` must return the Generator for start index i.  Returns
    hit times/states shaped (n_starts * n_paths,) grouped by start.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    starts = np.atleast_2d(np.asarray(starts, float))
    n_cells, d = starts.shape
    total = n_cells * n_paths
    hit_times = np.full(total, np.inf)
    hit_states = np.full((total, d), np.nan)
    n_faces = len(probe.boundary_primitives)
    n_steps = max(1, math.ceil(horizon / dt - 1e-12))

    for g0 in range(0, n_cells, group_size):
        cells = list(range(g0, min(g0 + group_size, n_cells)))
        gens = [stream_for(ci) for ci in cells]
        x = np.repeat(starts[cells], n_paths, axis=0)
        rows = np.concatenate([np.arange(n_paths) + ci * n_paths for ci in cells])
        row_cell = np.repeat(np.arange(len(cells)), n_paths)
        start_inside = np.asarray(probe.membership(x), bool)
        step = 0
        t = 0.0
        while rows.size and step < n_steps:
            K = min(chunk_steps, n_steps - step)
            m = rows.size
            z = np.empty((m, K, d))
            u = np.empty((m, K, n_faces)) if (bridge and n_faces) else None
            for local, gen in enumerate(gens):
                sel = row_cell == local
                cnt = int(sel.sum())
                if cnt == 0:
                    continue
                z[sel] = gen.standard_normal((cnt, K, d))
                if u is not None:
                    u[sel] = gen.random((cnt, K, n_faces))
            alive = np.ones(m, bool)
            for k in range(K):
                step_dt = min(dt, max(horizon - t, 1e-12))
                xn = _propose(model, x, z[:, k, :], step_dt)
                if not np.all(np.isfinite(xn[alive])):
                    raise SimulationBlowupError(t)
                xn = np.where(alive[:, None], xn, x)   # freeze finished rows
                theta, point = _step_hits(model, probe, x, xn, step_dt,
                                          u[:, k, :] if u is not None else None,
                                          bridge)
                if step + k == 0:
                    regular = start_inside & np.isfinite(theta)
                    if regular.any():
                        point[regular] = x[regular]
                done = alive & np.isfinite(theta)
                if done.any():
                    hit_times[rows[done]] = t + theta[done] * step_dt
                    hit_states[rows[done]] = point[done]
                    alive &= ~done
                x = xn
                t += step_dt
                if not alive.any():
                    break
            keep = alive
            rows, row_cell, x = rows[keep], row_cell[keep], x[keep]
            start_inside = start_inside[keep]
            step += K
    return BatchResult(hit_times=hit_times, hit_states=hit_states)


def simulate_until(model: ProcessModel, x0, stop: RegionProbe, horizon: float,
                   rng: RngStream, *, dt: float, bridge: bool = True) -> SimulationResult:
    """Single-path simulation recording the trajectory up to the hit.

    Identical (seed, stream_id, dt) reproduces the identical result
    regardless of process or thread scheduling.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    gen = rng.generator()
    d = model.dim
    x = np.asarray(x0, float).reshape(1, d).copy()
    start_inside = bool(stop.membership(x)[0])
    times = [0.0]
    states = [x[0].copy()]
    n_faces = len(stop.boundary_primitives)
    n_steps = max(1, math.ceil(horizon / dt - 1e-12))
    t = 0.0
    for k in range(n_steps):
        step_dt = min(dt, max(horizon - t, 1e-12))
        z = gen.standard_normal((1, d))
        xn = _propose(model, x, z, step_dt)
        if not np.all(np.isfinite(xn)):
            raise SimulationBlowupError(t)
        uniforms = gen.random((1, n_faces)) if (bridge and n_faces) else None
        theta, point = _step_hits(model, stop, x, xn, step_dt, uniforms, bridge)
        times.append(t + step_dt)
        states.append(xn[0].copy())
        if np.isfinite(theta[0]):
            hit_time = t + float(theta[0]) * step_dt
            hit_state = states[0].copy() if (k == 0 and start_inside) else point[0].copy()
            path = PathSegment(np.asarray(times), np.asarray(states))
            return SimulationResult(hit=True, hit_time=hit_time,
                                    hit_state=hit_state, path=path)
        x = xn
        t += step_dt
    path = PathSegment(np.asarray(times), np.asarray(states))
    return SimulationResult(hit=False, hit_time=np.inf, hit_state=None, path=path)


# ---------------------------------------------------------------------------
# Exact Laplace transforms of Brownian hitting times

def two_sided_barrier_lt(lam, c: float, y: float):
    """E^y[exp(-lam * tau)] for tau = first exit of 1-d BM from (-c, c).

    Equals cosh(y sqrt(2 lam)) / cosh(c sqrt(2 lam)), evaluated in an
    overflow-safe form.  Accepts scalar or array rates.
    """
    if c <= 0:
        raise ValueError("barrier must be positive")
    if abs(y) > c:
        raise ValueError("start must satisfy |y| <= c")
    lam_arr = np.asarray(lam, float)
    if np.any(lam_arr <= 0):
        raise ValueError("rate must be positive")
    zy = abs(y) * np.sqrt(2.0 * lam_arr)
    zc = c * np.sqrt(2.0 * lam_arr)
    out = np.exp(zy - zc) * (1.0 + np.exp(-2.0 * zy)) / (1.0 + np.exp(-2.0 * zc))
    return float(out) if np.isscalar(lam) else out


def ball_exit_lt(lam, r: float):
    """E[exp(-lam * tau_r)] for the exit of 3-d BM from a ball of radius r.

    Equals z / sinh(z) with z = r sqrt(2 lam).
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    lam_arr = np.asarray(lam, float)
    if np.any(lam_arr <= 0):
        raise ValueError("rate must be positive")
    z = r * np.sqrt(2.0 * lam_arr)
    small = z < 1e-6
    with np.errstate(over="ignore"):
        expz = np.exp(-np.where(small, 1.0, z))
        safe = 2.0 * z * expz / np.maximum(1.0 - expz * expz, 1e-300)
    out = np.where(small, 1.0 - z * z / 6.0, safe)
    return float(out) if np.isscalar(lam) else out


def halfspace_hit_lt(lam, dist: float):
    """E[exp(-lam * rho)] for 1-d BM hitting a level at distance dist >= 0."""
    if dist < 0:
        raise ValueError("distance must be nonnegative")
    lam_arr = np.asarray(lam, float)
    if np.any(lam_arr <= 0):
        raise ValueError("rate must be positive")
    out = np.exp(-dist * np.sqrt(2.0 * lam_arr))
    return float(out) if np.isscalar(lam) else out


def discounted_exit_factor(mixture: LaplaceMixture, transform, *,
                           quad_tol: float = 1e-9, max_doublings: int = 6) -> float:
    """E[d(tau)] from the mixture of an exit-time Laplace transform.

    Computes sum_i w_i * transform(u_i), doubling the node count until two
    successive estimates agree within quad_tol.  Point-mass mixtures
    (exponential discounting) are exact in one evaluation.
    """
    if mixture.is_point_mass:
        return mixture.expectation(transform)
    est = mixture.expectation(transform)
    current = mixture
    for _ in range(max_doublings):
        refined = current.refined()
        if refined is current:
            break
        nxt = refined.expectation(transform)
        if abs(nxt - est) <= quad_tol:
            return nxt
        est, current = nxt, refined
    raise QuadratureError("node doubling did not converge for this transform")
