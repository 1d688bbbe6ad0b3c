"""Stopping policies as first-class regions.

A region carries up to two representations: a structured analytic form
(half-spaces, slabs, balls composed by union/intersection/complement) and a
boolean mask over a rectangular grid of cell centers.  Analytic forms expose
boundary faces used by the bridge-crossing correction in the path engine;
mask-only regions get no correction and need a finer step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Rectangular cell grid; membership is sampled at cell centers."""

    lower: tuple
    upper: tuple
    counts: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        cnt = np.asarray(self.counts, int)
        if not (lo.shape == hi.shape == cnt.shape) or lo.ndim != 1:
            raise ValueError("lower/upper/counts must be 1-d and matching")
        if np.any(hi <= lo):
            raise ValueError("upper must exceed lower componentwise")
        if np.any(cnt < 2):
            raise ValueError("need at least two cells per axis")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))
        object.__setattr__(self, "counts", tuple(int(c) for c in cnt))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def cell_sizes(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.counts)

    def axes(self) -> list[np.ndarray]:
        h = self.cell_sizes
        return [np.asarray(self.lower)[k] + h[k] * (np.arange(self.counts[k]) + 0.5)
                for k in range(self.dim)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    def cell_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multi-index of the cell containing each point, plus an in-box flag."""
        pts = np.atleast_2d(np.asarray(points, float))
        lo = np.asarray(self.lower)
        h = self.cell_sizes
        idx = np.floor((pts - lo) / h).astype(int)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.counts)), axis=1)
        return np.clip(idx, 0, np.asarray(self.counts) - 1), inside


# ---------------------------------------------------------------------------
# Boundary faces (consumed by the path engine's crossing correction)

class HyperplaneFace:
    """Oriented hyperplane a.x = b; the region lies locally on {a.x >= b}."""

    def __init__(self, a, b: float):
        a = np.asarray(a, float)
        norm = float(np.linalg.norm(a))
        if norm == 0:
            raise ValueError("zero normal")
        self.a = a / norm
        self.b = float(b) / norm

    def outside_distance(self, pts: np.ndarray) -> np.ndarray:
        return self.b - pts @ self.a

    def normals_at(self, pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.a, pts.shape)

    def project(self, pts: np.ndarray) -> np.ndarray:
        # nudged a hair onto the region side so closed-membership tests
        # cannot lose the point to rounding
        eps = 1e-12 * (1.0 + abs(self.b))
        return pts + np.outer(self.b - pts @ self.a + eps, self.a)


class SphereFace:
    """Sphere |x - center| = r; region_inside says which side stops the path."""

    def __init__(self, center, r: float, region_inside: bool):
        self.center = np.asarray(center, float)
        self.r = float(r)
        self.region_inside = region_inside

    def outside_distance(self, pts: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pts - self.center, axis=-1)
        return (d - self.r) if self.region_inside else (self.r - d)

    def normals_at(self, pts: np.ndarray) -> np.ndarray:
        v = pts - self.center
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(n > 0, n, 1.0)

    def project(self, pts: np.ndarray) -> np.ndarray:
        v = pts - self.center
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        r_eff = self.r * (1.0 - 1e-12 if self.region_inside else 1.0 + 1e-12)
        return self.center + r_eff * v / np.where(n > 0, n, 1.0)


# ---------------------------------------------------------------------------
# Analytic CSG nodes

class AnalyticRegion:
    def contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def closure(self) -> "AnalyticRegion":
        raise NotImplementedError

    def complement(self) -> "AnalyticRegion":
        raise NotImplementedError

    def faces(self) -> list:
        return []

    def transform(self, M: np.ndarray) -> "AnalyticRegion":
        """Image {Mx : x in region} under an orthogonal map M."""
        raise NotImplementedError


@dataclass(frozen=True)
class FullSpace(AnalyticRegion):
    def contains(self, pts):
        return np.ones(len(np.atleast_2d(pts)), bool)

    def closure(self):
        return self

    def complement(self):
        return EmptySpace()

    def transform(self, M):
        return self


@dataclass(frozen=True)
class EmptySpace(AnalyticRegion):
    def contains(self, pts):
        return np.zeros(len(np.atleast_2d(pts)), bool)

    def closure(self):
        return self

    def complement(self):
        return FullSpace()

    def transform(self, M):
        return self


class HalfSpace(AnalyticRegion):
    """{x : a.x >= b}, or strict > when strict=True."""

    def __init__(self, a, b: float, strict: bool = False):
        self.a = np.asarray(a, float)
        self.b = float(b)
        self.strict = strict
        if np.linalg.norm(self.a) == 0:
            raise ValueError("zero normal")

    def contains(self, pts):
        v = np.atleast_2d(pts) @ self.a
        return (v > self.b) if self.strict else (v >= self.b)

    def closure(self):
        return HalfSpace(self.a, self.b) if self.strict else self

    def complement(self):
        return HalfSpace(-self.a, -self.b, strict=not self.strict)

    def faces(self):
        return [HyperplaneFace(self.a, self.b)]

    def transform(self, M):
        return HalfSpace(np.asarray(M, float) @ self.a, self.b, self.strict)


class Slab(AnalyticRegion):
    """{x : lo <= a.x <= hi}."""

    def __init__(self, a, lo: float, hi: float, strict: bool = False):
        self.a = np.asarray(a, float)
        self.lo = float(lo)
        self.hi = float(hi)
        self.strict = strict
        if self.hi <= self.lo:
            raise ValueError("slab needs lo < hi")

    def contains(self, pts):
        v = np.atleast_2d(pts) @ self.a
        if self.strict:
            return (v > self.lo) & (v < self.hi)
        return (v >= self.lo) & (v <= self.hi)

    def closure(self):
        return Slab(self.a, self.lo, self.hi) if self.strict else self

    def complement(self):
        return Union([HalfSpace(-self.a, -self.lo, strict=not self.strict),
                      HalfSpace(self.a, self.hi, strict=not self.strict)])

    def faces(self):
        return [HyperplaneFace(-self.a, -self.lo), HyperplaneFace(self.a, self.hi)]

    def transform(self, M):
        return Slab(np.asarray(M, float) @ self.a, self.lo, self.hi, self.strict)


class Ball(AnalyticRegion):
    """{x : |x - center| <= r} when inside, else {|x - center| >= r}."""

    def __init__(self, center, r: float, inside: bool = True, strict: bool = False):
        self.center = np.asarray(center, float)
        self.r = float(r)
        self.inside = inside
        self.strict = strict
        if self.r <= 0:
            raise ValueError("radius must be positive")

    def contains(self, pts):
        d = np.linalg.norm(np.atleast_2d(pts) - self.center, axis=-1)
        if self.inside:
            return (d < self.r) if self.strict else (d <= self.r)
        return (d > self.r) if self.strict else (d >= self.r)

    def closure(self):
        return Ball(self.center, self.r, self.inside) if self.strict else self

    def complement(self):
        return Ball(self.center, self.r, inside=not self.inside, strict=not self.strict)

    def faces(self):
        return [SphereFace(self.center, self.r, region_inside=self.inside)]

    def transform(self, M):
        return Ball(np.asarray(M, float) @ self.center, self.r, self.inside, self.strict)


@dataclass(frozen=True)
class Union(AnalyticRegion):
    parts: tuple

    def __init__(self, parts: Sequence[AnalyticRegion]):
        object.__setattr__(self, "parts", tuple(parts))

    def contains(self, pts):
        out = np.zeros(len(np.atleast_2d(pts)), bool)
        for p in self.parts:
            out |= p.contains(pts)
        return out

    def closure(self):
        return Union([p.closure() for p in self.parts])

    def complement(self):
        return Intersection([p.complement() for p in self.parts])

    def faces(self):
        return [f for p in self.parts for f in p.faces()]

    def transform(self, M):
        return Union([p.transform(M) for p in self.parts])


@dataclass(frozen=True)
class Intersection(AnalyticRegion):
    parts: tuple

    def __init__(self, parts: Sequence[AnalyticRegion]):
        object.__setattr__(self, "parts", tuple(parts))

    def contains(self, pts):
        out = np.ones(len(np.atleast_2d(pts)), bool)
        for p in self.parts:
            out &= p.contains(pts)
        return out

    def closure(self):
        # structural approximation: closure distributes over the parts
        return Intersection([p.closure() for p in self.parts])

    def complement(self):
        return Union([p.complement() for p in self.parts])

    def faces(self):
        return [f for p in self.parts for f in p.faces()]

    def transform(self, M):
        return Intersection([p.transform(M) for p in self.parts])


def barrier_region(b: float) -> AnalyticRegion:
    """{|x1 - x2| >= b} in the plane; b = 0 degenerates to the full space."""
    if b < 0:
        raise ValueError("barrier level must be nonnegative")
    if b == 0.0:
        return FullSpace()
    return Union([HalfSpace(np.array([1.0, -1.0]), b),
                  HalfSpace(np.array([-1.0, 1.0]), b)])


# ---------------------------------------------------------------------------
# Policy regions

@dataclass(frozen=True)
class RegionProbe:
    """What the path engine needs: a membership test and optional faces."""

    membership: Callable[[np.ndarray], np.ndarray]
    boundary_primitives: list = field(default_factory=list)


class PolicyRegion:
    """A stopping policy: analytic form and/or grid mask, immutable."""

    def __init__(self, analytic: Optional[AnalyticRegion] = None,
                 mask: Optional[np.ndarray] = None, grid: Optional[Grid] = None,
                 provenance: str = "", outside_value: bool = False,
                 closed_at_resolution: bool = False, _validate: bool = True):
        if analytic is None and mask is None:
            raise ValueError("region needs an analytic form or a mask")
        if mask is not None:
            if grid is None:
                raise ValueError("mask requires a grid")
            mask = np.asarray(mask, bool)
            if mask.shape != tuple(grid.counts):
                raise GridMismatchError("mask shape does not match grid counts")
        self.analytic = analytic
        self.mask = mask
        self.grid = grid
        self.provenance = provenance
        self.outside_value = outside_value
        self.closed_at_resolution = closed_at_resolution
        if _validate and analytic is not None and mask is not None:
            sampled = analytic.contains(grid.centers()).reshape(grid.counts)
            if not np.array_equal(sampled, mask):
                raise ValueError("mask disagrees with analytic membership at cell centers")

    @classmethod
    def from_analytic(cls, analytic: AnalyticRegion, grid: Optional[Grid] = None,
                      provenance: str = "", outside_value: bool = False) -> "PolicyRegion":
        mask = None
        if grid is not None:
            mask = analytic.contains(grid.centers()).reshape(grid.counts)
        return cls(analytic=analytic, mask=mask, grid=grid, provenance=provenance,
                   outside_value=outside_value, _validate=False)

    @classmethod
    def from_mask(cls, mask: np.ndarray, grid: Grid, provenance: str = "",
                  outside_value: bool = False) -> "PolicyRegion":
        return cls(analytic=None, mask=mask, grid=grid, provenance=provenance,
                   outside_value=outside_value)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        if self.analytic is not None:
            return self.analytic.contains(pts)
        idx, inside = self.grid.cell_of(pts)
        out = np.full(len(pts), self.outside_value)
        if inside.any():
            out[inside] = self.mask[tuple(idx[inside].T)]
        return out

    def probe(self) -> RegionProbe:
        faces = self.analytic.faces() if self.analytic is not None else []
        return RegionProbe(membership=self.contains, boundary_primitives=faces)

    def with_grid(self, grid: Grid) -> "PolicyRegion":
        """Attach (or replace) the grid, resampling the mask from the analytic form."""
        if self.analytic is None:
            if self.grid is not None and grid == self.grid:
                return self
            raise GridMismatchError("cannot regrid a mask-only region")
        return PolicyRegion.from_analytic(self.analytic, grid, self.provenance,
                                          self.outside_value)

    def mask_on(self, grid: Grid) -> np.ndarray:
        if self.mask is not None:
            if self.grid != grid:
                raise GridMismatchError("region mask lives on a different grid")
            return self.mask
        if self.analytic is None:
            raise GridMismatchError("region has neither mask nor analytic form")
        return self.analytic.contains(grid.centers()).reshape(grid.counts)

    def __repr__(self):
        kinds = []
        if self.analytic is not None:
            kinds.append("analytic")
        if self.mask is not None:
            kinds.append(f"mask{self.mask.shape}")
        label = f" {self.provenance!r}" if self.provenance else ""
        return f"PolicyRegion({'+'.join(kinds)}{label})"


def _merged_grid(R: PolicyRegion, T: PolicyRegion) -> Optional[Grid]:
    if R.grid is not None and T.grid is not None:
        if R.grid != T.grid:
            raise GridMismatchError("regions live on different grids")
        return R.grid
    return R.grid or T.grid


def _combine(R: PolicyRegion, T: PolicyRegion, mask_op, analytic_op, tag: str) -> PolicyRegion:
    grid = _merged_grid(R, T)
    analytic = None
    if R.analytic is not None and T.analytic is not None:
        analytic = analytic_op(R.analytic, T.analytic)
    mask = None
    if grid is not None:
        mask = mask_op(R.mask_on(grid), T.mask_on(grid))
    if analytic is not None and mask is not None:
        # both exact, so the consistency invariant holds by construction
        return PolicyRegion(analytic=analytic, mask=mask, grid=grid,
                            provenance=f"{tag}({R.provenance},{T.provenance})",
                            _validate=False)
    return PolicyRegion(analytic=analytic, mask=mask, grid=grid,
                        provenance=f"{tag}({R.provenance},{T.provenance})")


def region_union(R: PolicyRegion, T: PolicyRegion) -> PolicyRegion:
    return _combine(R, T, np.logical_or, lambda a, b: Union([a, b]), "union")


def region_intersection(R: PolicyRegion, T: PolicyRegion) -> PolicyRegion:
    return _combine(R, T, np.logical_and, lambda a, b: Intersection([a, b]), "intersect")


def region_complement(R: PolicyRegion) -> PolicyRegion:
    analytic = R.analytic.complement() if R.analytic is not None else None
    mask = ~R.mask if R.mask is not None else None
    return PolicyRegion(analytic=analytic, mask=mask, grid=R.grid,
                        provenance=f"complement({R.provenance})",
                        outside_value=not R.outside_value, _validate=False)


def grid_closure(R: PolicyRegion) -> PolicyRegion:
    """Closure at grid resolution; idempotent on its own output.

    Analytic regions close structurally (strict inequalities relaxed); pure
    masks dilate by one cell-adjacency ring, the grid-level stand-in for the
    Euclidean closure, and are flagged closed so a second closure is a no-op.
    """
    if R.closed_at_resolution:
        return R
    if R.analytic is not None:
        closed = R.analytic.closure()
        out = PolicyRegion.from_analytic(closed, R.grid, f"closure({R.provenance})",
                                         R.outside_value)
        out.closed_at_resolution = True
        return out
    structure = np.ones((3,) * R.mask.ndim, bool)
    dilated = ndimage.binary_dilation(R.mask, structure=structure)
    return PolicyRegion(mask=dilated, grid=R.grid,
                        provenance=f"closure({R.provenance})",
                        outside_value=R.outside_value, closed_at_resolution=True)


def collar_cells(R: PolicyRegion, grid: Grid) -> np.ndarray:
    """One-cell band straddling the region boundary (excluded from assertions)."""
    mask = R.mask_on(grid)
    structure = np.ones((3,) * mask.ndim, bool)
    near_in = ndimage.binary_dilation(mask, structure=structure)
    near_out = ndimage.binary_dilation(~mask, structure=structure)
    return near_in & near_out


@dataclass(frozen=True)
class EntryHitReport:
    entry_time: float
    hit_time: float


def first_entry_vs_hit(path, region, x0, rng: Optional[np.random.Generator] = None) -> EntryHitReport:
    """First entry time (t >= 0) versus first hitting time (t > 0) along a path.

    The entry time counts the starting point; the hitting time starts looking
    strictly after zero, using endpoint membership, deterministic segment
    crossings of analytic faces, and (when ``rng`` is given) the probabilistic
    bridge test for excursions between samples.
    """
    probe = region.probe() if isinstance(region, PolicyRegion) else region
    times = np.asarray(path.times, float)
    states = np.atleast_2d(np.asarray(path.states, float))
    member = probe.membership(states)

    hit_time = np.inf
    if member[1:].any():
        hit_time = float(times[1:][member[1:].argmax()])
    # face crossings can beat the first in-region sample
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        if t0 >= hit_time:
            break
        x_a, x_b = states[k], states[k + 1]
        seg_dt = t1 - t0
        for face_ in probe.boundary_primitives:
            d1 = float(face_.outside_distance(x_a[None])[0])
            d2 = float(face_.outside_distance(x_b[None])[0])
            if d1 >= 0 > d2:
                theta = d1 / (d1 - d2)
                hit_time = min(hit_time, t0 + theta * seg_dt)
            elif d1 >= 0 and d2 >= 0 and rng is not None and seg_dt > 0:
                p = np.exp(-2.0 * d1 * d2 / seg_dt)
                if rng.random() < p:
                    cross = face_.project(0.5 * (x_a + x_b)[None])
                    if probe.membership(cross)[0]:
                        hit_time = min(hit_time, t0 + 0.5 * seg_dt)
    # starting inside means immediate entry; otherwise entry and hitting agree
    entry_time = 0.0 if bool(member[0]) else hit_time
    return EntryHitReport(entry_time=entry_time, hit_time=hit_time)


# ---------------------------------------------------------------------------
# Region DSL: halfspace([1,-1], 0.5), union(...), ball([0,0], 1), mask("m.pgm")

_TOKEN_RE = None


def _tokenize(text: str):
    import re

    global _TOKEN_RE
    if _TOKEN_RE is None:
        _TOKEN_RE = re.compile(
            r"\s*(?:(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<num>[-+]?\d+\.?\d*(?:[eE][-+]?\d+)?)"
            r"|(?P<str>\"[^\"]*\"|'[^']*')|(?P<punct>[()\[\],]))")
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip():
                raise ValueError(f"region DSL: cannot tokenize at {text[pos:pos + 12]!r}")
            break
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


class _DslParser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        k, v = self.peek()
        if kind is not None and k != kind or (value is not None and v != value):
            raise ValueError(f"region DSL: expected {value or kind}, got {v!r}")
        self.pos += 1
        return v

    def parse_value(self):
        k, v = self.peek()
        if k == "num":
            self.take()
            return float(v)
        if k == "str":
            self.take()
            return ("str", v[1:-1])
        if k == "punct" and v == "[":
            self.take()
            items = []
            while self.peek() != ("punct", "]"):
                items.append(float(self.take("num")))
                if self.peek() == ("punct", ","):
                    self.take()
                elif self.peek() != ("punct", "]"):
                    raise ValueError("region DSL: expected ',' or ']'")
            self.take("punct", "]")
            return np.asarray(items, float)
        if k == "name":
            return self.parse_call()
        raise ValueError(f"region DSL: unexpected token {v!r}")

    def parse_call(self):
        name = self.take("name")
        self.take("punct", "(")
        args = []
        while self.peek() != ("punct", ")"):
            args.append(self.parse_value())
            if self.peek() == ("punct", ","):
                self.take()
            elif self.peek() != ("punct", ")"):
                raise ValueError("region DSL: expected ',' or ')'")
        self.take("punct", ")")
        return _build_dsl_node(name, args)


def _build_dsl_node(name, args):
    def need_region(a):
        if not isinstance(a, AnalyticRegion):
            raise ValueError(f"region DSL: {name} expects region arguments")
        return a

    if name == "halfspace":
        return HalfSpace(args[0], float(args[1]))
    if name == "slab":
        return Slab(args[0], float(args[1]), float(args[2]))
    if name == "ball":
        return Ball(args[0], float(args[1]))
    if name == "union":
        return Union([need_region(a) for a in args])
    if name == "intersect":
        return Intersection([need_region(a) for a in args])
    if name == "complement":
        return need_region(args[0]).complement()
    if name == "full":
        return FullSpace()
    if name == "empty":
        return EmptySpace()
    if name == "mask":
        if not (isinstance(args[0], tuple) and args[0][0] == "str"):
            raise ValueError("region DSL: mask() expects a quoted path")
        return ("mask", args[0][1])
    raise ValueError(f"region DSL: unknown constructor {name!r}")


def parse_region(text: str, grid: Optional[Grid] = None,
                 base_dir: str = ".") -> PolicyRegion:
    """Build a policy region from its config DSL string."""
    parser = _DslParser(_tokenize(text))
    node = parser.parse_call()
    if parser.pos != len(parser.tokens):
        raise ValueError("region DSL: trailing tokens")
    if isinstance(node, tuple) and node[0] == "mask":
        from .reports import read_mask_pgm
        from pathlib import Path

        mask, mask_grid = read_mask_pgm(Path(base_dir) / node[1])
        if grid is not None and grid != mask_grid:
            raise GridMismatchError("mask file grid disagrees with the scenario grid")
        return PolicyRegion.from_mask(mask, mask_grid, provenance=f"mask({node[1]})")
    return PolicyRegion.from_analytic(node, grid, provenance=text)


def regularity_score(model, x, R: PolicyRegion, h_list, n_paths: int,
                     seed: int = 0, dt: Optional[float] = None) -> list[float]:
    """Monte Carlo estimates of P^x(rho_R <= h) for each small horizon h.

    Scores near 1 for all h flag x as (numerically) regular to R; scores near
    0 flag it irregular.  Diagnostic only: regularity is a zero-one event in
    the limit but any finite sample just brackets it.
    """
    from .dynamics import RngStream, first_passage_batch

    probe = R.probe()
    scores = []
    for i, h in enumerate(h_list):
        step = dt if dt is not None else h / 64.0
        res = first_passage_batch(model, np.asarray(x, float), probe, dt=step,
                                  horizon=float(h), rng=RngStream(seed, i).generator(),
                                  n_paths=n_paths)
        scores.append(float(np.isfinite(res.hit_times).mean()))
    return scores
