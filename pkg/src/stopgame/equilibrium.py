"""Best-response classification, the fixed-point operator, and equilibrium search.

Every state is compared against its continuation value: stopping strictly
better (S), indifferent (I), or strictly worse (C).  The best-response
operator maps a policy R to S(R) united with the part of R where the agent is
indifferent; its fixed points are the equilibria.  Cells whose comparison is
drowned in Monte Carlo noise are labeled Ambiguous and conservatively keep
their current membership, so estimator noise cannot drive oscillation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .discounting import DiscountCurve
from .dynamics import ProcessModel
from .regions import Grid, PolicyRegion, collar_cells, grid_closure, region_intersection
from .valuation import PayoffField, ValueField, estimate_J_mc


class Label(IntEnum):
    S = 0
    I = 1
    C = 2
    AMBIGUOUS = 3


@dataclass(frozen=True)
class ValuationBudget:
    """Everything needed to price a policy on the grid, plus cost knobs."""

    model: ProcessModel
    payoff: PayoffField
    discount: DiscountCurve
    grid: Grid
    n_paths: int
    seed: int
    dt: float
    t_tail: float
    eps: Optional[float] = None
    threads: int = 1
    bridge: bool = True
    max_iters: int = 8

    def value_field(self, R: PolicyRegion) -> ValueField:
        return estimate_J_mc(self.model, R, self.payoff, self.discount, self.grid,
                             self.n_paths, self.seed, dt=self.dt, t_tail=self.t_tail,
                             bridge=self.bridge, threads=self.threads)

    def payoff_grid(self) -> np.ndarray:
        return self.payoff.eval(self.grid.centers()).reshape(self.grid.counts)


@dataclass(frozen=True)
class Classification:
    grid: Grid
    labels: np.ndarray
    eps: float
    value_field: ValueField

    def count(self, label: Label) -> int:
        return int(np.count_nonzero(self.labels == label))


def classify(value_field: ValueField, f: PayoffField, R: PolicyRegion,
             eps: Optional[float] = None) -> Classification:
    """Partition the grid into S / I / C / Ambiguous for the policy R.

    The strict sides require a margin of max(eps, 3 * std_err); indifference
    requires both the gap and the noise floor to sit below eps.  Everything
    else is Ambiguous.  eps defaults to twice the median standard error.
    """
    grid = value_field.grid
    if eps is None:
        eps = max(2.0 * value_field.median_std_err(), 1e-12)
    fx = f.eval(grid.centers()).reshape(grid.counts)
    J = value_field.values
    se = value_field.std_errs
    thr = np.maximum(eps, 3.0 * se)
    labels = np.full(grid.counts, Label.AMBIGUOUS, dtype=np.int8)
    labels[J < fx - thr] = Label.S
    labels[J > fx + thr] = Label.C
    indiff = (np.abs(J - fx) <= eps) & (se <= eps) & (labels == Label.AMBIGUOUS)
    labels[indiff] = Label.I
    return Classification(grid=grid, labels=labels, eps=float(eps), value_field=value_field)


def theta(R: PolicyRegion, cls: Classification) -> PolicyRegion:
    """Best response to the policy R: stop on S, keep the indifferent part of R.

    Ambiguous cells inherit their membership in R; their count is recorded in
    the provenance label.  When the response does not move the mask outside
    the collar of an analytic input, the analytic geometry is retained: collar
    cells are unresolvable at grid resolution, and dropping the exact boundary
    would replace it with a staircase whose payoff-at-hitting differs at order
    of the cell size.
    """
    mask = R.mask_on(cls.grid)
    amb = cls.labels == Label.AMBIGUOUS
    new_mask = (cls.labels == Label.S) | ((cls.labels == Label.I) & mask) | (amb & mask)
    n_kept = int(np.count_nonzero(amb & mask))
    if R.analytic is not None:
        collar = collar_cells(R, cls.grid)
        if np.array_equal(new_mask[~collar], mask[~collar]):
            return PolicyRegion(analytic=R.analytic, mask=mask, grid=cls.grid,
                                provenance=(f"theta({R.provenance});fixed;"
                                            f"ambiguous_kept={n_kept}"),
                                _validate=False)
    return PolicyRegion.from_mask(new_mask, cls.grid,
                                  provenance=f"theta({R.provenance});ambiguous_kept={n_kept}")


class Direction(IntEnum):
    INCREASING = 0
    DECREASING = 1
    MIXED = 2


@dataclass
class IterationTrace:
    iterates: list
    changed_cells: list
    direction: Direction
    converged: bool
    oscillation: bool = False
    warnings: list = field(default_factory=list)
    classifications: list = field(default_factory=list)


def iterate_theta(R0: PolicyRegion, budget: ValuationBudget,
                  max_iters: Optional[int] = None) -> IterationTrace:
    """Apply the best-response operator repeatedly until the mask stops moving.

    Convergence means two consecutive masks agree outside the Ambiguous set.
    A first step that shrinks the policy is expected to finish in one more
    round; any later movement is flagged as a numerical inconsistency rather
    than an error.  Two-cycles are broken by re-verifying the cycle union.
    """
    iters = max_iters if max_iters is not None else budget.max_iters
    if iters < 1:
        raise ValueError("need at least one iteration")
    trace = IterationTrace(iterates=[R0], changed_cells=[], direction=Direction.MIXED,
                           converged=False)
    R = R0
    seen = {R0.mask_on(budget.grid).tobytes(): 0}
    for k in range(iters):
        fieldk = budget.value_field(R)
        cls = classify(fieldk, budget.payoff, R, budget.eps)
        trace.classifications.append(cls)
        R_next = theta(R, cls)
        mask, mask_next = R.mask_on(budget.grid), R_next.mask
        amb = cls.labels == Label.AMBIGUOUS
        diff = mask != mask_next
        trace.iterates.append(R_next)
        trace.changed_cells.append(int(diff.sum()))
        if k == 0:
            grew = bool((mask_next & ~mask).any())
            shrank = bool((mask & ~mask_next).any())
            trace.direction = (Direction.INCREASING if grew and not shrank else
                               Direction.DECREASING if shrank and not grew else
                               Direction.MIXED if (grew or shrank) else Direction.DECREASING)
        if not (diff & ~amb).any():
            trace.converged = True
            break
        if k >= 1 and trace.direction == Direction.DECREASING and (diff & ~amb).any():
            trace.warnings.append(
                f"round {k + 1}: movement after a decreasing first step "
                f"({int((diff & ~amb).sum())} cells) — numerically inconsistent "
                "with one-step convergence")
        key = mask_next.tobytes()
        if key in seen and seen[key] == k - 1:
            trace.oscillation = True
            union = PolicyRegion.from_mask(mask | mask_next, budget.grid,
                                           provenance="cycle-union")
            rep = verify_equilibrium(union, budget)
            trace.warnings.append(
                f"2-cycle detected; union re-verified: equilibrium={rep.is_equilibrium}")
            trace.iterates.append(union)
            trace.converged = rep.is_equilibrium
            break
        seen[key] = k
        R = R_next
    return trace


@dataclass(frozen=True)
class Violation:
    cell: tuple
    side: str   # "C-inside" or "S-outside"
    margin: float
    std_err: float


@dataclass(frozen=True)
class EquilibriumReport:
    region: PolicyRegion
    is_equilibrium: bool
    violations: list
    collar_excluded: int
    value_field: ValueField
    eps: float


def verify_equilibrium(R: PolicyRegion, budget: ValuationBudget, *,
                       value_field: Optional[ValueField] = None,
                       eps: Optional[float] = None) -> EquilibriumReport:
    """Check the two-sided fixed-point condition on every non-collar cell.

    Inside the policy the continuation value may not exceed the payoff, and
    outside it may not fall below, each within max(eps, 3 * std_err).  Cells
    in the one-cell collar around the boundary are excluded and counted.
    """
    fieldv = value_field if value_field is not None else budget.value_field(R)
    grid = fieldv.grid
    eps_eff = eps if eps is not None else (budget.eps if budget.eps is not None
                                           else max(2.0 * fieldv.median_std_err(), 1e-12))
    fx = budget.payoff.eval(grid.centers()).reshape(grid.counts)
    J, se = fieldv.values, fieldv.std_errs
    thr = np.maximum(eps_eff, 3.0 * se)
    mask = R.mask_on(grid)
    collar = collar_cells(R, grid)

    violations = []
    c_inside = mask & ~collar & (J > fx + thr)
    s_outside = ~mask & ~collar & (J < fx - thr)
    for side, m in (("C-inside", c_inside), ("S-outside", s_outside)):
        for cell in np.argwhere(m):
            cell = tuple(int(i) for i in cell)
            violations.append(Violation(cell=cell, side=side,
                                        margin=float(abs(J[cell] - fx[cell])),
                                        std_err=float(se[cell])))
    return EquilibriumReport(region=R, is_equilibrium=not violations,
                             violations=violations,
                             collar_excluded=int(collar.sum()),
                             value_field=fieldv, eps=float(eps_eff))


@dataclass(frozen=True)
class ImprovePairResult:
    improved: Optional[PolicyRegion]
    improved_field: Optional[ValueField]
    dominance_ok: bool
    violations: list
    degenerate: bool


def improve_pair(R: PolicyRegion, T: PolicyRegion, budget: ValuationBudget, *,
                 report_R: Optional[EquilibriumReport] = None,
                 report_T: Optional[EquilibriumReport] = None) -> ImprovePairResult:
    """One intersection-improvement round for a pair of verified equilibria.

    Returns the best response to R intersect T together with a cellwise check
    that its value dominates the pointwise maximum of the pair's values,
    within 3 combined standard errors outside the collars.
    """
    rep_R = report_R if report_R is not None else verify_equilibrium(R, budget)
    rep_T = report_T if report_T is not None else verify_equilibrium(T, budget)
    for name, rep in (("first", rep_R), ("second", rep_T)):
        if not rep.is_equilibrium:
            raise ValueError(f"{name} region fails equilibrium verification "
                             f"({len(rep.violations)} violations)")
    RT = region_intersection(R.with_grid(budget.grid) if R.mask is None else R,
                             T.with_grid(budget.grid) if T.mask is None else T)
    if not RT.mask_on(budget.grid).any():
        warnings.warn("intersection is empty on the grid; improvement skipped")
        return ImprovePairResult(improved=None, improved_field=None, dominance_ok=False,
                                 violations=[], degenerate=True)
    field_RT = budget.value_field(RT)
    cls = classify(field_RT, budget.payoff, RT, budget.eps)
    improved = theta(RT, cls)
    field_improved = budget.value_field(improved)

    exclude = (collar_cells(R, budget.grid) | collar_cells(T, budget.grid)
               | collar_cells(improved, budget.grid))
    best = np.maximum(rep_R.value_field.values, rep_T.value_field.values)
    se_comb = np.sqrt(np.maximum(rep_R.value_field.std_errs,
                                 rep_T.value_field.std_errs) ** 2
                      + field_improved.std_errs ** 2)
    bad = ~exclude & (field_improved.values < best - 3.0 * se_comb)
    violations = [tuple(int(i) for i in cell) for cell in np.argwhere(bad)]
    return ImprovePairResult(improved=improved, improved_field=field_improved,
                             dominance_ok=not violations, violations=violations,
                             degenerate=False)


@dataclass(frozen=True)
class SearchResult:
    R_star: Optional[PolicyRegion]
    final_report: Optional[EquilibriumReport]
    steps: list
    rejected: list
    closure_contained: bool


def search_optimal(candidates: Sequence[PolicyRegion], budget: ValuationBudget, *,
                   reports: Optional[Sequence[EquilibriumReport]] = None) -> SearchResult:
    """Fold pairwise improvement over a family of candidate equilibria.

    Candidates failing verification are rejected with their reports.  The
    final region is re-verified, and its grid closure is checked against the
    intersection of the candidates' closures.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    verified, rejected = [], []
    for i, cand in enumerate(candidates):
        rep = (reports[i] if reports is not None else verify_equilibrium(cand, budget))
        if rep.is_equilibrium:
            verified.append((cand, rep))
        else:
            rejected.append((i, rep))
    if not verified:
        return SearchResult(R_star=None, final_report=None, steps=[],
                            rejected=rejected, closure_contained=False)

    current, current_rep = verified[0]
    steps = []
    for cand, rep in verified[1:]:
        res = improve_pair(current, cand, budget, report_R=current_rep, report_T=rep)
        steps.append(res)
        if res.degenerate:
            continue
        current = res.improved
        current_rep = verify_equilibrium(current, budget, value_field=res.improved_field)
    final_report = verify_equilibrium(current, budget,
                                      value_field=current_rep.value_field)

    # containment of closures is asserted outside the collars: cell-center
    # sampling cannot distinguish masks from analytic forms on the boundary ring
    closure_mask = grid_closure(current).mask_on(budget.grid)
    inter = np.ones(budget.grid.counts, bool)
    exclude = collar_cells(current, budget.grid)
    for cand, _ in verified:
        on_grid = cand if cand.mask is not None else cand.with_grid(budget.grid)
        inter &= grid_closure(on_grid).mask_on(budget.grid)
        exclude |= collar_cells(on_grid, budget.grid)
    contained = bool(np.all(closure_mask[~exclude] <= inter[~exclude]))
    return SearchResult(R_star=current, final_report=final_report, steps=steps,
                        rejected=rejected, closure_contained=contained)


def value_function(R: PolicyRegion, budget: ValuationBudget, *,
                   value_field: Optional[ValueField] = None,
                   verified: Optional[bool] = None) -> ValueField:
    """V = f v J(., R), defined for equilibria; warns when unverified."""
    if verified is None:
        verified = verify_equilibrium(R, budget,
                                      value_field=value_field).is_equilibrium
    if not verified:
        warnings.warn("value function requested for a region that is not a "
                      "verified equilibrium")
    fieldv = value_field if value_field is not None else budget.value_field(R)
    fx = budget.payoff.eval(budget.grid.centers()).reshape(budget.grid.counts)
    V = np.maximum(fx, fieldv.values)
    se = np.where(fieldv.values >= fx, fieldv.std_errs, 0.0)
    return ValueField(grid=fieldv.grid, values=V, std_errs=se,
                      truncation_bound=fieldv.truncation_bound, n_paths=fieldv.n_paths)
