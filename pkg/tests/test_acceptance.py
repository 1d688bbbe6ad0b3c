"""Acceptance suite: one test per shipped criterion, each printing a verdict.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS/FAIL lines.
Budgets are fixed here, tolerances are the contractual ones; nothing is
deferred to later calibration.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from stopgame.discounting import ExponentialDiscount, HyperbolicDiscount
from stopgame.dynamics import BrownianMotion
from stopgame.equilibrium import ValuationBudget
from stopgame.regions import Grid, HalfSpace, PolicyRegion, collar_cells
from stopgame.reports import write_mask_pgm, write_table_csv, write_value_field_csv
from stopgame.scenarios import (ButterflyScenario, RunBudget,
                                barrier_mc_quadrature_table, reference_chain,
                                reference_discounts, run_butterfly,
                                run_exponential_baseline, solve_a_star)
from stopgame.discrete_oracle import verify_structural_theorems
from stopgame.valuation import (SQRT2, butterfly_payoff, estimate_J_mc,
                                inv_quad_payoff, mean_value_bounds_check,
                                put_payoff)


def verdict(name: str, ok: bool, detail: str = "") -> bool:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else ""))
    return ok


# ---------------------------------------------------------------------------
# criterion 1: the threshold solver

def independent_residual(a_star: float, beta: float) -> float:
    def integrand(v):
        z = math.sqrt(2.0 * beta) * v
        return 2.0 * v * math.exp(-v * v) * z * math.tanh(a_star * z)

    integral, _ = quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-13)
    return a_star * integral - 1.0


def test_criterion_1_threshold_solver():
    t0 = time.perf_counter()
    a1 = solve_a_star(1.0, tol=1e-10)
    elapsed = time.perf_counter() - t0
    residual = independent_residual(a1, 1.0)
    consts = [solve_a_star(b, tol=1e-12) * math.sqrt(b) for b in (0.25, 1.0, 4.0)]
    spread = max(consts) - min(consts)
    ok = abs(residual) < 1e-8 and spread < 1e-6 and elapsed < 1.0
    assert verdict("1 threshold-solver", ok,
                   f"residual={residual:.2e} spread={spread:.2e} time={elapsed:.3f}s")


# ---------------------------------------------------------------------------
# criterion 2: Monte Carlo versus quadrature for the rotated barrier

PAIR_BUDGET = dict(n_paths=4000, seed=1202, t_tail=20.0)


def barrier_pairs():
    pairs = []
    for c in (0.2, 0.35, 0.5, 0.6, 1.0 / SQRT2):
        for frac in (-0.75, -0.35, 0.0, 0.35, 0.75):
            pairs.append((frac * c, c))
    return pairs


@pytest.fixture(scope="module")
def pair_table():
    # the step size follows the exit-time scale c^2 so the residual O(dt)
    # bias stays well below the Monte Carlo band for every pair
    table = []
    for c in sorted({c for _, c in barrier_pairs()}):
        sub = [(y2, cc) for y2, cc in barrier_pairs() if cc == c]
        table += barrier_mc_quadrature_table(sub, beta=1.0, a=1.0,
                                             dt=min(1e-3, c * c / 400.0),
                                             **PAIR_BUDGET)
    return table


def test_criterion_2_oracle_agreement(pair_table):
    assert len(pair_table) >= 20
    worst_sigma = 0.0
    worst_se = 0.0
    for y2, c, mc, mc_se, exact in pair_table:
        worst_se = max(worst_se, mc_se)
        worst_sigma = max(worst_sigma, abs(mc - exact) / max(mc_se, 1e-12))
    ok = worst_sigma <= 3.0 and worst_se <= 0.005
    assert verdict("2 oracle-agreement", ok,
                   f"pairs={len(pair_table)} worst={worst_sigma:.2f}sigma "
                   f"max_se={worst_se:.4f}")


# ---------------------------------------------------------------------------
# criteria 3 and 4: the barrier family study

STUDY_GRID = Grid(lower=(-1.3, -1.3), upper=(1.3, 1.3), counts=(13, 13))
STUDY_BUDGET = RunBudget(n_paths=1200, seed=777, dt=2e-3, t_tail=20.0, threads=1)


@pytest.fixture(scope="module")
def butterfly_study():
    scn = ButterflyScenario(beta=1.0, a=1.0, grid=STUDY_GRID,
                            b_values=tuple(np.linspace(0.0, 1.0, 10)))
    return run_butterfly(scn, STUDY_BUDGET)


def test_criterion_3_equilibrium_family(butterfly_study):
    study = butterfly_study
    assert study.scenario.admissible_b_max == pytest.approx(1.0)
    bad_cases = [c.b for c in study.cases
                 if not (c.admissible and c.report.is_equilibrium)]
    ok = not bad_cases and not study.dominance_violations
    assert verdict("3 equilibrium-family", ok,
                   f"levels={len(study.cases)} failures={bad_cases} "
                   f"dominance_violations={study.dominance_violations}")


def test_criterion_4_optimal_equilibrium(butterfly_study):
    study = butterfly_study
    assert study.optimality_label == "optimal-verified"
    search = study.search
    assert search is not None and search.R_star is not None
    star_field = search.final_report.value_field
    dominance_ok = True
    for case in study.cases:
        region = study.scenario.region(case.b)
        excl = (collar_cells(region, STUDY_GRID)
                | collar_cells(search.R_star.with_grid(STUDY_GRID)
                               if search.R_star.mask is None else search.R_star,
                               STUDY_GRID))
        se = np.sqrt(star_field.std_errs ** 2 + case.mc_field.std_errs ** 2)
        bad = ~excl & (star_field.values < case.mc_field.values - 3.0 * se)
        if bad.any():
            dominance_ok = False
    ok = (bool(study.star_matches_top) and dominance_ok
          and search.final_report.is_equilibrium and search.closure_contained)
    assert verdict("4 optimal-equilibrium", ok,
                   f"star_matches_top={study.star_matches_top} "
                   f"dominates_all={dominance_ok} "
                   f"closure_contained={search.closure_contained}")


# ---------------------------------------------------------------------------
# criterion 5: ball mean-value bounds in three dimensions

MEAN_VALUE_BUDGET = dict(n_paths=3000, seed=505, dt=5e-3, t_tail=80.0,
                         n_paths_k=6000)


@pytest.fixture(scope="module")
def mean_value_reports():
    stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0),
                                      provenance="upper halfspace")
    return {r: mean_value_bounds_check(np.zeros(3), r, stop, inv_quad_payoff(),
                                       HyperbolicDiscount(1.0), **MEAN_VALUE_BUDGET)
            for r in (0.25, 0.5)}


def test_criterion_5_mean_value_bounds(mean_value_reports):
    ok = True
    details = []
    for r, rep in mean_value_reports.items():
        k_gap_sigma = abs(rep.k_r_mc - rep.k_r) / max(rep.k_r_mc_se, 1e-12)
        ok &= rep.lower_ok and rep.upper_ok and k_gap_sigma <= 3.0
        details.append(f"r={r}: lower={rep.lower_ok} upper={rep.upper_ok} "
                       f"k_gap={k_gap_sigma:.2f}sigma")
    assert verdict("5 mean-value-bounds", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# criterion 6: exhaustive discrete oracle

def test_criterion_6_discrete_oracle_suite():
    chain, f = reference_chain()
    hyp, expo = reference_discounts()
    t0 = time.perf_counter()
    rep_h = verify_structural_theorems(chain, f, hyp)
    rep_e = verify_structural_theorems(chain, f, expo)
    elapsed = time.perf_counter() - t0
    ok = (rep_h.a_ok and rep_e.a_ok          # (a) zero exceptions, both curves
          and rep_h.b_ok and rep_e.b_ok      # (b) zero exceptions, both curves
          and rep_e.c_pass == rep_e.c_total  # (c) 100% under exponential
          and rep_h.d_holds and rep_e.d_holds
          and elapsed < 60.0)
    assert verdict(
        "6 discrete-oracle", ok,
        f"hyperbolic[{rep_h.summary()}] exponential[{rep_e.summary()}] "
        f"time={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 7: exponential baseline

def test_criterion_7_exponential_baseline():
    grid = Grid(lower=(-2.0,), upper=(3.0,), counts=(120,))
    rep = run_exponential_baseline(grid, alpha=0.5, f=put_payoff(1.0))
    ok = (rep.sup_gap < 1e-3 and rep.di_gap < 1e-12 and rep.theta_fixed
          and all(dom for _, dom in rep.battery))
    assert verdict("7 exponential-baseline", ok,
                   f"sup_gap={rep.sup_gap:.2e} di_gap={rep.di_gap:.2e} "
                   f"theta_fixed={rep.theta_fixed}")


# ---------------------------------------------------------------------------
# criterion 8: byte-identical outputs across thread counts

def _determinism_bundle(stage, threads: int) -> None:
    # reduced-budget replicas of the pipelines behind criteria 2-5
    table = barrier_mc_quadrature_table([(0.0, 0.5), (0.2, 0.5), (0.0, 0.7)],
                                        beta=1.0, a=1.0, n_paths=600, seed=42,
                                        dt=2e-3, t_tail=10.0, threads=threads)
    write_table_csv(stage / "pairs.csv", ["y2", "c", "mc", "mc_se", "quad"], table)

    grid = Grid(lower=(-1.0, -1.0), upper=(1.0, 1.0), counts=(9, 9))
    scn = ButterflyScenario(beta=1.0, a=1.0, grid=grid, b_values=(0.0, 0.6))
    study = run_butterfly(scn, RunBudget(n_paths=400, seed=42, dt=4e-3,
                                         t_tail=10.0, threads=threads))
    for case in study.cases:
        write_value_field_csv(stage / f"j_mc_{case.b:.3f}.csv", case.mc_field)
    write_mask_pgm(stage / "r_star.pgm", study.search.R_star.mask_on(grid), grid)
    write_value_field_csv(stage / "j_star.csv",
                          study.search.final_report.value_field)

    stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0))
    rep = mean_value_bounds_check(np.zeros(3), 0.4, stop, inv_quad_payoff(),
                                  HyperbolicDiscount(1.0), n_paths=400, seed=42,
                                  dt=1e-2, t_tail=20.0, n_paths_k=400)
    write_table_csv(stage / "mean_value.csv",
                    ["k_r", "k_r_mc", "j_center", "ball_avg"],
                    [[rep.k_r, rep.k_r_mc, rep.j_center, rep.ball_avg]])


def test_criterion_8_determinism(tmp_path):
    digests = {}
    for threads in (1, 4, 8):
        stage = tmp_path / f"threads{threads}"
        stage.mkdir()
        _determinism_bundle(stage, threads)
        digests[threads] = {p.name: p.read_bytes() for p in sorted(stage.iterdir())}
    names = sorted(digests[1])
    mismatched = [n for n in names
                  if not (digests[1][n] == digests[4][n] == digests[8][n])]
    ok = not mismatched and len(names) >= 5
    assert verdict("8 determinism", ok,
                   f"files={len(names)} mismatched={mismatched}")
