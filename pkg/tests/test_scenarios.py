import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from stopgame.regions import Grid
from stopgame.scenarios import (ButterflyScenario, RunBudget,
                                run_butterfly, run_exponential_baseline,
                                solve_a_star)
from stopgame.valuation import SQRT2, constant_payoff, put_payoff


def residual_oracle(a_star: float, beta: float) -> float:
    """Independent residual of the threshold equation via adaptive quadrature.

    Substituting s = v^2 removes the square-root kink, then a plain
    Gauss-Kronrod rule on the half line is accurate to machine precision.
    """

    def integrand(v):
        z = np.sqrt(2.0 * beta) * v
        return 2.0 * v * np.exp(-v * v) * z * np.tanh(a_star * z)

    integral, _ = quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-13)
    return a_star * integral - 1.0


class TestAStar:
    def test_residual_against_independent_quadrature(self):
        a_star = solve_a_star(1.0, tol=1e-10)
        assert abs(residual_oracle(a_star, 1.0)) < 1e-8

    def test_matches_independent_bisection(self):
        a_pkg = solve_a_star(1.0, tol=1e-10)
        a_ora = brentq(lambda a: residual_oracle(a, 1.0), 0.1, 10.0, xtol=1e-12)
        assert a_pkg == pytest.approx(a_ora, abs=1e-9)

    def test_scaling_invariant(self):
        consts = [solve_a_star(b, tol=1e-12) * np.sqrt(b) for b in (0.25, 1.0, 4.0)]
        assert max(consts) - min(consts) < 1e-6

    def test_runs_fast(self):
        t0 = time.perf_counter()
        solve_a_star(1.0, tol=1e-10)
        assert time.perf_counter() - t0 < 1.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            solve_a_star(-1.0)
        with pytest.raises(ValueError):
            solve_a_star(1.0, tol=0.0)


class TestButterflyScenario:
    def make(self, b_values=(0.0, 0.6), counts=(9, 9)):
        grid = Grid(lower=(-1.0, -1.0), upper=(1.0, 1.0), counts=counts)
        return ButterflyScenario(beta=1.0, a=1.0, grid=grid, b_values=b_values)

    def test_rotation_is_orthogonal(self):
        scn = self.make()
        M = scn.rotation
        assert np.allclose(M @ M.T, np.eye(2), atol=1e-15)
        assert abs(np.linalg.det(M)) == pytest.approx(1.0, abs=1e-15)

    def test_admissible_range(self):
        scn = self.make()
        # sqrt(2) a* ~ 1.3385 exceeds the cap, so the cap binds
        assert scn.admissible_b_max == pytest.approx(1.0)
        assert scn.a_star == pytest.approx(0.9464750221, abs=1e-9)

    def test_region_masks_match_family(self):
        scn = self.make()
        R = scn.region(0.6)
        centers = scn.grid.centers()
        expect = np.abs(centers[:, 0] - centers[:, 1]) >= 0.6
        assert np.array_equal(R.mask.ravel(), expect)

    def test_unsorted_levels_rejected(self):
        with pytest.raises(ValueError):
            self.make(b_values=(0.6, 0.3))

    def test_small_study_end_to_end(self):
        scn = self.make(b_values=(0.0, 0.6))
        study = run_butterfly(scn, RunBudget(n_paths=500, seed=4, dt=4e-3,
                                             t_tail=15.0))
        assert study.optimality_label == "optimal-verified"
        for case in study.cases:
            assert case.admissible
            assert case.report.is_equilibrium
            assert case.agreement_sigma < 4.0
        assert study.dominance_violations == []
        assert study.search is not None
        assert study.search.final_report.is_equilibrium
        assert study.star_matches_top

    def test_barrier_zero_is_full_plane(self):
        scn = self.make(b_values=(0.0,))
        study = run_butterfly(scn, RunBudget(n_paths=300, seed=4, dt=2e-3,
                                             t_tail=5.0))
        case = study.cases[0]
        assert case.report.is_equilibrium
        f = scn.payoff().eval(scn.grid.centers()).reshape(scn.grid.counts)
        # V = f v J equals f when stopping is immediate everywhere
        assert case.quad_field.values == pytest.approx(f, abs=0)

    def test_payoff_at_barrier_matches_stop_value(self):
        scn = self.make(b_values=(0.6,))
        c = 0.6 / SQRT2
        from stopgame.valuation import quadrature_J_barrier

        assert quadrature_J_barrier(c, c, 1.0, 1.0) == pytest.approx(0.6, rel=1e-10)

    def test_large_cap_leaves_characterization_open(self):
        grid = Grid(lower=(-1.0, -1.0), upper=(1.0, 1.0), counts=(9, 9))
        scn = ButterflyScenario(beta=1.0, a=2.0, grid=grid, b_values=(0.4,))
        # cap above sqrt(2) a*: the study must not claim optimality
        assert scn.a > SQRT2 * scn.a_star
        assert scn.admissible_b_max == pytest.approx(SQRT2 * scn.a_star)
        study = run_butterfly(scn, RunBudget(n_paths=300, seed=6, dt=4e-3,
                                             t_tail=8.0))
        assert study.optimality_label == "characterization-open"
        assert study.cases[0].admissible


class TestExponentialBaseline:
    def test_put_scenario(self):
        grid = Grid(lower=(-2.0,), upper=(3.0,), counts=(100,))
        rep = run_exponential_baseline(grid, alpha=0.5, f=put_payoff(1.0))
        assert rep.sup_gap < 1e-3
        assert rep.theta_fixed
        assert rep.di_gap < 1e-12
        # perpetual-put structure: the stopping set is a left half-line
        flips = np.diff(rep.stop_mask.astype(int))
        assert np.all(flips <= 0)
        assert rep.stop_mask[0] and not rep.stop_mask[-1]
        assert all(dominated for _, dominated in rep.battery)

    def test_constant_payoff_stops_everywhere(self):
        grid = Grid(lower=(0.0,), upper=(1.0,), counts=(20,))
        rep = run_exponential_baseline(grid, alpha=1.0, f=constant_payoff(0.5))
        assert rep.stop_mask.all()
        assert np.all(rep.U == pytest.approx(0.5, abs=1e-12))
        assert rep.sup_gap < 1e-12

    def test_dimension_guard(self):
        grid = Grid(lower=(0.0, 0.0), upper=(1.0, 1.0), counts=(4, 4))
        with pytest.raises(ValueError):
            run_exponential_baseline(grid, alpha=1.0, f=constant_payoff(1.0))
