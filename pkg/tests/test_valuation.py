import math

import numpy as np
import pytest

from stopgame.discounting import ExponentialDiscount, HyperbolicDiscount
from stopgame.dynamics import BrownianMotion, halfspace_hit_lt
from stopgame.regions import (Ball, EmptySpace, FullSpace, Grid, HalfSpace,
                              PolicyRegion, barrier_region, collar_cells)
from stopgame.valuation import (SQRT2, CapActiveError, ValueField,
                                barrier_quadrature_field, butterfly_payoff,
                                constant_payoff, estimate_J_mc, grid_tabulated_payoff,
                                inv_quad_payoff, mean_value_bounds_check, named_payoff,
                                put_payoff, quadrature_J_barrier, rotation_consistency)


@pytest.fixture
def grid12():
    return Grid(lower=(-1.2, -1.2), upper=(1.2, 1.2), counts=(12, 12))


class TestPayoffs:
    def test_butterfly_cap(self):
        f = butterfly_payoff(1.0)
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.3, 0.0]])
        assert f.eval(pts) == pytest.approx([0.0, 1.0, 0.3])
        assert f.sup == 1.0

    def test_put_and_constant(self):
        assert put_payoff(1.0).eval(np.array([[0.4]]))[0] == pytest.approx(0.6)
        assert constant_payoff(0.7).eval(np.zeros((3, 2))) == pytest.approx([0.7] * 3)

    def test_named_registry(self):
        assert named_payoff("butterfly", a=2.0).params["a"] == 2.0
        with pytest.raises(ValueError):
            named_payoff("nope")

    def test_grid_tabulated(self):
        grid = Grid(lower=(0.0,), upper=(1.0,), counts=(4,))
        f = grid_tabulated_payoff(grid, np.array([1.0, 2.0, 3.0, 4.0]))
        assert f.eval(np.array([[0.3]]))[0] == 2.0
        assert f.sup == 4.0


class TestQuadratureBarrier:
    def test_value_at_barrier(self):
        for c in (0.2, 0.7):
            assert quadrature_J_barrier(c, c, 1.0, 2.0) == pytest.approx(SQRT2 * c,
                                                                         rel=1e-9)
            assert quadrature_J_barrier(-c, c, 1.0, 2.0) == pytest.approx(SQRT2 * c,
                                                                         rel=1e-9)

    def test_no_discounting_limit(self):
        # beta -> 0 makes the stopped value a martingale: sqrt(2) c everywhere
        for y2 in (0.0, 0.3, 0.69):
            v = quadrature_J_barrier(y2, 0.7, 1e-9, 2.0)
            assert v == pytest.approx(SQRT2 * 0.7, rel=1e-4)

    def test_even_and_monotone_in_start(self):
        c = 0.7
        ys = np.linspace(0.0, c, 12)
        vals = [quadrature_J_barrier(y, c, 1.0, 2.0) for y in ys]
        for y, v in zip(ys, vals):
            assert quadrature_J_barrier(-y, c, 1.0, 2.0) == pytest.approx(v, rel=1e-12)
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            quadrature_J_barrier(0.8, 0.7, 1.0, 2.0)
        with pytest.raises(CapActiveError):
            quadrature_J_barrier(0.0, 0.9, 1.0, 1.0)   # c > a / sqrt(2)

    def test_field_matches_pointwise_values(self, grid12):
        field = barrier_quadrature_field(grid12, 0.8, 1.0, 1.0)
        centers = grid12.centers()
        y2 = (centers[:, 1] - centers[:, 0]) / SQRT2
        c = 0.8 / SQRT2
        k = int(np.argmin(np.abs(np.abs(y2) - 0.0)))   # a deep off-region cell
        expect = quadrature_J_barrier(abs(y2[k]), c, 1.0, 1.0)
        assert field.values.ravel()[k] == pytest.approx(expect, rel=1e-12)
        inside = np.abs(y2) >= c
        f = butterfly_payoff(1.0).eval(centers)
        assert field.values.ravel()[inside] == pytest.approx(f[inside], abs=0)


class TestEstimateJmc:
    def test_empty_region_gives_zero(self, grid12):
        field = estimate_J_mc(BrownianMotion(2),
                              PolicyRegion.from_analytic(EmptySpace()),
                              butterfly_payoff(1.0), HyperbolicDiscount(1.0), grid12,
                              n_paths=50, seed=1, dt=1e-2, t_tail=0.5)
        assert np.all(field.values == 0.0)
        assert np.all(field.std_errs == 0.0)

    def test_full_space_recovers_payoff(self, grid12):
        f = constant_payoff(0.7)
        field = estimate_J_mc(BrownianMotion(2),
                              PolicyRegion.from_analytic(FullSpace()), f,
                              HyperbolicDiscount(1.0), grid12,
                              n_paths=100, seed=1, dt=1e-3, t_tail=1.0)
        assert field.values == pytest.approx(np.full((12, 12), 0.7), abs=2e-3)

    def test_off_region_matches_quadrature(self, grid12):
        b, beta, a = 0.9, 1.0, 1.0
        R = PolicyRegion.from_analytic(barrier_region(b), grid12)
        mc = estimate_J_mc(BrownianMotion(2), R, butterfly_payoff(a),
                           HyperbolicDiscount(beta), grid12, n_paths=1500, seed=3,
                           dt=2e-3, t_tail=25.0)
        quad = barrier_quadrature_field(grid12, b, beta, a)
        off = ~R.mask & ~collar_cells(R, grid12)
        assert off.any()
        gap = np.abs(mc.values[off] - quad.values[off])
        assert np.all(gap <= 3.0 * np.maximum(mc.std_errs[off], 1e-12) + 5e-3)

    def test_se_scaling(self, grid12):
        R = PolicyRegion.from_analytic(barrier_region(0.9), grid12)
        args = (BrownianMotion(2), R, butterfly_payoff(1.0), HyperbolicDiscount(1.0),
                grid12)
        f1 = estimate_J_mc(*args, n_paths=400, seed=5, dt=5e-3, t_tail=20.0)
        f4 = estimate_J_mc(*args, n_paths=1600, seed=5, dt=5e-3, t_tail=20.0)
        off = ~R.mask
        ratio = np.median(f1.std_errs[off]) / np.median(f4.std_errs[off])
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_monotone_in_horizon(self, grid12):
        R = PolicyRegion.from_analytic(barrier_region(1.1), grid12)
        args = (BrownianMotion(2), R, butterfly_payoff(1.0), HyperbolicDiscount(1.0),
                grid12)
        short = estimate_J_mc(*args, n_paths=300, seed=7, dt=5e-3, t_tail=2.0)
        longer = estimate_J_mc(*args, n_paths=300, seed=7, dt=5e-3, t_tail=8.0)
        assert np.all(longer.values >= short.values - 1e-12)
        assert np.all(longer.values - short.values <= short.truncation_bound + 1e-12)

    def test_threads_do_not_change_bytes(self, grid12):
        R = PolicyRegion.from_analytic(barrier_region(0.9), grid12)
        args = (BrownianMotion(2), R, butterfly_payoff(1.0), HyperbolicDiscount(1.0),
                grid12)
        kw = dict(n_paths=200, seed=9, dt=5e-3, t_tail=5.0)
        f1 = estimate_J_mc(*args, threads=1, **kw)
        f4 = estimate_J_mc(*args, threads=4, **kw)
        assert np.array_equal(f1.values, f4.values)
        assert np.array_equal(f1.std_errs, f4.std_errs)

    def test_value_field_validation(self, grid12):
        with pytest.raises(ValueError):
            ValueField(grid=grid12, values=np.zeros((12, 12)),
                       std_errs=-np.ones((12, 12)),
                       truncation_bound=np.zeros((12, 12)), n_paths=10)


class TestRotationConsistency:
    def test_stop_region_start(self):
        R = PolicyRegion.from_analytic(barrier_region(0.5))
        chk = rotation_consistency([1.0, 0.0], R, butterfly_payoff(1.0),
                                   HyperbolicDiscount(1.0), n_paths=400, seed=11,
                                   dt=1e-3, t_tail=10.0)
        # x is inside the stopping region: both sides give roughly f(x) = 1.0
        assert chk.lhs == pytest.approx(1.0, abs=0.05)
        assert chk.consistent

    def test_empty_region(self):
        R = PolicyRegion.from_analytic(EmptySpace())
        chk = rotation_consistency([0.3, -0.1], R, butterfly_payoff(1.0),
                                   HyperbolicDiscount(1.0), n_paths=200, seed=11,
                                   dt=1e-2, t_tail=2.0)
        assert chk.lhs == 0.0 and chk.rhs == 0.0

    def test_off_region_agreement(self):
        R = PolicyRegion.from_analytic(barrier_region(0.8))
        chk = rotation_consistency([0.3, -0.1], R, butterfly_payoff(1.0),
                                   HyperbolicDiscount(1.0), n_paths=4000, seed=13,
                                   dt=2e-3, t_tail=25.0)
        assert chk.consistent
        # both sides also agree with the exact quadrature value
        exact = quadrature_J_barrier((-0.1 - 0.3) / SQRT2, 0.8 / SQRT2, 1.0, 1.0)
        assert chk.lhs == pytest.approx(exact, abs=3.0 * chk.lhs_se + 5e-3)
        assert chk.rhs == pytest.approx(exact, abs=3.0 * chk.rhs_se + 5e-3)


class TestMeanValueBounds:
    def test_small_ball_factor_near_one(self):
        stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0))
        rep = mean_value_bounds_check(np.zeros(3), 0.02, stop, inv_quad_payoff(),
                                      HyperbolicDiscount(1.0), n_paths=300, seed=1,
                                      dt=5e-3, t_tail=30.0, n_paths_k=300)
        assert rep.k_r > 0.999
        assert rep.lower_ok and rep.upper_ok

    def test_exponential_halfspace_reduction(self):
        # constant payoff on the boundary plane: J(x) = K E[exp(-alpha rho)]
        # which reduces to the one-dimensional hitting transform
        stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0))
        from stopgame.dynamics import RngStream, first_passage_batch

        res = first_passage_batch(BrownianMotion(3), np.zeros(3), stop.probe(),
                                  dt=5e-3, horizon=60.0,
                                  rng=RngStream(2, 0).generator(), n_paths=1500)
        vals = np.where(np.isfinite(res.hit_times),
                        np.exp(-0.5 * np.where(np.isfinite(res.hit_times),
                                               res.hit_times, 0.0)), 0.0)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        exact = halfspace_hit_lt(0.5, 1.0)
        assert vals.mean() == pytest.approx(exact, abs=3.0 * se + 5e-3)

    def test_bounds_hold_at_moderate_radius(self):
        stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0))
        rep = mean_value_bounds_check(np.zeros(3), 0.5, stop, inv_quad_payoff(),
                                      HyperbolicDiscount(1.0), n_paths=1200, seed=3,
                                      dt=5e-3, t_tail=80.0, n_paths_k=2000)
        assert rep.lower_ok and rep.upper_ok
        assert rep.k_r_mc == pytest.approx(rep.k_r, abs=3.0 * rep.k_r_mc_se + 2e-3)

    def test_ball_outside_domain_rejected(self):
        stop = PolicyRegion.from_analytic(HalfSpace([0.0, 0.0, 1.0], 1.0))
        with pytest.raises(ValueError):
            mean_value_bounds_check(np.array([0.0, 0.0, 0.9]), 0.5, stop,
                                    inv_quad_payoff(), HyperbolicDiscount(1.0),
                                    n_paths=100, seed=1, dt=1e-2, t_tail=5.0)
