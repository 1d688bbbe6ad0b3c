"""stopgame: time-inconsistent optimal stopping under non-exponential discounting.

The package evaluates continuation values J(x, R) for stopping policies R,
classifies states into stop/indifferent/continue, applies the best-response
operator, finds and verifies equilibria, improves them by intersection, and
reproduces the planar Brownian barrier study including its threshold a_star.
"""

from .discounting import (DIReport, DiscountCurve, ExponentialDiscount,
                          HyperbolicDiscount, LaplaceMixture, TabulatedDiscount,
                          check_decreasing_impatience, eval_discount,
                          exp_weighted_integral, laplace_mixture_of, make_discount,
                          tail_horizon)
from .dynamics import (BrownianMotion, ItoDiffusion, PathSegment, RngStream,
                       SimulationResult, ball_exit_lt, discounted_exit_factor,
                       first_passage_batch, halfspace_hit_lt, ito_preset,
                       simulate_until, two_sided_barrier_lt)
from .regions import (Ball, EmptySpace, FullSpace, Grid, HalfSpace, Intersection,
                      PolicyRegion, RegionProbe, Slab, Union, barrier_region,
                      collar_cells, first_entry_vs_hit, grid_closure, parse_region,
                      region_complement, region_intersection, region_union,
                      regularity_score)
from .valuation import (PayoffField, RotationCheck, ValueField,
                        barrier_quadrature_field, butterfly_payoff, constant_payoff,
                        estimate_J_mc, grid_tabulated_payoff, inv_quad_payoff,
                        mean_value_bounds_check, named_payoff, put_payoff,
                        quadrature_J_barrier, rotation_consistency)
from .equilibrium import (Classification, Direction, EquilibriumReport,
                          IterationTrace, Label, ValuationBudget, classify,
                          improve_pair, iterate_theta, search_optimal, theta,
                          value_function, verify_equilibrium)
from .discrete_oracle import (FiniteChain, biased_walk, chain_from_csv,
                              enumerate_equilibria, exact_J, first_entry_value,
                              iterate_theta_exact, symmetric_walk, theta_exact,
                              verify_structural_theorems)
from .scenarios import (ButterflyScenario, RunBudget, reference_chain,
                        reference_discounts, run_butterfly,
                        run_exponential_baseline, solve_a_star)

__version__ = "0.1.0"
