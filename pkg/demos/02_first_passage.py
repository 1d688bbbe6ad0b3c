"""First-passage simulation with the bridge-crossing correction.

Simulates the exit of a Brownian path from a symmetric interval and compares
against closed forms: the mean exit time, the exponential transform, and the
hyperbolically discounted exit.  Then shows what the crossing correction buys
by re-running with it switched off.
"""

import math

import numpy as np

from stopgame import (BrownianMotion, HyperbolicDiscount, PolicyRegion, RngStream,
                      Slab, discounted_exit_factor, first_passage_batch,
                      laplace_mixture_of, two_sided_barrier_lt)

C = 1.0
region = PolicyRegion.from_analytic(Slab([1.0], -C, C).complement(),
                                    provenance=f"|x| >= {C}")

print(f"=== exit of Brownian motion from (-{C}, {C}), start 0 ===")
res = first_passage_batch(BrownianMotion(1), np.zeros(1), region.probe(),
                          dt=1e-3, horizon=40.0,
                          rng=RngStream(7, 0).generator(), n_paths=20_000)
tau = res.hit_times
se = tau.std(ddof=1) / math.sqrt(len(tau))
print(f"  mean exit time  {tau.mean():.4f} +- {se:.4f}   (exact {C * C:.4f})")

mc_exp = np.exp(-0.5 * tau).mean()
print(f"  E[exp(-tau/2)]  {mc_exp:.4f}            (exact {two_sided_barrier_lt(0.5, C, 0.0):.4f})")

mix = laplace_mixture_of(HyperbolicDiscount(1.0))
exact_hyp = discounted_exit_factor(mix, lambda lam: two_sided_barrier_lt(lam, C, 0.0))
mc_hyp = (1.0 / (1.0 + tau)).mean()
print(f"  E[1/(1+tau)]    {mc_hyp:.4f}            (quadrature {exact_hyp:.4f})")

print("\n=== the sqrt(dt) bias without the crossing correction ===")
print("  dt        corrected bias    naive bias")
for i, dt in enumerate((1e-2, 1e-3)):
    row = []
    for bridge in (True, False):
        r = first_passage_batch(BrownianMotion(1), np.zeros(1), region.probe(),
                                dt=dt, horizon=40.0,
                                rng=RngStream(8, i).generator(), n_paths=20_000,
                                bridge=bridge)
        row.append(r.hit_times.mean() - C * C)
    print(f"  {dt:7.0e}   {row[0]:+9.4f}        {row[1]:+9.4f}")
print("  (naive detection overshoots by ~1.17 sqrt(dt); the bridge removes it)")
