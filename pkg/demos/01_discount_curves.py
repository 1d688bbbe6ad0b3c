"""Discount curves and their exponential-mixture representation.

Walks through the three curve families, checks the log sub-additivity
property that separates time-consistent from time-inconsistent discounting,
and reconstructs the hyperbolic curve from its mixture of exponentials.
"""

import numpy as np

from stopgame import (ExponentialDiscount, HyperbolicDiscount, TabulatedDiscount,
                      check_decreasing_impatience, laplace_mixture_of)

print("=== curve values ===")
hyp = HyperbolicDiscount(beta=1.0)
expo = ExponentialDiscount(alpha=0.5)
for t in (0.0, 0.5, 1.0, 2.0, 10.0):
    print(f"  t={t:5.1f}   hyperbolic={hyp.eval(t):.4f}   exponential={expo.eval(t):.4f}")

print("\n=== decreasing impatience: d(s) d(t) <= d(s+t) ===")
grid = np.geomspace(0.1, 8.0, 10)
for name, curve in [("hyperbolic", hyp), ("exponential", expo)]:
    rep = check_decreasing_impatience(curve, grid)
    print(f"  {name:12s} holds={rep.holds}  worst gap={rep.worst_violation:+.2e}")

# a linear ramp discounts the near future too gently: the property fails
ramp = TabulatedDiscount([0.0, 0.6, 1.0, 1.2], [1.0, 0.4, 0.0, 0.0])
rep = check_decreasing_impatience(ramp, [0.6, 0.6])
print(f"  linear ramp  holds={rep.holds}  worst gap={rep.worst_violation:+.2e}"
      f"  witness={rep.witness}")

print("\n=== mixture of exponentials for the hyperbolic curve ===")
mix = laplace_mixture_of(hyp)
t = np.array([0.0, 1.0, 5.0, 25.0, 100.0])
recon = mix.reconstruct(t)
exact = hyp.eval(t)
print(f"  nodes: {len(mix.nodes)}")
for ti, ri, ei in zip(t, recon, exact):
    print(f"  t={ti:6.1f}   mixture={ri:.12f}   exact={ei:.12f}   err={abs(ri-ei):.1e}")
