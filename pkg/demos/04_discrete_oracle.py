"""Exhaustive ground truth on a seven-state chain.

Every one of the 128 stopping policies is priced exactly, the best response
computed, and the fixed points enumerated, under both a hyperbolic and an
exponential curve.  The structural checks mirror the continuous theory:
one-step decrease lands on a fixed point, nested equilibria dominate, the
pairwise-intersection improvement lifts values, and a value-dominant
equilibrium exists.
"""

import numpy as np

from stopgame import (enumerate_equilibria, reference_chain, reference_discounts,
                      verify_structural_theorems)
from stopgame.discrete_oracle import subset_mask

chain, payoff = reference_chain()
hyp, expo = reference_discounts()
print("chain: seven states, absorbing ends, lazy symmetric walk inside")
print("payoff ramp:", payoff, "\n")

for name, curve in [("hyperbolic beta=1", hyp), ("exponential alpha=0.5", expo)]:
    enum = enumerate_equilibria(chain, payoff, curve)
    print(f"=== {name}: {len(enum.equilibria)} equilibria ===")
    for bits in enum.equilibria:
        mask = subset_mask(chain, bits)
        states = "".join("x" if m else "." for m in mask)
        V = np.maximum(payoff, enum.values[bits])
        print(f"  policy {states}   V = {np.array2string(V, precision=3)}")
    rep = verify_structural_theorems(chain, payoff, curve)
    print(f"  checks: {rep.summary()}\n")
