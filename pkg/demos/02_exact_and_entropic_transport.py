# Exact and entropic transport between two small clouds.
import numpy as np

from wiener_ot.gaussian import SampleCloud
from wiener_ot.ot import check_cyclic_monotone, solve_entropic, solve_exact
from wiener_ot.rng import stream

rng = stream(0, "demo")
x = SampleCloud(rng.standard_normal((200, 2)))
y = SampleCloud(rng.standard_normal((200, 2)) + [2.0, 0.0])

exact = solve_exact(x, y)
print("exact cost", exact.cost)

# the optimal support is cyclically monotone
print("support check", check_cyclic_monotone(exact).verdict)

# the entropic cost approaches the exact one as eps shrinks
for eps in (1.0, 0.1, 0.01):
    print("eps", eps, "entropic cost", solve_entropic(x, y, eps).cost)

# a reflected pair is the standard counterexample
print("reflection pair", check_cyclic_monotone([(-1.0, 1.0), (1.0, -1.0)]).verdict)
