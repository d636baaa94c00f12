# Gaussian Brenier maps, their potentials and the empirical map error.
import numpy as np

from wiener_ot.densities import gaussian_parameters
from wiener_ot.maps import coupled_clouds, duality_residual, gaussian_brenier, potential_of, projection_ladder
from wiener_ot.densities import parse_density
from wiener_ot.ot import solve_exact

m, cov, L = gaussian_parameters("scale:2,3", 2)
T = gaussian_brenier(np.zeros(2), np.eye(2), m, cov)
print("map matrix\n", T.A)

# T = I + grad phi, and the conjugate pair satisfies the duality inequality
pair = potential_of(T)
x, y = coupled_clouds(L, 2048, 0)
res = duality_residual(pair, solve_exact(x, y))
print("on support", res.on_support_max, "off support", res.off_support_min)

# the projection ladder grows with the number of kept coordinates
ladder = projection_ladder(parse_density("scale:2,2,2", 8), (1, 2, 3, 8), 2048, 0)
print("ladder", np.round(ladder.values, 3))
