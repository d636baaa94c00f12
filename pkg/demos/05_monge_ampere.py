# Monge-Ampere residuals, interpolation and the submartingale trace.
import numpy as np

from wiener_ot.densities import gaussian_parameters
from wiener_ot.gaussian import GaussianSpace, sample_standard
from wiener_ot.maps import gaussian_brenier, potential_of
from wiener_ot.monge_ampere import (entropy_transport_check, interpolation_check, jacobian_residual,
                                    logdet2_nonincreasing, submartingale_trace)

m, cov, L = gaussian_parameters("scale:2", 1)
T = gaussian_brenier([0.0], [[1.0]], m, cov)
cloud = sample_standard(GaussianSpace(1), 4096, 0)
print("max jacobian residual", jacobian_residual(L, T, cloud).max_abs_residual)

# displacement interpolation pushes forward correctly and log det2 decreases in t
rows = interpolation_check(potential_of(T), [k / 10 for k in range(10)], cloud, T)
print("log det2 nonincreasing", logdet2_nonincreasing(rows)[0])

r = entropy_transport_check(gaussian_parameters("unit", 1), (m, cov, L), 4096, 0)
print("entropy-transport slack", round(r.slack, 3), r.verdict)

tr = submartingale_trace("abs1", [0, 1], cloud)
print("abs gap", np.round(tr.mc_gap, 4), "expected sqrt(2/pi)", round(np.sqrt(2 / np.pi), 4))
