# Polar factorization of an affine map into a transport and a rotation.
import numpy as np

from wiener_ot.polar import candidate_rotations, factorize, minimality_check, parse_map

V = parse_map("rotation:30,1,0", 2)
res = factorize(V, 4096, 0)
print("transport part\n", np.round(res.T.A, 12), res.T.b)
print("rotation part\n", np.round(res.s.matrix, 6))
print("identity residual", res.identity_residual, "rotation test", res.rotation.passed)

# the recovered rotation minimizes M_v over random candidates
rows, ok = minimality_check(V.displacement, res.s.alpha, candidate_rotations(2, 20, 1), 2, 4096, 0)
print("M_v", round(rows[0].value, 4), "minimal", ok)
