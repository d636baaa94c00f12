# Transport-entropy, gauge and d1 flow inequalities.
from wiener_ot.densities import parse_density
from wiener_ot.inequalities import d1_flow_report, gauge_report, hermite_from_preset, talagrand_report

# the shift saturates the transport-entropy bound, the scale does not
for spec in ("shift:1", "scale:2"):
    r = talagrand_report(parse_density(spec, 1), 4096, 0)
    print(spec, "lhs", round(r.lhs, 4), "rhs", round(r.rhs, 4), r.verdict)

# concentration of a half-space and separation of two sets
gauge, sep = gauge_report("halfspace:1,0", 1.0, 100_000, 0)
print("gauge", gauge.verdict, "separation", sep.verdict)

# d1 through the resolvent flow; equality holds for 0.5 + 0.5 x^2
rep, trace = d1_flow_report(hermite_from_preset("hermite-poly:1,0,0.5", 1), 4096, 0, steps=1000, flow_points=10)
print("d1", rep.lhs, "bound", rep.extra["rhs_quadrature"], "flow error", rep.extra["flow_max_rel_error"])
