"""Monte Carlo verifiers for transport inequalities against the Gaussian measure.

Each verifier returns an :class:`InequalityReport` comparing an estimated
left-hand side with an estimated right-hand side. The verdict only looks at
the slack ``rhs - lhs`` and the pooled standard error
``sqrt(se_lhs^2 + se_rhs^2)``.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import quad
from scipy.special import ndtr

from .densities import hermite_expansion_density, parse_density
from .gaussian import GaussianSpace, SampleCloud, estimate_entropy, sample_standard
from .hermite import HermiteExpansion, divergence, ou_resolvent
from .maps import coupled_clouds
from .ot import solve_exact, w1_from_cdfs
from .rng import derive_seed, stream

ABS_FLOOR = 1e-12


def classify(slack, pooled, k=3.0, floor=ABS_FLOOR):
    """``holds-with-equality`` within ``k`` sigma of zero, else ``holds`` or ``violated-beyond-3σ``."""
    band = k * pooled + floor
    if abs(slack) <= band:
        return "holds-with-equality"
    return "holds" if slack > 0 else "violated-beyond-3σ"


@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def pooled_se(self):
        return float(np.hypot(self.lhs_se, self.rhs_se))

    @property
    def verdict(self):
        return classify(self.slack, self.pooled_se)

    @property
    def passed(self):
        return self.verdict != "violated-beyond-3σ" and not self.extra.get("degenerate", False)

    def to_dict(self):
        return {
            "name": self.name,
            "lhs": self.lhs,
            "lhs_se": self.lhs_se,
            "rhs": self.rhs,
            "rhs_se": self.rhs_se,
            "slack": self.slack,
            "pooled_se": self.pooled_se,
            "verdict": self.verdict,
            "params": self.params,
            "extra": self.extra,
        }


def _mean_se(v, w=None):
    v = np.asarray(v, dtype=float)
    if w is None:
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    m = float(w @ v)
    return m, float(np.sqrt(np.sum(w**2 * (v - m) ** 2)))


# ---------------------------------------------------------------- Talagrand


def talagrand_report(L, n=4096, seed=0, coupling="common"):
    """Squared Wasserstein distance between ``mu`` and ``L . mu`` against ``2 E[L log L]``."""
    if isinstance(L, str):
        raise TypeError("pass a DensityField; use parse_density for preset strings")
    x, y = coupled_clouds(L, n, seed, coupling)
    c = solve_exact(x, y, 2)
    per = np.sum((x.points[c.rows] - y.points[c.cols]) ** 2, axis=1)
    lhs, lhs_se = c.cost, _mean_se(per)[1]
    ent, ent_se = estimate_entropy(L, y)
    return InequalityReport(
        "talagrand", lhs, lhs_se, 2.0 * ent, 2.0 * ent_se,
        {"density": L.name, "dim": L.dim, "n": n, "seed": seed, "coupling": coupling},
    )


def random_density_suite(count=100, seed=0, max_dim=8):
    """Preset strings for a randomized Talagrand sweep.

    Cycles through shifts, scalings, positive Hermite polynomials on ``x_1`` and
    two-component mixtures with widths below one (bounded density ratio).
    """
    rng = stream(seed, "density-suite")
    dims = [d for d in (1, 2, 4, 8) if d <= max_dim]
    out = []
    for k in range(count):
        d = int(rng.choice(dims))
        kind = k % 4
        if kind == 0:
            h = rng.normal(0.0, 0.8, size=d)
            spec = "shift:" + ",".join(f"{v:.4f}" for v in h)
        elif kind == 1:
            s = np.exp(rng.uniform(-0.5, 0.7, size=min(d, 3)))
            spec = "scale:" + ",".join(f"{v:.4f}" for v in s)
        elif kind == 2:
            # 1 + a1 He1 + a2 He2 stays positive iff a1^2 < 4 a2 (1 - a2), 0 < a2 < 1
            a2 = rng.uniform(0.05, 0.9)
            lim = 2.0 * np.sqrt(a2 * (1.0 - a2))
            a1 = rng.uniform(-0.9, 0.9) * lim
            spec = f"hermite-poly:1,{a1:.4f},{a2:.4f}"
        else:
            m = rng.normal(0.0, 1.0, size=2)
            s = rng.uniform(0.4, 0.95, size=2)
            w = rng.uniform(0.2, 0.8)
            spec = f"gauss-mixture:{w:.4f},{m[0]:.4f},{s[0]:.4f};{1 - w:.4f},{m[1]:.4f},{s[1]:.4f}"
        out.append((spec, d))
    return out


# ---------------------------------------------------------------- gauge bounds


@dataclass(frozen=True)
class Region:
    """``halfspace`` ``{(u, x) >= a}`` or ``ballc`` ``{|x - c| >= r}``."""

    kind: str
    vec: np.ndarray
    level: float

    @property
    def dim(self):
        return self.vec.size

    def gauge(self, x):
        """Cameron-Martin distance from ``x`` to the region."""
        if self.kind == "halfspace":
            return np.maximum(self.level - x @ self.vec, 0.0) / np.linalg.norm(self.vec)
        return np.maximum(self.level - np.linalg.norm(x - self.vec, axis=1), 0.0)

    def contains(self, x):
        return self.gauge(x) == 0.0

    def far_set(self, eps):
        """``B``: points at gauge distance at least ``eps`` (complement of the enlargement)."""
        return lambda x: self.gauge(x) >= eps

    def measure(self):
        """``mu(A)`` in closed form."""
        if self.kind == "halfspace":
            return float(ndtr(-self.level / np.linalg.norm(self.vec)))
        return float(_ball_law(self).sf(self.level**2))

    def far_measure(self, eps):
        if self.kind == "halfspace":
            return float(ndtr((self.level / np.linalg.norm(self.vec)) - eps))
        r = self.level - eps
        return float(_ball_law(self).cdf(r * r)) if r > 0 else 0.0

    def gauge_second_moment(self):
        """``E[q_A^2]`` by one-dimensional quadrature."""
        if self.kind == "halfspace":
            al = self.level / np.linalg.norm(self.vec)
            val, _ = quad(lambda z: (al - z) ** 2 * stats.norm.pdf(z), -np.inf, al, epsabs=1e-13)
            return float(val)
        law = _ball_law(self)
        r = self.level
        val, _ = quad(lambda s: (r - np.sqrt(s)) ** 2 * law.pdf(s), 0.0, r * r, epsabs=1e-13, limit=200)
        return float(val)


def _ball_law(region):
    nc = float(region.vec @ region.vec)
    return stats.ncx2(region.dim, nc) if nc > 0 else stats.chi2(region.dim)


def parse_region(spec):
    """``halfspace:u1,...,ud,a`` or ``ballc:c1,...,cd,r``."""
    kind, _, arg = spec.partition(":")
    vals = np.array([float(t) for t in arg.split(",") if t.strip()])
    if kind not in ("halfspace", "ballc") or vals.size < 2:
        raise ValueError(f"bad region spec {spec!r}")
    if kind == "halfspace" and not np.any(vals[:-1]):
        raise ValueError("halfspace normal must be nonzero")
    if kind == "ballc" and vals[-1] <= 0:
        raise ValueError("ball radius must be positive")
    return Region(kind, vals[:-1], float(vals[-1]))


def gauge_report(region, eps, n=100_000, seed=0):
    """Gauge bound ``mu(A) <= exp(-E[q_A^2]/2)`` and separation bound
    ``mu(A) mu(B) <= exp(-eps^2/4)`` for ``B`` at gauge distance ``>= eps``.

    Returns the two reports; quadrature oracles are recorded under ``extra``.
    """
    if isinstance(region, str):
        region = parse_region(region)
    x = sample_standard(GaussianSpace(region.dim), n, seed).points
    q = region.gauge(x)
    ina = (q == 0.0).astype(float)
    inb = region.far_set(eps)(x).astype(float)
    pa, pa_se = _mean_se(ina)
    pb, pb_se = _mean_se(inb)
    q2, q2_se = _mean_se(q * q)
    rhs = float(np.exp(-0.5 * q2))
    params = {"region": region.kind, "vec": region.vec.tolist(), "level": region.level, "eps": eps,
              "n": n, "seed": seed}
    gauge = InequalityReport(
        "gauge", pa, pa_se, rhs, 0.5 * rhs * q2_se, params,
        {"degenerate": pa == 0.0, "mu_A_exact": region.measure(),
         "E_q2_quadrature": region.gauge_second_moment(),
         "rhs_quadrature": float(np.exp(-0.5 * region.gauge_second_moment()))},
    )
    prod = pa * pb
    prod_se = float(np.sqrt((pb * pa_se) ** 2 + (pa * pb_se) ** 2))
    sep = InequalityReport(
        "separation", prod, prod_se, float(np.exp(-0.25 * eps * eps)), 0.0, params,
        {"degenerate": pa == 0.0 or pb == 0.0,
         "product_exact": region.measure() * region.far_measure(eps)},
    )
    return gauge, sep


# ---------------------------------------------------------------- d_1 flow bound


@dataclass(frozen=True)
class FlowTrace:
    times: np.ndarray
    paths: np.ndarray
    log_lambda: np.ndarray
    drift: str
    min_step: float
    blown_up: bool = False

    def lambda_final(self):
        return np.exp(self.log_lambda[:, -1])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.paths.shape[2]
        w.writerow(["t", "point"] + [f"x{i}" for i in range(d)] + ["Lambda"])
        for k, t in enumerate(self.times):
            for p in range(self.paths.shape[0]):
                w.writerow([repr(float(t)), p] + [repr(float(v)) for v in self.paths[p, k]]
                           + [repr(float(np.exp(self.log_lambda[p, k])))])
        return buf.getvalue()


class FlowField:
    """Drift ``sigma_t = sigma / (t + (1-t) L)`` with ``sigma = (I + L_OU)^{-1} grad L``.

    ``L`` is a Hermite expansion normalized to mean one; all derivatives and the
    Gaussian divergence are exact on the expansion.
    """

    def __init__(self, expansion):
        f = expansion.scale(1.0 / expansion.mean)
        self.L = f
        self.dim = f.dim
        self.grad = f.gradient()
        self.sigma = ou_resolvent(self.grad)
        self.div_sigma = divergence(self.sigma)

    def _eval(self, exps, x):
        return np.stack([e(x) for e in exps], axis=1)

    def sigma_at(self, x):
        return self._eval(self.sigma, x)

    def rhs(self, t, x):
        """Velocity ``-sigma_t(x)`` and the rate ``(delta sigma_t)(x)`` of ``log Lambda``."""
        lv = self.L(x)
        g = t + (1.0 - t) * lv
        if np.any(g <= 0):
            raise FloatingPointError("t + (1-t) L vanished along the flow")
        s = self.sigma_at(x)
        gl = self._eval(self.grad, x)
        ds = self.div_sigma(x) / g + (1.0 - t) * np.sum(gl * s, axis=1) / g**2
        return -s / g[:, None], ds


def integrate_flow(field_, x0, t0=0.0, t1=1.0, steps=1000, record_every=10, min_step=1e-8):
    """RK4 on ``(x, log Lambda)``; a step is halved while ``|dx| > 0.1 max(|x|, 1)``."""
    x = np.array(x0, dtype=float)
    ll = np.zeros(x.shape[0])
    h0 = (t1 - t0) / steps
    t = t0
    times, paths, lls = [t], [x.copy()], [ll.copy()]
    smallest = abs(h0)
    k = 0
    blown = False
    while (t1 - t) * np.sign(h0) > 1e-15:
        h = h0 if abs(t1 - t) > abs(h0) * (1 + 1e-12) else t1 - t
        while True:
            k1x, k1l = field_.rhs(t, x)
            k2x, k2l = field_.rhs(t + h / 2, x + h / 2 * k1x)
            k3x, k3l = field_.rhs(t + h / 2, x + h / 2 * k2x)
            k4x, k4l = field_.rhs(t + h, x + h * k3x)
            dx = h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            size = np.linalg.norm(dx, axis=1)
            if np.all(size <= 0.1 * np.maximum(np.linalg.norm(x, axis=1), 1.0)):
                break
            h /= 2
            smallest = min(smallest, abs(h))
            if abs(h) < min_step:
                blown = True
                break
        if blown or not np.all(np.isfinite(dx)):
            blown = True
            break
        x = x + dx
        ll = ll + h / 6 * (k1l + 2 * k2l + 2 * k3l + k4l)
        t = t + h
        k += 1
        if k % record_every == 0 or (t1 - t) * np.sign(h0) <= 1e-15:
            times.append(t)
            paths.append(x.copy())
            lls.append(ll.copy())
    return FlowTrace(np.array(times), np.stack(paths, axis=1), np.stack(lls, axis=1),
                     "sigma/(t+(1-t)L), sigma=(I+L)^-1 grad L", smallest, blown)


def _nu_cdf_1d(expansion):
    """CDF of ``L . mu`` in one dimension, using ``int_{-inf}^t He_k phi = -He_{k-1}(t) phi(t)``."""
    f = expansion.scale(1.0 / expansion.mean)
    he = {}
    for (k,), c in f.coeffs.items():
        he[k] = c / np.sqrt(float(np.prod(np.arange(1, k + 1))))
    nmax = max(he)
    shifted = np.zeros(max(nmax, 1))
    for k, a in he.items():
        if k >= 1:
            shifted[k - 1] = a
    c0 = he.get(0, 0.0)

    def cdf(t):
        return c0 * ndtr(t) - np.polynomial.hermite_e.hermeval(t, shifted) * stats.norm.pdf(t)

    return cdf


def d1_flow_report(expansion, n=4096, seed=0, steps=1000, flow_points=100):
    """``d_1(L . mu, mu) <= E|(I + L_OU)^{-1} grad L|`` plus the flow identity ``Lambda_{0,1} = L``.

    In one dimension the left side is the exact quantile formula; otherwise the
    order-1 assignment cost between a Gaussian cloud and its image under the
    inverse flow (which samples ``L . mu``).
    """
    if not isinstance(expansion, HermiteExpansion):
        raise TypeError("d1_flow_report needs a HermiteExpansion density")
    if expansion.degree > 4 or expansion.dim > 3:
        raise ValueError("supported: degree <= 4 and dimension <= 3")
    flow = FlowField(expansion)
    density = hermite_expansion_density(expansion)
    space = GaussianSpace(expansion.dim)
    x = sample_standard(space, n, seed)
    rhs, rhs_se = _mean_se(np.linalg.norm(flow.sigma_at(x.points), axis=1))
    extra = {}
    if expansion.dim == 1:
        lhs, lhs_se = w1_from_cdfs(ndtr, _nu_cdf_1d(expansion)), 0.0
        val, _ = quad(lambda t: abs(flow.sigma_at(np.array([[t]]))[0, 0]) * stats.norm.pdf(t),
                      -np.inf, np.inf, epsabs=1e-12)
        extra["rhs_quadrature"] = float(val)
        extra["lhs_method"] = "quantile"
    else:
        back = integrate_flow(flow, x.points, 1.0, 0.0, steps, record_every=steps)
        if back.blown_up:
            raise FloatingPointError("inverse flow blew up while sampling")
        y = SampleCloud(back.paths[:, -1], None, seed, "pushforward")
        c = solve_exact(x, y, 1)
        per = np.linalg.norm(x.points[c.rows] - y.points[c.cols], axis=1)
        lhs, lhs_se = c.cost, _mean_se(per)[1]
        extra["lhs_method"] = "assignment"
    starts = sample_standard(space, flow_points, derive_seed(seed, "flow-start")).points
    trace = integrate_flow(flow, starts, 0.0, 1.0, steps)
    lv = density.value(starts)
    lam = trace.lambda_final()
    extra["flow_max_rel_error"] = float(np.max(np.abs(lam / lv - 1.0)))
    # H_0(t, x) = Lambda_{0,t}(x) (t + (1-t) L(phi_{0,t}(x))) along recorded times
    hs = []
    for k, t in enumerate(trace.times):
        hs.append(np.exp(trace.log_lambda[:, k]) * (t + (1 - t) * density.value(trace.paths[:, k])))
    hs = np.stack(hs, axis=1)
    extra["H_max_rel_drift"] = float(np.max(np.abs(hs / hs[:, :1] - 1.0)))
    extra["flow_blown_up"] = trace.blown_up
    extra["min_step"] = trace.min_step
    report = InequalityReport(
        "d1-flow", float(lhs), float(lhs_se), rhs, rhs_se,
        {"coeffs": {",".join(map(str, k)): v for k, v in sorted(expansion.coeffs.items())},
         "dim": expansion.dim, "n": n, "seed": seed, "steps": steps},
        extra,
    )
    return report, trace


def hermite_from_preset(spec, dim=1):
    """Hermite expansion for a ``hermite-poly`` preset string (coefficients on ``x_1``)."""
    kind, _, arg = spec.partition(":")
    if kind != "hermite-poly":
        raise ValueError("flow experiments need a hermite-poly preset")
    parse_density(spec, dim)  # positivity check
    return HermiteExpansion.from_he([float(t) for t in arg.split(",")], dim)
