"""Radon-Nikodym densities with respect to the standard Gaussian measure.

A :class:`DensityField` bundles evaluators for ``L``, ``log L`` and (when known)
``grad L`` and ``hess L``, plus two optional structural hooks used elsewhere:

* ``transport`` -- a monotone map ``T`` (gradient of a convex function) with
  ``T_# mu = L . mu``; it doubles as an exact sampler.
* ``marginal(k)`` -- the density of the law of the first ``k`` coordinates,
  i.e. ``E[L | x_1..x_k]`` viewed as a function of those coordinates.

Named presets (see :func:`parse_density`)::

    unit                          L = 1
    shift:h1,...,hk               N(h, I)
    scale:s1,...,sk               N(0, diag(s^2))
    hermite-poly:a0,a1,...,ak     L = sum_j a_j He_j(x_1) / a0
    gauss-mixture:w,m,s;w,m,s     first coordinate ~ sum w N(m, s^2)

Vectors shorter than the dimension are padded (zeros for shifts, ones for
scales).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import hermite_e, polynomial
from scipy.special import logsumexp, ndtr

from .hermite import HermiteExpansion

_LOG_2PI = np.log(2.0 * np.pi)


class PresetError(ValueError):
    """Unknown or malformed density / map preset."""


@dataclass(frozen=True)
class DensityField:
    dim: int
    log_value: Callable
    name: str = "custom"
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    transport: Optional[Callable] = None
    marginal: Optional[Callable] = None
    product_form: bool = False

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = _as_points(x, self.dim)
        return np.exp(self.log_value(x))

    def log(self, x):
        return self.log_value(_as_points(x, self.dim))

    @property
    def has_gradient(self):
        return self.gradient is not None

    @property
    def has_hessian(self):
        return self.hessian is not None

    def normalization(self, n=100_000, seed=0):
        """Monte Carlo ``E[L]`` under ``mu`` with its standard error."""
        from .rng import stream

        x = stream(seed, "normalization", self.name).standard_normal((n, self.dim))
        v = self.value(x)
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n))


def _as_points(x, dim):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


def normalize(field, n=100_000, seed=0):
    """Rescale ``field`` so that its Monte Carlo mean is one.

    Returns ``(normalized_field, estimate, stderr)`` where ``estimate`` is the
    pre-normalization mean. Structural hooks are dropped because they are tied
    to the original normalization.
    """
    est, se = field.normalization(n, seed)
    if not est > 0:
        raise ValueError(f"density {field.name!r} has non-positive mean {est}")
    shift = np.log(est)
    scaled = DensityField(
        dim=field.dim,
        log_value=lambda x: field.log_value(x) - shift,
        name=field.name,
        gradient=None if field.gradient is None else (lambda x: field.gradient(x) / est),
        hessian=None if field.hessian is None else (lambda x: field.hessian(x) / est),
        lower=None if field.lower is None else field.lower / est,
        upper=None if field.upper is None else field.upper / est,
    )
    return scaled, est, se


def unit_density(dim):
    return DensityField(
        dim=dim,
        log_value=lambda x: np.zeros(x.shape[0]),
        name="unit",
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros((x.shape[0], dim, dim)),
        lower=1.0,
        upper=1.0,
        transport=lambda x: np.array(x, dtype=float),
        marginal=unit_density,
        product_form=True,
    )


def gaussian_density(mean, cov, name=None):
    """Density of ``N(mean, cov)`` with respect to ``N(0, I)``.

    ``transport`` is the Brenier map ``x -> mean + cov^{1/2} x``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    dim = mean.shape[0]
    if cov.shape != (dim, dim):
        raise ValueError("covariance shape does not match mean")
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if evals.min() <= 0:
        raise ValueError("covariance must be positive definite")
    prec = (evecs / evals) @ evecs.T
    root = (evecs * np.sqrt(evals)) @ evecs.T
    logdet = np.sum(np.log(evals))

    def log_value(x):
        r = x - mean
        return -0.5 * np.einsum("ni,ij,nj->n", r, prec, r) - 0.5 * logdet + 0.5 * np.sum(x * x, axis=1)

    def grad_log(x):
        return x - (x - mean) @ prec

    def gradient(x):
        return np.exp(log_value(x))[:, None] * grad_log(x)

    def hessian(x):
        g = grad_log(x)
        return np.exp(log_value(x))[:, None, None] * (
            g[:, :, None] * g[:, None, :] + (np.eye(dim) - prec)[None]
        )

    # sup L is finite iff cov < I
    upper = None
    if evals.max() < 1.0:
        m = evecs.T @ mean
        upper = float(np.exp(np.sum(0.5 * m**2 / (1.0 - evals) - 0.5 * np.log(evals))))

    def marginal(k):
        return gaussian_density(mean[:k], cov[:k, :k])

    return DensityField(
        dim=dim,
        log_value=log_value,
        name=name or "gaussian",
        gradient=gradient,
        hessian=hessian,
        upper=upper,
        transport=lambda x: mean + x @ root,
        marginal=marginal,
        product_form=bool(np.allclose(cov, np.diag(np.diag(cov)))),
    )


def shift_density(h, dim=None):
    h = _pad(h, dim, 0.0)
    field = gaussian_density(h, np.eye(h.size), name="shift:" + _fmt(h))
    return field


def scale_density(sigmas, dim=None):
    s = _pad(sigmas, dim, 1.0)
    if np.any(s <= 0):
        raise PresetError("scale factors must be positive")
    return gaussian_density(np.zeros(s.size), np.diag(s**2), name="scale:" + _fmt(s))


def _pad(v, dim, fill):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if dim is None:
        return v
    if v.size > dim:
        raise PresetError(f"{v.size} components given for dimension {dim}")
    return np.concatenate([v, np.full(dim - v.size, fill)])


def _fmt(v):
    return ",".join(repr(float(a)) for a in np.atleast_1d(v))


def _invert_monotone(lower_cdf, upper_sf, x, lo=-60.0, hi=60.0, iters=90):
    """Solve ``F(y) = Phi(x)`` by bisection, using the matching tail for accuracy."""
    x = np.asarray(x, dtype=float)
    neg = x <= 0
    target = np.where(neg, ndtr(x), ndtr(-x))
    a = np.full(x.shape, lo)
    b = np.full(x.shape, hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        # increasing in mid on the lower branch, decreasing on the upper
        f = np.where(neg, lower_cdf(mid) - target, target - upper_sf(mid))
        right = f > 0
        b = np.where(right, mid, b)
        a = np.where(right, a, mid)
    return 0.5 * (a + b)


def _first_coordinate_field(dim, name, log_ratio, dlog, d2log, lower_cdf, upper_sf,
                            lower=None, upper=None, marginal_1d=None):
    """Density acting on ``x_1`` only; the other coordinates stay standard."""

    def log_value(x):
        return log_ratio(x[:, 0])

    def gradient(x):
        g = np.zeros_like(x)
        g[:, 0] = np.exp(log_ratio(x[:, 0])) * dlog(x[:, 0])
        return g

    def hessian(x):
        h = np.zeros((x.shape[0], dim, dim))
        t = x[:, 0]
        h[:, 0, 0] = np.exp(log_ratio(t)) * (dlog(t) ** 2 + d2log(t))
        return h

    def transport(x):
        y = np.array(x, dtype=float)
        y[:, 0] = _invert_monotone(lower_cdf, upper_sf, x[:, 0])
        return y

    def marginal(k):
        return marginal_1d(k)

    return DensityField(
        dim=dim,
        log_value=log_value,
        name=name,
        gradient=gradient,
        hessian=hessian,
        lower=lower,
        upper=upper,
        transport=transport,
        marginal=marginal,
        product_form=True,
    )


def _gaussian_moment_tails(coef):
    """Lower and upper tail integrals of ``p(t) phi(t)`` for monomial coefficients ``coef``."""

    def upper_tail(y):
        return _upper_moment_tail(coef, np.asarray(y, dtype=float))

    def lower_tail(y):
        # int_{-inf}^y t^k phi = (-1)^k int_{-y}^inf s^k phi
        flipped = [c * (-1) ** k for k, c in enumerate(coef)]
        return _upper_moment_tail(flipped, -np.asarray(y, dtype=float))

    return lower_tail, upper_tail


def _upper_moment_tail(coef, y):
    phi = np.exp(-0.5 * y * y - 0.5 * _LOG_2PI)
    tails = [ndtr(-y), phi]
    for k in range(2, len(coef)):
        tails.append(y ** (k - 1) * phi + (k - 1) * tails[k - 2])
    return sum(c * tails[k] for k, c in enumerate(coef))


def hermite_poly_density(he_coeffs, dim=1):
    """``L(x) = sum_j a_j He_j(x_1) / a_0``, rejected unless nonnegative on R."""
    a = np.asarray(he_coeffs, dtype=float)
    if a.size == 0 or a[0] <= 0:
        raise PresetError("hermite-poly needs a positive constant coefficient")
    a = a / a[0]
    mono = hermite_e.herme2poly(a)
    mono = np.trim_zeros(mono, "b") if mono.size > 1 else mono
    lo = _polynomial_minimum(mono)
    if lo < -1e-12:
        raise PresetError(f"hermite-poly density takes negative values (min {lo:.3g})")
    d1 = polynomial.polyder(mono)
    d2 = polynomial.polyder(mono, 2)

    def log_ratio(t):
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(polynomial.polyval(t, mono), 0.0))

    def dlog(t):
        return polynomial.polyval(t, d1) / polynomial.polyval(t, mono)

    def d2log(t):
        p = polynomial.polyval(t, mono)
        return polynomial.polyval(t, d2) / p - (polynomial.polyval(t, d1) / p) ** 2

    lower_cdf, upper_sf = _gaussian_moment_tails(mono)
    name = "hermite-poly:" + _fmt(a)

    def marginal(k):
        return hermite_poly_density(a, k) if k >= 1 else None

    field = _first_coordinate_field(
        dim, name, log_ratio, dlog, d2log, lower_cdf, upper_sf,
        lower=max(lo, 0.0), upper=1.0 if mono.size == 1 else None, marginal_1d=marginal,
    )
    return field


def _polynomial_minimum(mono):
    if mono.size <= 1:
        return float(mono[0])
    if mono.size % 2 == 0 or mono[-1] < 0:
        return -np.inf
    crit = polynomial.polyroots(polynomial.polyder(mono))
    crit = crit[np.abs(crit.imag) < 1e-9].real
    return float(np.min(polynomial.polyval(crit, mono))) if crit.size else float(mono[0])


def hermite_expansion_density(expansion, name=None):
    """Density given by a Hermite expansion (mean forced to one).

    Used for the flow experiments, where ``grad L`` and the resolvent
    ``(I + L)^{-1} grad L`` are needed in closed form.
    """
    if expansion.mean <= 0:
        raise PresetError("expansion must have a positive mean")
    f = expansion.scale(1.0 / expansion.mean)
    grad = f.gradient()
    hess = [[g.partial(j) for j in range(f.dim)] for g in grad]

    def log_value(x):
        v = f(x)
        if np.any(v < 0):
            bad = x[np.argmin(v)]
            raise ValueError(f"Hermite density negative at {bad.tolist()}")
        with np.errstate(divide="ignore"):
            return np.log(v)

    def gradient(x):
        return np.stack([g(x) for g in grad], axis=1)

    def hessian(x):
        return np.stack([np.stack([h(x) for h in row], axis=1) for row in hess], axis=1)

    def marginal(k):
        # orthogonality: conditioning on x_1..x_k keeps the multi-indices supported there
        kept = {a[:k]: c for a, c in f.coeffs.items() if not any(a[k:])}
        return hermite_expansion_density(HermiteExpansion(k, kept))

    product = all(sum(1 for ai in a if ai) <= 1 for a in f.coeffs) and len(
        {i for a in f.coeffs for i, ai in enumerate(a) if ai}
    ) <= 1
    return DensityField(
        dim=f.dim,
        log_value=log_value,
        name=name or "hermite",
        gradient=gradient,
        hessian=hessian,
        marginal=marginal,
        product_form=product,
    )


def mixture_density(components, dim=1):
    """First coordinate distributed as ``sum_k w_k N(m_k, s_k^2)``; others standard."""
    comps = np.asarray(components, dtype=float).reshape(-1, 3)
    w, m, s = comps[:, 0], comps[:, 1], comps[:, 2]
    if np.any(w <= 0) or np.any(s <= 0):
        raise PresetError("mixture weights and widths must be positive")
    w = w / w.sum()
    logw = np.log(w)

    def comp_logpdf(t):
        z = (t[:, None] - m) / s
        return logw - 0.5 * z * z - np.log(s) - 0.5 * _LOG_2PI

    def log_ratio(t):
        return logsumexp(comp_logpdf(t), axis=1) + 0.5 * t * t + 0.5 * _LOG_2PI

    def resp(t):
        lp = comp_logpdf(t)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def dlog(t):
        r = resp(t)
        return np.sum(r * (-(t[:, None] - m) / s**2), axis=1) + t

    def d2log(t):
        r = resp(t)
        u = -(t[:, None] - m) / s**2
        first = np.sum(r * u, axis=1)
        return np.sum(r * (u * u - 1.0 / s**2), axis=1) - first**2 + 1.0

    def lower_cdf(y):
        return np.sum(w * ndtr((np.asarray(y)[..., None] - m) / s), axis=-1)

    def upper_sf(y):
        return np.sum(w * ndtr(-(np.asarray(y)[..., None] - m) / s), axis=-1)

    upper = None
    if np.all(s < 1.0):
        # each component ratio peaks at m / (1 - s^2)
        peak = 0.5 * m**2 / (1.0 - s**2) - np.log(s)
        upper = float(np.sum(w * np.exp(peak)))
    name = "gauss-mixture:" + ";".join(_fmt(c) for c in np.column_stack([w, m, s]))

    def marginal(k):
        return mixture_density(np.column_stack([w, m, s]), k) if k >= 1 else None

    return _first_coordinate_field(
        dim, name, log_ratio, dlog, d2log, lower_cdf, upper_sf,
        upper=upper, marginal_1d=marginal,
    )


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise PresetError(f"cannot parse numbers in {text!r}") from exc


PRESETS = {
    "unit": "L = 1 (the reference measure itself)",
    "shift": "shift:h1,...,hd -- Cameron-Martin shift, law N(h, I)",
    "scale": "scale:s1,...,sd -- coordinate scaling, law N(0, diag(s^2))",
    "hermite-poly": "hermite-poly:a0,...,ak -- L = sum a_j He_j(x_1) / a0, must be >= 0",
    "gauss-mixture": "gauss-mixture:w,m,s;w,m,s -- mixture law on the first coordinate",
}


def gaussian_parameters(spec, dim):
    """``(mean, cov, field)`` for presets whose law is Gaussian (unit, shift, scale)."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    if kind == "unit":
        mean, cov = np.zeros(dim), np.eye(dim)
    elif kind == "shift":
        mean, cov = _pad(_floats(arg), dim, 0.0), np.eye(dim)
    elif kind == "scale":
        s = _pad(_floats(arg), dim, 1.0)
        mean, cov = np.zeros(dim), np.diag(s**2)
    else:
        raise PresetError(f"{spec!r} does not have a Gaussian law")
    return mean, cov, parse_density(spec, dim)


def parse_density(spec, dim):
    """Build a :class:`DensityField` from a preset string (see module docstring)."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    if kind == "unit":
        return unit_density(dim)
    if kind == "shift":
        return shift_density(_floats(arg), dim)
    if kind == "scale":
        return scale_density(_floats(arg), dim)
    if kind == "hermite-poly":
        return hermite_poly_density(_floats(arg), dim)
    if kind == "gauss-mixture":
        comps = [_floats(c) for c in arg.split(";") if c.strip()]
        if not comps or any(len(c) != 3 for c in comps):
            raise PresetError("gauss-mixture components must be w,m,s triples")
        return mixture_density(comps, dim)
    raise PresetError(f"unknown density preset {spec!r}")
