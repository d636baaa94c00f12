"""Gaussian Jacobian of ``T = I + grad phi`` and the identities built on it.

For a 1-convex ``phi`` in finite dimension,

    Lambda = det2(I + hess phi) exp(-L_OU phi - |grad phi|^2 / 2),
    L_OU phi(x) = (grad phi(x), x) - trace hess phi(x),

and ``Lambda = 1 / (L o T)`` when ``T`` pushes ``mu`` to ``L . mu``.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .gaussian import GaussianSpace, sample_standard
from .inequalities import InequalityReport
from .maps import PotentialPair, gaussian_brenier, potential_of

CLAMP_TOL = 1e-9


class OneConvexityError(ValueError):
    """An eigenvalue of ``hess phi`` lies below ``-1`` beyond rounding."""


def _clamp(eigs, tol=CLAMP_TOL):
    eigs = np.asarray(eigs, dtype=float)
    low = eigs < -1.0 - tol
    if np.any(low):
        raise OneConvexityError(f"eigenvalue {eigs[low].min():.3g} < -1: phi is not 1-convex")
    return np.maximum(eigs, -1.0)


def log_det2(eigs, tol=CLAMP_TOL):
    """``sum log(1 + l) - l`` over the last axis; ``-inf`` when some ``l = -1``."""
    l = _clamp(eigs, tol)
    with np.errstate(divide="ignore"):
        return np.sum(np.log1p(l) - l, axis=-1)


def det2(eigs, tol=CLAMP_TOL):
    """Carleman-Fredholm determinant ``prod (1 + l) exp(-l)``."""
    return np.exp(log_det2(eigs, tol))


def fd_gradient(phi, x, h=1e-4):
    """Central differences with one Richardson extrapolation."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    eye = np.eye(d)

    def central(s):
        return np.stack([(phi(x + s * eye[i]) - phi(x - s * eye[i])) / (2 * s) for i in range(d)], axis=1)

    return (4 * central(h / 2) - central(h)) / 3


def fd_hessian(phi, x, h=1e-4):
    """Central second differences, one Richardson step, then symmetrized."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    eye = np.eye(d)

    def second(s):
        out = np.empty((n, d, d))
        f0 = phi(x)
        for i in range(d):
            out[:, i, i] = (phi(x + s * eye[i]) - 2 * f0 + phi(x - s * eye[i])) / s**2
            for j in range(i + 1, d):
                ei, ej = s * eye[i], s * eye[j]
                v = (phi(x + ei + ej) - phi(x + ei - ej) - phi(x - ei + ej) + phi(x - ei - ej)) / (4 * s * s)
                out[:, i, j] = out[:, j, i] = v
        return out

    hess = (4 * second(h / 2) - second(h)) / 3
    return 0.5 * (hess + np.swapaxes(hess, 1, 2))


def numerical_pair(phi, grad=None):
    """Potential pair for a user-supplied ``phi`` with finite-difference derivatives."""
    return PotentialPair(
        phi, None, grad or (lambda x: fd_gradient(phi, x)), None,
        lambda x: fd_hessian(phi, x), analytic=False,
    )


def _hessian(pair, x):
    if pair.hess_phi is not None:
        return np.asarray(pair.hess_phi(x), dtype=float)
    return fd_hessian(pair.phi, x)


def jacobian_terms(pair, x, t=1.0):
    """Eigenvalues of ``t hess phi``, ``log det2``, ``t L_OU phi``, ``t^2 |grad phi|^2`` and ``log Lambda_t``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.asarray(pair.grad_phi(x), dtype=float)
    hess = _hessian(pair, x)
    eigs = np.linalg.eigvalsh(t * hess)
    ld = log_det2(eigs)
    lphi = t * (np.sum(g * x, axis=1) - np.trace(hess, axis1=1, axis2=2))
    gsq = t * t * np.sum(g * g, axis=1)
    return eigs, ld, lphi, gsq, ld - lphi - 0.5 * gsq


def gaussian_jacobian(pair, x):
    """``Lambda(x)`` at each row of ``x``."""
    return np.exp(jacobian_terms(pair, x)[4])


@dataclass(frozen=True)
class JacobianReport:
    points: np.ndarray
    eigenvalues: np.ndarray
    det2: np.ndarray
    lphi: np.ndarray
    grad_sq: np.ndarray
    Lambda: np.ndarray
    L_of_T: np.ndarray
    residual: np.ndarray
    bad_points: tuple = ()

    @property
    def max_abs_residual(self):
        r = self.residual[np.isfinite(self.residual)]
        return float(np.max(np.abs(r))) if r.size else float("nan")

    @property
    def mean_abs_residual(self):
        r = self.residual[np.isfinite(self.residual)]
        return float(np.mean(np.abs(r))) if r.size else float("nan")

    def summary(self):
        return {
            "points": int(self.points.shape[0]),
            "max_abs_residual": self.max_abs_residual,
            "mean_abs_residual": self.mean_abs_residual,
            "det2_min": float(self.det2.min()),
            "det2_max": float(self.det2.max()),
            "bad_points": list(self.bad_points),
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "det2", "L_phi", "Lambda", "residual"])
        for i in range(self.points.shape[0]):
            w.writerow([i] + [repr(float(v[i])) for v in (self.det2, self.lphi, self.Lambda, self.residual)])
        return buf.getvalue()

    def summary_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def jacobian_residual(L, T, cloud, pair=None):
    """Pointwise ``Lambda(x) L(T(x)) - 1`` for the map ``T`` (pushing ``mu`` to ``L . mu``).

    The product is formed in log space, so the residual keeps full relative
    accuracy where ``Lambda`` and ``L o T`` are individually extreme.
    """
    pair = pair or potential_of(T)
    x = cloud.points
    eigs, ld, lphi, gsq, loglam = jacobian_terms(pair, x)
    logl = L.log(T(x))
    bad = tuple(int(i) for i in np.flatnonzero(~np.isfinite(logl)))
    with np.errstate(invalid="ignore"):
        res = np.where(np.isfinite(logl), np.expm1(loglam + logl), np.nan)
    return JacobianReport(x, eigs, np.exp(ld), lphi, gsq, np.exp(loglam), np.exp(logl), res, bad)


# ---------------------------------------------------------------- interpolation


@dataclass(frozen=True)
class InterpolationRow:
    t: float
    min_monotone_ratio: float
    monotone_ok: bool
    witness: tuple
    min_lambda_t: float
    pushforward_residual: float
    log_det2: np.ndarray = field(repr=False, default=None)


def interpolation_check(pair, ts, cloud, T=None, trials=64, seed=0, tol=1e-9):
    """Checks on ``T_t = I + t grad phi`` for each ``t`` in ``ts``.

    * ``(I + t hess phi) h . h >= (1 - t) |h|^2`` on random directions, reported
      as the smallest ratio ``((I + t hess phi) h, h) / |h|^2``;
    * ``Lambda_t > 0`` on the cloud;
    * for an affine ``T`` (pushing ``mu`` to a Gaussian), the residual
      ``Lambda_t (L_t o T_t) - 1`` with ``L_t`` the density of ``T_t mu``.
    """
    from .densities import gaussian_density
    from .rng import stream

    x = cloud.points
    n, d = x.shape
    hess = _hessian(pair, x)
    rng = stream(seed, "interpolation")
    h = rng.standard_normal((trials, d))
    rows = []
    for t in ts:
        t = float(t)
        if not 0.0 <= t < 1.0:
            raise ValueError("t must lie in [0, 1)")
        m_t = np.eye(d)[None] + t * hess
        quad_form = np.einsum("kd,nde,ke->nk", h, m_t, h) / np.sum(h * h, axis=1)[None]
        i, k = np.unravel_index(np.argmin(quad_form), quad_form.shape)
        ratio = float(quad_form[i, k])
        ok = ratio >= (1.0 - t) - tol
        _, ld, _, _, loglam = jacobian_terms(pair, x, t)
        resid = float("nan")
        if T is not None:
            b0 = T.b - T.A @ T.m
            a_t = (1.0 - t) * np.eye(d) + t * T.A
            law = gaussian_density(t * b0, a_t @ a_t)
            tx = (1.0 - t) * x + t * T(x)
            resid = float(np.max(np.abs(np.expm1(loglam + law.log(tx)))))
        rows.append(InterpolationRow(t, ratio, bool(ok), (x[i].tolist(), h[k].tolist(), t),
                                     float(np.exp(loglam).min()), resid, ld))
    return rows


def logdet2_nonincreasing(rows, tol=1e-10):
    """Largest per-point increase of ``log det2(I + t hess phi)`` between consecutive grid times."""
    stacked = np.stack([r.log_det2 for r in rows], axis=0)
    with np.errstate(invalid="ignore"):
        inc = np.diff(stacked, axis=0)
    inc = np.where(np.isnan(inc), 0.0, inc)
    worst = float(inc.max()) if inc.size else 0.0
    return worst <= tol, worst


# ---------------------------------------------------------------- entropy-transport


def entropy_transport_check(K, L, n=4096, seed=0):
    """``E[|grad phi|^2] / 2 <= E[-log K + log L o T]`` for ``T`` from ``K . mu`` to ``L . mu``.

    ``K`` and ``L`` are Gaussian-law presets ``(mean, cov, field)`` as returned by
    :func:`wiener_ot.densities.gaussian_parameters`. Expectations are taken
    under the reference measure, the form in which the inequality follows from
    the Talagrand bound applied to ``T mu``.
    """
    (mk, sk, fk), (ml, sl, fl) = K, L
    T = gaussian_brenier(mk, sk, ml, sl)
    x = sample_standard(GaussianSpace(mk.size), n, seed).points
    g = T.displacement(x)
    left = 0.5 * np.sum(g * g, axis=1)
    right = -fk.log(x) + fl.log(T(x))
    se = lambda v: float(v.std(ddof=1) / np.sqrt(v.size))
    return InequalityReport(
        "entropy-transport", float(left.mean()), se(left), float(right.mean()), se(right),
        {"K": fk.name, "L": fl.name, "n": n, "seed": seed, "measure": "mu"},
        {"paired_slack_se": se(right - left), "map": T.to_dict()},
    )


# ---------------------------------------------------------------- submartingale


@dataclass(frozen=True)
class SubmartingaleTrace:
    levels: tuple
    samples: np.ndarray
    cond_next: np.ndarray
    preset: str
    mc_gap: tuple
    mc_gap_se: tuple

    @property
    def gaps(self):
        """``E[X_{n_{k+1}} | V_{n_k}] - X_{n_k}`` per level transition and point."""
        return self.cond_next - self.samples[:-1]

    @property
    def min_gap(self):
        return float(self.gaps.min()) if self.gaps.size else 0.0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "next_level", "mean_gap", "min_gap", "mc_gap", "mc_gap_se"])
        for k in range(len(self.levels) - 1):
            gk = self.gaps[k]
            w.writerow([self.levels[k], self.levels[k + 1], repr(float(gk.mean())), repr(float(gk.min())),
                        repr(self.mc_gap[k]), repr(self.mc_gap_se[k])])
        return buf.getvalue()


def parse_potential(spec, dim):
    """``zero``, ``abs1`` (``|x_1|``) or ``quadratic:b11,b12,...`` (row-major ``k x k``, padded)."""
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return ("quadratic", np.zeros((dim, dim)))
    if kind == "abs1":
        return ("abs1", None)
    if kind == "quadratic":
        vals = np.array([float(t) for t in arg.split(",")])
        k = int(round(np.sqrt(vals.size)))
        if k * k != vals.size or k > dim:
            raise ValueError("quadratic needs k*k entries with k <= dim")
        b = np.zeros((dim, dim))
        b[:k, :k] = vals.reshape(k, k)
        if np.abs(b - b.T).max() > 1e-12:
            raise ValueError("quadratic form must be symmetric")
        if np.linalg.eigvalsh(b).min() < -1.0 - 1e-12:
            raise ValueError("quadratic form must satisfy B >= -I (1-convexity)")
        return ("quadratic", b)
    raise ValueError(f"unsupported potential preset {spec!r}")


def _x_level(kind, b, x, n):
    """``L_a F_n`` with ``F_n = E[phi | x_1..x_n]``."""
    if kind == "quadratic":
        xn, bn = x[:, :n], b[:n, :n]
        return np.einsum("ki,ij,kj->k", xn, bn, xn) - np.trace(bn)
    # |x_1|: F_0 is constant, F_n = |x_1| for n >= 1, whose second derivative is purely singular
    return np.zeros(x.shape[0]) if n == 0 else np.abs(x[:, 0])


def _cond_expectation(kind, b, x, n, m):
    """``E[X_m | x_1..x_n]`` in closed form."""
    if kind == "quadratic":
        xn = x[:, :n]
        return (np.einsum("ki,ij,kj->k", xn, b[:n, :n], xn) + np.trace(b[n:m, n:m]) - np.trace(b[:m, :m]))
    if n == 0:
        return np.full(x.shape[0], np.sqrt(2.0 / np.pi))
    return np.abs(x[:, 0])


def submartingale_trace(spec, levels, cloud):
    """Evaluate ``X_n = L_a E[phi | V_n]`` on a common cloud and the gaps to the next level."""
    levels = tuple(int(k) for k in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 0 or levels[-1] > cloud.dim:
        raise ValueError("levels must increase within [0, dim]")
    kind, b = parse_potential(spec, cloud.dim)
    x = cloud.points
    samples = np.stack([_x_level(kind, b, x, n) for n in levels])
    cond = np.stack([_cond_expectation(kind, b, x, n, m) for n, m in zip(levels, levels[1:])]) \
        if len(levels) > 1 else np.zeros((0, x.shape[0]))
    diffs = samples[1:] - samples[:-1]
    mc = tuple(float(dv.mean()) for dv in diffs)
    mc_se = tuple(float(dv.std(ddof=1) / np.sqrt(dv.size)) if dv.size > 1 else 0.0 for dv in diffs)
    return SubmartingaleTrace(levels, samples, cond, spec, mc, mc_se)


# ---------------------------------------------------------------- pushforward defect


def _test_function(spec, dim):
    """``(f, exact E_mu[f])`` for ``gauss``, ``clip:i`` and ``halfspace:u...,a``."""
    kind, _, arg = spec.partition(":")
    if kind == "gauss":
        return (lambda x: np.exp(-np.sum(x * x, axis=1))), 3.0 ** (-dim / 2)
    if kind == "clip":
        i = int(arg or 0)
        return (lambda x: np.clip(x[:, i], -1.0, 1.0)), 0.0
    if kind == "halfspace":
        vals = np.array([float(t) for t in arg.split(",")])
        u = np.zeros(dim)
        u[: vals.size - 1] = vals[:-1]
        a = vals[-1]
        return (lambda x: (x @ u >= a).astype(float)), float(ndtr(-a / np.linalg.norm(u)))
    raise ValueError(f"unknown test function {spec!r}")


def pushforward_defect(pair, T, cloud, tests=("gauss", "clip:0", "halfspace:1,0.5")):
    """``|mean f(T x) Lambda(x) - mean f(x)|`` on a Gaussian cloud for each test function.

    Both means use the same points, so the identity map has defect exactly 0.
    Also returns the Monte Carlo mean of ``Lambda`` (expected to be one).
    """
    x = cloud.points
    lam = gaussian_jacobian(pair, x)
    tx = T(x)
    out = {}
    for spec in tests:
        f, exact = _test_function(spec, cloud.dim)
        diff = f(tx) * lam - f(x)
        se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
        out[spec] = {
            "defect": float(abs(diff.mean())),
            "se": se,
            "transported": float(np.mean(f(tx) * lam)),
            "exact": exact,
        }
    se_lam = float(lam.std(ddof=1) / np.sqrt(lam.size)) if lam.size > 1 else 0.0
    return {"mean_lambda": float(lam.mean()), "mean_lambda_se": se_lam, "tests": out}


__all__ = [
    "JacobianReport", "OneConvexityError", "SubmartingaleTrace", "det2", "entropy_transport_check",
    "fd_gradient", "fd_hessian", "gaussian_jacobian", "interpolation_check", "jacobian_residual",
    "jacobian_terms", "log_det2", "logdet2_nonincreasing", "numerical_pair", "parse_potential",
    "pushforward_defect", "submartingale_trace",
]
