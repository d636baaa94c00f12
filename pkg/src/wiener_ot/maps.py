"""Affine Brenier maps, their potentials, and coupling-level checks.

The Gaussian-to-Gaussian maps here serve as oracles: for ``T = I + grad phi``
pushing ``N(m1, S1)`` to ``N(m2, S2)`` every quantity (potentials, Jacobians,
transport cost) is available in closed form.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .gaussian import GaussianSpace, sample_density, sample_standard
from .ot import solve_exact

EIG_FLOOR = 1e-12


def _psd_sqrt(s, floor=EIG_FLOOR):
    evals, evecs = np.linalg.eigh(0.5 * (s + s.T))
    return (evecs * np.sqrt(np.maximum(evals, floor))) @ evecs.T


def _psd_inv_sqrt(s, floor=EIG_FLOOR):
    evals, evecs = np.linalg.eigh(0.5 * (s + s.T))
    return (evecs / np.sqrt(np.maximum(evals, floor))) @ evecs.T


class NonInvertibleError(ValueError):
    pass


@dataclass(frozen=True)
class AffineTransport:
    """``T(x) = b + A (x - m)`` with ``A`` symmetric positive semidefinite."""

    A: np.ndarray
    b: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = a.shape[0]
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (d,)).copy()
        m = np.broadcast_to(np.asarray(self.m, dtype=float), (d,)).copy()
        if a.shape != (d, d):
            raise ValueError("A must be square")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(a).min() < -1e-12 * scale:
            raise ValueError("A must be positive semidefinite")
        for name, v in (("A", a), ("b", b), ("m", m)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim), np.zeros(dim))

    @classmethod
    def shift(cls, h):
        h = np.asarray(h, dtype=float)
        return cls(np.eye(h.size), h, np.zeros(h.size))

    @classmethod
    def linear(cls, A):
        A = np.atleast_2d(A)
        return cls(A, np.zeros(A.shape[0]), np.zeros(A.shape[0]))

    @property
    def dim(self):
        return self.A.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.b + (x - self.m) @ self.A

    def displacement(self, x):
        """``grad phi(x) = T(x) - x``."""
        return self(x) - np.asarray(x, dtype=float)

    @property
    def invertible(self):
        return np.linalg.eigvalsh(self.A).min() > EIG_FLOOR

    def inverse(self):
        if not self.invertible:
            raise NonInvertibleError("A is singular; T has only a left inverse on its image")
        ai = np.linalg.inv(self.A)
        return AffineTransport(0.5 * (ai + ai.T), self.m, self.b)

    def pushforward(self, mean, cov):
        """Law of ``T(X)`` for ``X ~ N(mean, cov)``."""
        mean = np.asarray(mean, dtype=float)
        return self(mean[None])[0], self.A @ np.asarray(cov, dtype=float) @ self.A

    def to_dict(self):
        return {"m": self.m.tolist(), "b": self.b.tolist(), "A": self.A.ravel().tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        m = np.asarray(d["m"], dtype=float)
        return cls(np.asarray(d["A"], dtype=float).reshape(m.size, m.size), d["b"], m)


def gaussian_brenier(m1, s1, m2, s2):
    """Brenier map from ``N(m1, S1)`` to ``N(m2, S2)``."""
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    s1, s2 = np.atleast_2d(np.asarray(s1, float)), np.atleast_2d(np.asarray(s2, float))
    for s in (s1, s2):
        if np.abs(s - s.T).max() > 1e-12 * max(1.0, np.abs(s).max()) or np.linalg.eigvalsh(s).min() <= 0:
            raise ValueError("covariances must be symmetric positive definite")
    r = _psd_sqrt(s1)
    ri = _psd_inv_sqrt(s1)
    a = ri @ _psd_sqrt(r @ s2 @ r) @ ri
    return AffineTransport(0.5 * (a + a.T), m2, m1)


@dataclass(frozen=True)
class PotentialPair:
    """``phi`` and ``psi`` with ``I + grad phi`` and ``I + grad psi`` mutually inverse."""

    phi: Callable
    psi: Optional[Callable]
    grad_phi: Callable
    grad_psi: Optional[Callable]
    hess_phi: Optional[Callable] = None
    analytic: bool = True

    def F(self, x, y):
        """``phi(x) + psi(y) + |x - y|^2 / 2``; nonnegative, zero on the graph of ``T``."""
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        return self.phi(x) + self.psi(y) + 0.5 * np.sum((x - y) ** 2, axis=1)

    def anchored(self, x0, y0):
        """Shift the constant in ``psi`` so that ``F(x0, y0) = 0``."""
        c = float(self.F(x0, y0)[0])
        psi = self.psi
        return PotentialPair(self.phi, lambda y: psi(y) - c, self.grad_phi, self.grad_psi,
                             self.hess_phi, self.analytic)


def potential_of(T):
    """Potentials of an affine transport.

    ``phi(x) = (x, (A - I) x)/2 + (b - A m, x)`` and ``psi`` the potential of
    ``T^{-1}``, its constant chosen so that ``F`` vanishes on the graph.
    ``psi`` is ``None`` when ``A`` is singular.
    """
    a, d = T.A, T.dim
    beta = T.b - a @ T.m
    eye = np.eye(d)

    def phi(x):
        x = np.atleast_2d(x)
        return 0.5 * np.einsum("ni,ij,nj->n", x, a - eye, x) + x @ beta

    def grad_phi(x):
        return np.atleast_2d(x) @ (a - eye) + beta

    def hess_phi(x):
        return np.broadcast_to(a - eye, (np.atleast_2d(x).shape[0], d, d))

    if not T.invertible:
        return PotentialPair(phi, None, grad_phi, None, hess_phi)
    ai = T.inverse().A
    gamma = -ai @ beta
    const = 0.5 * beta @ ai @ beta

    def psi(y):
        y = np.atleast_2d(y)
        return 0.5 * np.einsum("ni,ij,nj->n", y, ai - eye, y) + y @ gamma + const

    def grad_psi(y):
        return np.atleast_2d(y) @ (ai - eye) + gamma

    return PotentialPair(phi, psi, grad_phi, grad_psi, hess_phi)


@dataclass(frozen=True)
class DualityResidual:
    off_support_min: float
    on_support_max: float
    pairs_on: int
    pairs_off: int


def duality_residual(pair, coupling, max_off=20_000, seed=0, anchor=True):
    """``F`` on the support of ``coupling`` (should vanish) and off it (should be ``>= 0``).

    With ``anchor`` the constant of ``psi`` is refixed so that ``F = 0`` at the
    first support pair.
    """
    x, y = coupling.source.points, coupling.target.points
    rows, cols = coupling.rows, coupling.cols
    keep = coupling.weights > 0
    rows, cols = rows[keep], cols[keep]
    if anchor:
        pair = pair.anchored(x[rows[0]], y[cols[0]])
    on = pair.F(x[rows], y[cols])
    n, m = x.shape[0], y.shape[0]
    support = set(zip(rows.tolist(), cols.tolist()))
    if n * m - len(support) <= max_off:
        ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
    else:
        from .rng import stream

        rng = stream(seed, "duality-off-support")
        ii = rng.integers(0, n, max_off)
        jj = rng.integers(0, m, max_off)
    off_mask = np.array([(i, j) not in support for i, j in zip(ii.tolist(), jj.tolist())], dtype=bool)
    off = pair.F(x[ii[off_mask]], y[jj[off_mask]]) if off_mask.any() else np.array([np.inf])
    return DualityResidual(float(off.min()), float(np.abs(on).max()), int(on.size), int(off_mask.sum()))


def energy_identity_check(coupling, pair):
    """``|J - sum_i w_i |grad phi(x_i)|^2| / max(J, 1e-12)``."""
    g = pair.grad_phi(coupling.source.points)
    energy = float(coupling.source.weights @ np.sum(g * g, axis=1))
    return abs(coupling.cost - energy) / max(coupling.cost, 1e-12)


def empirical_map(coupling):
    """Image of each source point: the paired target (exact) or the row barycenter (entropic)."""
    y = coupling.target.points
    if coupling.method == "exact":
        return y[coupling.permutation]
    mass = coupling.row_sums()
    out = np.zeros((coupling.source.n, y.shape[1]))
    np.add.at(out, coupling.rows, coupling.weights[:, None] * y[coupling.cols])
    return out / mass[:, None]


def map_deviation(coupling, T):
    """Weighted mean squared distance between the empirical map and ``T``."""
    diff = empirical_map(coupling) - T(coupling.source.points)
    return float(coupling.source.weights @ np.sum(diff * diff, axis=1))


@dataclass(frozen=True)
class InversionReport:
    invertible: bool
    forward_roundtrip: float
    backward_roundtrip: float


def invert_on_samples(T, cloud):
    """``max |T^{-1}(T(x)) - x|`` and ``max |T(T^{-1}(y)) - y|`` over the cloud points."""
    if not T.invertible:
        return InversionReport(False, np.nan, np.nan)
    ti = T.inverse()
    x = cloud.points
    fwd = np.max(np.linalg.norm(ti(T(x)) - x, axis=1))
    bwd = np.max(np.linalg.norm(T(ti(x)) - x, axis=1))
    return InversionReport(True, float(fwd), float(bwd))


@dataclass(frozen=True)
class ConvexityReport:
    trials: int
    worst_violation: float
    witness: tuple
    tol: float

    @property
    def verdict(self):
        return "1-convex" if self.worst_violation <= self.tol else "violated"


def one_convexity_check(phi, dim, trials=2000, seed=0, tol=1e-10, radius=2.0):
    """Search for a chord above which ``t -> |t h|^2 / 2 + phi(x + t h)`` rises.

    Random ``x``, direction ``h`` and triple ``t1 < t2 < t3`` in ``[-radius, radius]``;
    the violation is ``g(t2)`` minus the chord through ``g(t1)`` and ``g(t3)``.
    """
    from .rng import stream

    rng = stream(seed, "one-convexity")
    x = rng.standard_normal((trials, dim))
    h = rng.standard_normal((trials, dim))
    t = np.sort(rng.uniform(-radius, radius, (trials, 3)), axis=1)
    hh = np.sum(h * h, axis=1)

    def g(tk):
        return 0.5 * tk * tk * hh + phi(x + tk[:, None] * h)

    g1, g2, g3 = g(t[:, 0]), g(t[:, 1]), g(t[:, 2])
    lam = (t[:, 2] - t[:, 1]) / (t[:, 2] - t[:, 0])
    viol = g2 - (lam * g1 + (1.0 - lam) * g3)
    k = int(np.argmax(viol))
    return ConvexityReport(trials, float(viol[k]), (x[k].tolist(), h[k].tolist(), t[k].tolist()), tol)


@dataclass(frozen=True)
class LadderResult:
    dims: tuple
    values: tuple
    stderrs: tuple
    reference: float
    approximate: bool = False
    extra: dict = field(default_factory=dict)

    def monotone(self, k=2.0):
        """Nondecreasing up to ``k`` pooled standard errors between consecutive levels."""
        v, s = np.asarray(self.values), np.asarray(self.stderrs)
        pooled = np.sqrt(s[:-1] ** 2 + s[1:] ** 2)
        return bool(np.all(np.diff(v) >= -k * pooled))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dim", "J", "stderr"])
        for d, v, s in zip(self.dims, self.values, self.stderrs):
            w.writerow([d, repr(float(v)), repr(float(s))])
        return buf.getvalue()


def coupled_clouds(L, n, seed, coupling="common", method=None):
    """Gaussian cloud and a cloud of ``L . mu``.

    ``coupling="common"`` draws the second cloud as ``L.transport`` of the first
    (common random numbers; the empirical transport cost is then unbiased for
    monotone ``T``). ``"independent"`` uses a separate seed stream.
    """
    space = GaussianSpace(L.dim)
    x = sample_standard(space, n, seed)
    if coupling == "common":
        y = sample_density(L, n, seed, method or "exact")
    elif coupling == "independent":
        from .rng import derive_seed

        y = sample_density(L, n, derive_seed(seed, "target"), method or ("exact" if L.transport else "rejection"))
    else:
        raise ValueError(f"coupling must be 'common' or 'independent', got {coupling!r}")
    return x, y


def projection_ladder(L, dims, n, seed=0, coupling="common", allow_approximate=False):
    """Optimal costs between coordinate projections of a Gaussian and an ``L . mu`` cloud."""
    dims = tuple(int(k) for k in dims)
    if not dims or any(b <= a for a, b in zip(dims, dims[1:])) or dims[0] < 1:
        raise ValueError("dims must be strictly increasing positive integers")
    if dims[-1] != L.dim:
        raise ValueError(f"last level must be the full dimension {L.dim}")
    if not L.product_form and not allow_approximate:
        raise ValueError(f"{L.name!r} is not of product form; pass allow_approximate=True")
    x, y = coupled_clouds(L, n, seed, coupling)
    values, errs = [], []
    for k in dims:
        c = solve_exact(x.project(k), y.project(k))
        per = np.sum((c.source.points[c.rows] - c.target.points[c.cols]) ** 2, axis=1)
        values.append(c.cost)
        errs.append(float(per.std(ddof=1) / np.sqrt(per.size)) if per.size > 1 else 0.0)
    return LadderResult(dims, tuple(values), tuple(errs), values[-1], not L.product_form,
                        {"coupling": coupling, "n": n, "seed": seed})


__all__ = [
    "AffineTransport", "ConvexityReport", "DualityResidual", "InversionReport", "LadderResult",
    "NonInvertibleError", "PotentialPair", "coupled_clouds", "duality_residual", "empirical_map",
    "energy_identity_check", "gaussian_brenier", "invert_on_samples", "map_deviation",
    "one_convexity_check", "potential_of", "projection_ladder",
]
