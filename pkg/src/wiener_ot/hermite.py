"""Hermite chaos calculus on (R^d, N(0, I)).

Expansions use the orthonormal basis ``h_alpha(x) = prod_i He_{alpha_i}(x_i) / sqrt(alpha_i!)``
of L^2(mu). In this basis the Ornstein-Uhlenbeck operator is diagonal
(``L h_alpha = |alpha| h_alpha``), the gradient is an annihilation operator and
the Gaussian divergence is a creation operator, so every operation below is
exact on the truncated basis.
"""

from dataclasses import dataclass, field
from itertools import product
from math import factorial, sqrt

import numpy as np
from numpy.polynomial import hermite_e


def hermite_orthonormal(nmax, x):
    """Values of ``h_0, ..., h_nmax`` at ``x``; shape ``(nmax + 1, *x.shape)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = x
    for n in range(1, nmax):
        out[n + 1] = (x * out[n] - sqrt(n) * out[n - 1]) / sqrt(n + 1)
    return out


def _clean(coeffs):
    return {tuple(int(a) for a in k): float(v) for k, v in coeffs.items() if v != 0.0}


@dataclass(frozen=True)
class HermiteExpansion:
    """Finite expansion ``sum_alpha c_alpha h_alpha`` in dimension ``dim``."""

    dim: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        cleaned = _clean(self.coeffs)
        for alpha, c in cleaned.items():
            if len(alpha) != self.dim or min(alpha) < 0:
                raise ValueError(f"bad multi-index {alpha} for dim={self.dim}")
            if not np.isfinite(c):
                raise ValueError(f"non-finite coefficient at {alpha}")
        object.__setattr__(self, "coeffs", cleaned)

    @classmethod
    def constant(cls, dim, value=1.0):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def from_he(cls, he_coeffs, dim=1, axis=0):
        """Build from probabilists' coefficients ``sum_k a_k He_k(x_axis)``."""
        coeffs = {}
        for k, a in enumerate(he_coeffs):
            alpha = [0] * dim
            alpha[axis] = k
            coeffs[tuple(alpha)] = float(a) * sqrt(factorial(k))
        return cls(dim, coeffs)

    @property
    def degree(self):
        return max((sum(a) for a in self.coeffs), default=0)

    @property
    def mean(self):
        return self.coeffs.get((0,) * self.dim, 0.0)

    def __add__(self, other):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0.0) + v
        return HermiteExpansion(self.dim, out)

    def scale(self, s):
        return HermiteExpansion(self.dim, {k: s * v for k, v in self.coeffs.items()})

    def map_coefficients(self, fn):
        """Apply ``fn(alpha, c) -> c'`` to every coefficient."""
        return HermiteExpansion(self.dim, {k: fn(k, v) for k, v in self.coeffs.items()})

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {x.shape[1]}")
        if not self.coeffs:
            return np.zeros(x.shape[0])
        nmax = max(max(a) for a in self.coeffs)
        basis = [hermite_orthonormal(nmax, x[:, i]) for i in range(self.dim)]
        out = np.zeros(x.shape[0])
        for alpha, c in sorted(self.coeffs.items()):
            term = np.full(x.shape[0], c)
            for i, a in enumerate(alpha):
                if a:
                    term = term * basis[i][a]
            out += term
        return out

    def partial(self, i):
        """Derivative along coordinate ``i``: ``d_i h_alpha = sqrt(alpha_i) h_{alpha - e_i}``."""
        out = {}
        for alpha, c in self.coeffs.items():
            if alpha[i]:
                beta = list(alpha)
                beta[i] -= 1
                out[tuple(beta)] = out.get(tuple(beta), 0.0) + c * sqrt(alpha[i])
        return HermiteExpansion(self.dim, out)

    def gradient(self):
        return [self.partial(i) for i in range(self.dim)]

    def number_operator(self):
        """Apply the Ornstein-Uhlenbeck operator."""
        return self.map_coefficients(lambda a, c: sum(a) * c)

    def semigroup(self, t):
        """Apply the Ornstein-Uhlenbeck semigroup ``P_t``."""
        return self.map_coefficients(lambda a, c: np.exp(-sum(a) * t) * c)


def ou_resolvent(f):
    """``(I + L)^{-1} f``: divide the coefficient of ``h_alpha`` by ``1 + |alpha|``.

    Accepts a single expansion or a list of expansions (a vector field).
    """
    if isinstance(f, (list, tuple)):
        return [ou_resolvent(g) for g in f]
    return f.map_coefficients(lambda a, c: c / (1.0 + sum(a)))


def divergence(field_components):
    """Gaussian divergence ``delta(sum_i u_i e_i) = sum_i (x_i u_i - d_i u_i)``."""
    dim = field_components[0].dim
    out = {}
    for i, u in enumerate(field_components):
        for alpha, c in u.coeffs.items():
            beta = list(alpha)
            beta[i] += 1
            out[tuple(beta)] = out.get(tuple(beta), 0.0) + c * sqrt(alpha[i] + 1)
    return HermiteExpansion(dim, out)


def mehler_semigroup(fn, t, x, nodes=40):
    """Numerical ``P_t fn(x) = E[fn(e^{-t} x + sqrt(1 - e^{-2t}) Y)]`` by Gauss-Hermite quadrature.

    Independent of the chaos representation; meant for low dimension (tensor grid).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    z, w = hermite_e.hermegauss(nodes)
    w = w / w.sum()
    grid = np.array(list(product(z, repeat=d)))
    wgrid = np.prod(np.array(list(product(w, repeat=d))), axis=1)
    a, b = np.exp(-t), np.sqrt(-np.expm1(-2.0 * t))
    out = np.empty(x.shape[0])
    for k, xk in enumerate(x):
        out[k] = wgrid @ fn(a * xk + b * grid)
    return out
