"""Polar factorization ``V = T o s`` of affine maps of the Gaussian space.

For ``V(x) = M x + h`` with ``M`` invertible the law ``V mu = N(h, M M^T)`` is
known, so ``T`` is the affine Brenier map onto it and ``s = T^{-1} o V`` is the
orthogonal factor ``(M M^T)^{-1/2} M``.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy import stats

from .gaussian import GaussianSpace, sample_standard
from .maps import _psd_inv_sqrt, gaussian_brenier
from .rng import stream


@dataclass(frozen=True)
class AffineMap:
    """``V(x) = M x + h`` (``M`` not necessarily symmetric)."""

    M: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        h = np.broadcast_to(np.asarray(self.h, dtype=float), (m.shape[0],)).copy()
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "h", h)

    @property
    def dim(self):
        return self.M.shape[0]

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.M.T + self.h

    def displacement(self, x):
        return self(x) - np.asarray(x, dtype=float)


def planar_rotation(deg, dim=2, i=0, j=1):
    th = np.deg2rad(deg)
    r = np.eye(dim)
    r[i, i] = r[j, j] = np.cos(th)
    r[i, j], r[j, i] = -np.sin(th), np.sin(th)
    return r


def parse_map(spec, dim):
    """``identity``, ``rotation:deg[,h1,...]`` or ``scaled-rotation:s,deg``."""
    kind, _, arg = spec.partition(":")
    vals = [float(t) for t in arg.split(",") if t.strip()]
    if kind == "identity":
        return AffineMap(np.eye(dim), np.zeros(dim))
    if dim < 2:
        raise ValueError("rotation presets need dim >= 2")
    if kind == "rotation":
        h = np.zeros(dim)
        h[: len(vals) - 1] = vals[1:]
        return AffineMap(planar_rotation(vals[0], dim), h)
    if kind == "scaled-rotation":
        return AffineMap(vals[0] * planar_rotation(vals[1], dim), np.zeros(dim))
    raise ValueError(f"unknown map preset {spec!r}")


@dataclass(frozen=True)
class RotationCandidate:
    """``s(x) = x + alpha(x)``; linear candidates carry their matrix."""

    matrix: np.ndarray
    tag: str = "orthogonal"

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T

    def alpha(self, x):
        return self(x) - np.asarray(x, dtype=float)


def random_orthogonal(dim, rng):
    """Haar orthogonal matrix: QR of a Gaussian matrix with the sign of ``diag(R)`` fixed."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def candidate_rotations(dim, count, seed=0, permutations_too=True):
    rng = stream(seed, "rotation-candidates")
    out = [RotationCandidate(random_orthogonal(dim, rng), "orthogonal") for _ in range(count)]
    if permutations_too:
        for p in list(permutations(range(dim)))[1 : 1 + min(count, 6)]:
            out.append(RotationCandidate(np.eye(dim)[list(p)], "permutation"))
    return out


@dataclass(frozen=True)
class RotationStats:
    ks_pvalues: tuple
    mean_deviation: float
    cov_deviation: float
    cov_bound: float
    alpha_level: float = 0.01

    @property
    def passed(self):
        return bool(min(self.ks_pvalues) > self.alpha_level and self.cov_deviation <= self.cov_bound)

    def to_dict(self):
        return {"ks_pvalues": list(self.ks_pvalues), "mean_deviation": self.mean_deviation,
                "cov_deviation": self.cov_deviation, "cov_bound": self.cov_bound, "passed": self.passed}


def rotation_test(s, dim, n=4096, seed=0):
    """Compare ``s(X)``, ``X ~ N(0, I)``, with ``N(0, I)``: per-coordinate KS and covariance."""
    x = sample_standard(GaussianSpace(dim), n, seed).points
    y = np.asarray(s(x), dtype=float)
    pv = tuple(float(stats.kstest(y[:, i], "norm").pvalue) for i in range(dim))
    cov = np.atleast_2d(np.cov(y.T))
    return RotationStats(pv, float(np.abs(y.mean(0)).max()), float(np.abs(cov - np.eye(dim)).max()),
                         float(5.0 / np.sqrt(n)))


@dataclass(frozen=True)
class FactorizationResult:
    V: AffineMap
    T: object
    s: RotationCandidate
    identity_residual: float
    rotation: RotationStats
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "V": {"M": self.V.M.ravel().tolist(), "h": self.V.h.tolist()},
            "T": self.T.to_dict(),
            "s": self.s.matrix.ravel().tolist(),
            "identity_residual": self.identity_residual,
            "rotation": self.rotation.to_dict(),
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def factorize(V, n=4096, seed=0):
    """Split ``V`` into the Brenier map ``T`` onto ``V mu`` and the rotation ``s = T^{-1} o V``."""
    if not isinstance(V, AffineMap):
        raise TypeError("factorize needs an AffineMap (general V mu is not in the Gaussian family)")
    m = V.M
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("V mu is degenerate: M is singular")
    cov = m @ m.T
    T = gaussian_brenier(np.zeros(V.dim), np.eye(V.dim), V.h, cov)
    q = _psd_inv_sqrt(cov) @ m
    s = RotationCandidate(q, "orthogonal")
    x = sample_standard(GaussianSpace(V.dim), n, seed).points
    resid = float(np.max(np.abs(T(s(x)) - V(x))))
    return FactorizationResult(V, T, s, resid, rotation_test(s, V.dim, n, seed),
                               {"orthogonality_defect": float(np.abs(q.T @ q - np.eye(V.dim)).max())})


@dataclass(frozen=True)
class MinimalityRow:
    candidate: str
    value: float
    se: float
    passed_rotation: bool


def minimality_check(v, alpha, candidates, dim, n=4096, seed=0):
    """``M_v(eta) = E[|eta|^2 / 2 - (v, eta)]`` for ``alpha`` and every candidate displacement.

    Returns ``(rows, ok)`` where ``ok`` is true when ``M_v(alpha)`` does not
    exceed any candidate value by more than three pooled standard errors.
    Candidates failing the rotation test are listed but not compared.
    """
    x = sample_standard(GaussianSpace(dim), n, seed).points
    vx = v(x)

    def mv(eta):
        e = eta(x)
        vals = 0.5 * np.sum(e * e, axis=1) - np.sum(vx * e, axis=1)
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))

    base, base_se = mv(alpha)
    rows = [MinimalityRow("alpha", base, base_se, True)]
    ok = True
    for k, c in enumerate(candidates):
        passed = rotation_test(c, dim, n, seed).passed
        val, se = mv(c.alpha)
        rows.append(MinimalityRow(f"{c.tag}-{k}", val, se, passed))
        if passed and base > val + 3.0 * np.hypot(base_se, se):
            ok = False
    return rows, ok


def minimality_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidate", "M_v", "stderr", "rotation_test"])
    for r in rows:
        w.writerow([r.candidate, repr(r.value), repr(r.se), int(r.passed_rotation)])
    return buf.getvalue()


__all__ = [
    "AffineMap", "FactorizationResult", "MinimalityRow", "RotationCandidate", "RotationStats",
    "candidate_rotations", "factorize", "minimality_check", "minimality_csv", "parse_map",
    "planar_rotation", "random_orthogonal", "rotation_test",
]
