"""Reference Gaussian space, weighted sample clouds and Monte Carlo estimators."""

import csv
import io
import struct
from dataclasses import dataclass

import numpy as np

from .rng import stream

MAX_DIM = 64
PROVENANCES = ("gaussian", "density", "pushforward")
_HEADER = struct.Struct("<QQQ")


@dataclass(frozen=True)
class GaussianSpace:
    """``R^dim`` with ``N(0, I)``; the Cameron-Martin norm is the Euclidean norm."""

    dim: int = 8

    def __post_init__(self):
        if not 1 <= int(self.dim) <= MAX_DIM:
            raise ValueError(f"dimension must be in [1, {MAX_DIM}], got {self.dim}")

    @staticmethod
    def cm_norm(h):
        return np.linalg.norm(np.asarray(h, dtype=float), axis=-1)


class SampleCloud:
    """Weighted point set standing in for an empirical measure.

    Points and weights are stored as read-only arrays, so a cloud can be shared
    freely between threads.
    """

    __slots__ = ("points", "weights", "seed", "provenance")

    def __init__(self, points, weights=None, seed=0, provenance="gaussian"):
        pts = np.array(points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=float, copy=True)
            if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be n nonnegative finite numbers")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "seed", int(seed))
        object.__setattr__(self, "provenance", provenance)

    def __setattr__(self, name, value):
        raise AttributeError("SampleCloud is immutable")

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"SampleCloud(n={self.n}, dim={self.dim}, seed={self.seed}, provenance={self.provenance!r})"

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def project(self, k):
        """Keep the first ``k`` coordinates."""
        return SampleCloud(self.points[:, :k], self.weights, self.seed, self.provenance)

    def map(self, fn, provenance="pushforward"):
        return SampleCloud(fn(self.points), self.weights, self.seed, provenance)

    def mean(self):
        return self.weights @ self.points

    def to_bytes(self):
        """Header ``(dim, n, seed)`` as little-endian uint64, row-major float64 points, then weights."""
        head = _HEADER.pack(self.dim, self.n, self.seed & ((1 << 64) - 1))
        return head + self.points.astype("<f8").tobytes(order="C") + self.weights.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob, provenance="gaussian"):
        dim, n, seed = _HEADER.unpack_from(blob, 0)
        off = _HEADER.size
        pts = np.frombuffer(blob, dtype="<f8", count=n * dim, offset=off).reshape(n, dim)
        off += 8 * n * dim
        if len(blob) >= off + 8 * n:
            w = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        else:
            w = None
        return cls(pts, w, seed, provenance)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.dim)] + ["weight"])
        for p, w in zip(self.points, self.weights):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, seed=0, provenance="gaussian"):
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, :-1], data[:, -1], seed, provenance)


def sample_standard(space, n, seed):
    """``n`` i.i.d. ``N(0, I_d)`` points with uniform weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = stream(seed, "gaussian").standard_normal((int(n), space.dim))
    return SampleCloud(x, None, seed, "gaussian")


class SamplingError(RuntimeError):
    pass


def sample_density(L, n, seed, method="rejection", batch=None, min_acceptance=1e-4):
    """Draw a cloud representing ``nu = L . mu``.

    method
        ``"rejection"``  unweighted draws, envelope ``b . mu`` with ``b = L.upper``.
        ``"importance"`` Gaussian points with self-normalized weights ``L(x)``.
        ``"exact"``      ``L.transport`` applied to ``sample_standard(n, seed)``;
                         the same seed therefore gives a cloud coupled point by
                         point with the Gaussian cloud.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    space = GaussianSpace(L.dim)
    if method == "importance":
        base = sample_standard(space, n, seed)
        lw = L.log(base.points)
        if not np.all(np.isfinite(lw) | (lw == -np.inf)):
            bad = base.points[~np.isfinite(lw) & (lw != -np.inf)][0]
            raise SamplingError(f"non-finite density at {bad.tolist()}")
        w = np.exp(lw - lw.max())
        w /= w.sum()
        # force an exact unit sum
        w[-1] = 1.0 - w[:-1].sum()
        return SampleCloud(base.points, np.clip(w, 0.0, None), seed, "density")
    if method == "exact":
        if L.transport is None:
            raise SamplingError(f"density {L.name!r} has no transport sampler")
        base = sample_standard(space, n, seed)
        return SampleCloud(L.transport(base.points), None, seed, "pushforward")
    if method != "rejection":
        raise ValueError(f"unknown sampling method {method!r}")
    if L.upper is None:
        raise SamplingError(f"rejection sampling needs an upper bound b for {L.name!r}")
    b = float(L.upper)
    rng = stream(seed, "rejection")
    batch = batch or max(1024, 2 * int(n))
    out, have, tried = [], 0, 0
    while have < n:
        x = rng.standard_normal((batch, space.dim))
        u = rng.random(batch)
        keep = u * b < L.value(x)
        tried += batch
        out.append(x[keep])
        have += int(keep.sum())
        if have / tried < min_acceptance:
            raise SamplingError(
                f"acceptance rate {have / tried:.2e} below {min_acceptance:.0e} for {L.name!r} (b={b:g})"
            )
    return SampleCloud(np.concatenate(out)[:n], None, seed, "density")


def estimate_entropy(L, cloud):
    """Monte Carlo ``E[L log L]`` with its standard error, ``0 log 0 := 0``.

    A Gaussian cloud estimates ``E_mu[L log L]``; a cloud representing ``nu``
    (provenance ``density`` or ``pushforward``) estimates the same number as
    ``E_nu[log L]``, which has finite variance in cases (such as scalings) where
    the first form does not.
    """
    logv = L.log(cloud.points)
    bad = np.isnan(logv) | (logv == np.inf)
    if np.any(bad):
        raise ValueError(f"non-finite density value at {cloud.points[bad][0].tolist()}")
    if cloud.provenance == "gaussian":
        v = np.where(logv == -np.inf, 0.0, np.exp(logv) * np.where(logv == -np.inf, 0.0, logv))
    else:
        if np.any(logv == -np.inf):
            raise ValueError(f"zero density at a sample of nu: {cloud.points[logv == -np.inf][0].tolist()}")
        v = logv
    w = cloud.weights
    est = float(w @ v)
    se = float(np.sqrt(np.sum(w**2 * (v - est) ** 2)))
    return est, se
