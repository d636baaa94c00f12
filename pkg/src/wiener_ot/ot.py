"""Discrete optimal couplings for the quadratic Cameron-Martin cost.

``solve_exact`` handles equal-size uniform clouds (an assignment problem),
``solve_entropic`` arbitrary weights via log-domain Sinkhorn. Both return a
:class:`DiscreteCoupling` whose cost is recomputed from the points.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations, permutations
from math import comb, factorial

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .rng import stream

_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteCoupling:
    source: object
    target: object
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    order: int
    cost: float
    method: str = "exact"
    eps: float = 0.0
    iterations: int = 0
    converged: bool = True
    tie_break: str = "lexicographic"

    @property
    def permutation(self):
        """Target index paired with each source index (exact couplings only)."""
        if self.method != "exact":
            raise AttributeError("only exact couplings are permutations")
        perm = np.empty(self.source.n, dtype=int)
        perm[self.rows] = self.cols
        return perm

    def row_sums(self):
        return np.bincount(self.rows, self.weights, minlength=self.source.n)

    def col_sums(self):
        return np.bincount(self.cols, self.weights, minlength=self.target.n)

    def marginal_residuals(self):
        return (
            float(np.max(np.abs(self.row_sums() - self.source.weights))),
            float(np.max(np.abs(self.col_sums() - self.target.weights))),
        )

    def to_dense(self):
        out = np.zeros((self.source.n, self.target.n))
        np.add.at(out, (self.rows, self.cols), self.weights)
        return out

    def support_pairs(self):
        return self.source.points[self.rows], self.target.points[self.cols]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "weight"])
        for i, j, w in zip(self.rows, self.cols, self.weights):
            writer.writerow([int(i), int(j), repr(float(w))])
        return buf.getvalue()

    def sidecar(self):
        rres, cres = self.marginal_residuals()
        return {
            "cost": self.cost,
            "order": self.order,
            "solver": self.method,
            "eps": self.eps,
            "iterations": self.iterations,
            "converged": self.converged,
            "marginal_residuals": {"rows": rres, "cols": cres},
        }

    def sidecar_json(self):
        return json.dumps(self.sidecar(), sort_keys=True, indent=2)


def transport_cost(coupling, order=2):
    """``sum_ij gamma_ij |x_i - y_j|^order``."""
    x, y = coupling.support_pairs()
    dist2 = np.sum((x - y) ** 2, axis=1)
    per = dist2 if order == 2 else np.sqrt(dist2) ** order
    return float(np.sum(coupling.weights * per))


def cost_matrix(x, y, order=2):
    return cdist(x, y, "sqeuclidean" if order == 2 else "euclidean") if order in (1, 2) else (
        cdist(x, y) ** order
    )


def _conjugate_potentials_affine(x, y):
    """Reduced cost from the moment-matched Gaussian Brenier potential.

    Returns ``2 (Phi(x_i) + Phi*(y_j) - <x_i, y_j>)``, which is ``>= 0`` by
    Fenchel-Young and differs from the quadratic cost by row/column terms only.
    """
    mx, my = x.mean(0), y.mean(0)
    d = x.shape[1]
    s1 = np.atleast_2d(np.cov(x.T, bias=True)) + 1e-12 * np.eye(d)
    s2 = np.atleast_2d(np.cov(y.T, bias=True)) + 1e-12 * np.eye(d)
    from .maps import _psd_sqrt

    r1 = _psd_sqrt(s1)
    r1i = np.linalg.inv(r1)
    a = r1i @ _psd_sqrt(r1 @ s2 @ r1) @ r1i
    a = 0.5 * (a + a.T)
    ai = np.linalg.inv(a)
    xc, yc = x - mx, y - my
    phi = 0.5 * np.einsum("ni,ij,nj->n", xc, a, xc) + x @ my
    phis = 0.5 * np.einsum("ni,ij,nj->n", yc, ai, yc) + y @ mx - mx @ my
    return phi, phis


def _conjugate_potentials_separable(x, y):
    """Coordinatewise potentials of the sorted (monotone) matchings of the marginals."""
    n, d = x.shape
    phi = np.zeros(n)
    phis = np.zeros(n)
    for k in range(d):
        ox = np.argsort(x[:, k], kind="stable")
        oy = np.argsort(y[:, k], kind="stable")
        xs, ys = x[ox, k], y[oy, k]
        # piecewise linear convex potential with slope ys[i] on [xs[i], xs[i+1]]
        f = np.concatenate([[0.0], np.cumsum(ys[:-1] * np.diff(xs))])
        fs = xs * ys - f
        px = np.empty(n)
        px[ox] = f
        py = np.empty(n)
        py[oy] = fs
        phi += px
        phis += py
    return phi, phis


def _reduced_quadratic(x, y):
    best = None
    builders = [_conjugate_potentials_separable]
    if x.shape[0] > 2 * x.shape[1]:
        builders.append(_conjugate_potentials_affine)
    gram = x @ y.T
    for builder in builders:
        phi, phis = builder(x, y)
        red = np.add.outer(phi, phis)
        red -= gram
        red *= 2.0
        # more distinct row minima means fewer augmentation steps
        score = np.unique(np.argmin(red, axis=1)).size
        if best is None or score > best[0]:
            best = (score, red)
        if score == x.shape[0]:
            break
    return best[1]


def _column_potentials(cost, perm, tol, max_passes):
    """Bellman-Ford potentials certifying ``perm``; ``None`` if not converged."""
    n = perm.size
    row_of_col = np.empty(n, dtype=int)
    row_of_col[perm] = np.arange(n)
    w = cost[row_of_col]
    w -= np.diag(w)[:, None].copy()
    buf = np.empty_like(w)
    v = np.zeros(n)
    for _ in range(max_passes):
        np.add(w, v[:, None], out=buf)
        nv = np.minimum(v, buf.min(axis=0))
        if np.all(nv >= v - tol):
            return v
        v = nv
    return None


def _lexicographic_matching(tight, perm):
    """Lexicographically smallest perfect matching inside the tight-edge graph."""
    n = perm.size
    match_row = perm.copy()
    match_col = np.empty(n, dtype=int)
    match_col[perm] = np.arange(n)
    adj = [np.flatnonzero(tight[i]) for i in range(n)]
    for i in range(n):
        for j in adj[i]:
            if j >= match_row[i]:
                break
            # free column match_row[i]; look for an alternating path from the
            # row currently holding j to that column through unfixed rows
            goal = match_row[i]
            start = match_col[j]
            if start < i:
                continue
            prev = {start: None}
            queue = [start]
            found = None
            while queue and found is None:
                r = queue.pop(0)
                for c in adj[r]:
                    if c == j:
                        continue
                    if c == goal:
                        found = (r, c)
                        break
                    r2 = match_col[c]
                    if r2 <= i or r2 in prev:
                        continue
                    prev[r2] = (r, c)
                    queue.append(r2)
            if found is None:
                continue
            r, c = found
            while True:
                old = match_row[r]
                match_row[r] = c
                match_col[c] = r
                if prev[r] is None:
                    break
                r, c = prev[r][0], old
            match_row[i] = j
            match_col[j] = i
            break
    return match_row


def solve_exact(source, target, order=2, tie_break=True, max_passes=64):
    """Optimal assignment coupling between equal-size uniform clouds.

    Among optimal assignments the lexicographically smallest permutation is
    returned, whenever dual potentials can be certified (``tie_break`` field of
    the result reports ``"skipped"`` otherwise).
    """
    if source.n != target.n:
        raise SolverError(f"exact solver needs equal sizes, got {source.n} and {target.n}")
    if not (source.is_uniform and target.is_uniform):
        raise SolverError("exact solver needs uniform weights; resample the clouds")
    if source.dim != target.dim:
        raise SolverError("clouds live in different dimensions")
    x, y = source.points, target.points
    n = source.n
    if order == 2:
        red = _reduced_quadratic(x, y)
        scale = np.max(np.sum(x * x, 1)) + np.max(np.sum(y * y, 1)) + 1.0
    elif order == 1:
        red = cost_matrix(x, y, 1)
        scale = np.sqrt(np.max(np.sum(x * x, 1))) + np.sqrt(np.max(np.sum(y * y, 1))) + 1.0
    else:
        raise ValueError("order must be 1 or 2")
    _, perm = linear_sum_assignment(red)
    status = "none"
    if tie_break and n > 1:
        tol = 64 * _EPS * scale
        matched = red[np.arange(n), perm]
        if red.min() >= -tol and matched.max() <= tol:
            # the preconditioning potentials already certify optimality
            v = np.zeros(n)
        else:
            v = _column_potentials(red, perm, tol, max_passes)
        if v is None:
            status = "skipped"
        else:
            u = red[np.arange(n), perm] - v[perm]
            tight = red - u[:, None] - v[None, :] <= tol
            perm = _lexicographic_matching(tight, perm)
            status = "lexicographic"
    rows = np.arange(n)
    weights = np.full(n, 1.0 / n)
    coupling = DiscreteCoupling(source, target, rows, perm, weights, order, 0.0, "exact", tie_break=status)
    return _with_cost(coupling)


def _with_cost(c):
    return DiscreteCoupling(
        c.source, c.target, c.rows, c.cols, c.weights, c.order, transport_cost(c, c.order),
        c.method, c.eps, c.iterations, c.converged, c.tie_break,
    )


def _row_violation(f, g, c, e, loga, logb, a):
    logp = (f[:, None] + g[None, :] - c) / e + loga[:, None] + logb[None, :]
    return 0.5 * np.sum(np.abs(np.exp(logsumexp(logp, axis=1)) - a))


def _g_update(f, c, e, loga):
    return -e * logsumexp((f[:, None] - c) / e + loga[:, None], axis=0)


def _newton_polish(f, c, e, loga, logb, a, b, tol, steps):
    """Newton's method on ``f`` with ``g`` eliminated by the exact column update.

    The row-sum map ``r(f)`` has Jacobian ``(diag(r) - P diag(1/b) P^T) / e``,
    singular only along constants, which the added ``11^T / n`` term removes.
    """
    n = f.size
    g = _g_update(f, c, e, loga)
    viol = _row_violation(f, g, c, e, loga, logb, a)
    used = 0
    for _ in range(steps):
        if viol <= tol:
            break
        p = np.exp((f[:, None] + g[None, :] - c) / e + loga[:, None] + logb[None, :])
        r = p.sum(1)
        jac = (np.diag(r) - (p / b) @ p.T) / e + np.full((n, n), 1.0 / n)
        try:
            step = np.linalg.solve(jac, a - r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-4:
            f2 = f + t * step
            g2 = _g_update(f2, c, e, loga)
            v2 = _row_violation(f2, g2, c, e, loga, logb, a)
            if v2 < viol:
                break
            t *= 0.5
        used += 1
        if not v2 < viol:
            break
        f, g, viol = f2, g2, v2
    return f, g, viol, used


def solve_entropic(source, target, eps, maxiter=5000, tol=1e-9, order=2, guard=1e6, newton_max=2048):
    """Entropic coupling by log-domain Sinkhorn with eps-scaling (halving from 1).

    ``tol`` bounds the total-variation marginal violation. For at most
    ``newton_max`` source points the last stage is finished by Newton steps on
    the dual potentials, which converge where plain Sinkhorn crawls at small
    ``eps``. If ``tol`` is not met within ``maxiter`` iterations (Newton steps
    included), the best iterate is returned with ``converged=False``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, y = source.points, target.points
    a, b = source.weights, target.weights
    if np.any(a <= 0) or np.any(b <= 0):
        raise SolverError("entropic solver needs strictly positive weights")
    c = cost_matrix(x, y, order)
    loga, logb = np.log(a), np.log(b)
    schedule = []
    e = 1.0
    while e > eps:
        schedule.append(e)
        e *= 0.5
    schedule.append(eps)
    f = np.zeros(source.n)
    g = np.zeros(target.n)
    it = 0
    viol = np.inf
    diverged = False
    use_newton = source.n <= newton_max
    for stage, e in enumerate(schedule):
        last = stage == len(schedule) - 1
        stage_tol = max(tol, 1e-5) if (not last or use_newton) else tol
        stage_iters = 0
        while it < maxiter:
            f = -e * logsumexp((g[None, :] - c) / e + logb[None, :], axis=1)
            g = _g_update(f, c, e, loga)
            it += 1
            stage_iters += 1
            if max(np.abs(f).max(), np.abs(g).max()) > guard:
                diverged = True
                break
            if it % 10 == 0 or stage_iters == 1:
                viol = _row_violation(f, g, c, e, loga, logb, a)
                if viol <= stage_tol:
                    break
            if not last and stage_iters >= 500:
                break
        if diverged or it >= maxiter:
            break
    if not diverged and use_newton and it < maxiter:
        f, g, viol, used = _newton_polish(f, c, eps, loga, logb, a, b, tol, min(50, maxiter - it))
        it += used
        while viol > tol and it < maxiter:
            f = -eps * logsumexp((g[None, :] - c) / eps + logb[None, :], axis=1)
            g = _g_update(f, c, eps, loga)
            it += 1
            if it % 10 == 0:
                viol = _row_violation(f, g, c, eps, loga, logb, a)
    logp = (f[:, None] + g[None, :] - c) / eps + loga[:, None] + logb[None, :]
    p = np.exp(logp)
    viol = 0.5 * np.sum(np.abs(p.sum(1) - a)) + 0.5 * np.sum(np.abs(p.sum(0) - b))
    converged = bool(viol <= tol) and not diverged
    rows, cols = np.nonzero(p > 0)
    coupling = DiscreteCoupling(
        source, target, rows, cols, p[rows, cols], order, 0.0, "entropic", float(eps), it, converged,
        "none",
    )
    return _with_cost(coupling)


def wasserstein(source, target, order=2, solver="exact", eps=0.01, maxiter=5000, tol=1e-9):
    """``d_H`` (order 2, square root of the minimal cost) or ``d_1`` (order 1)."""
    if source.dim != target.dim:
        raise SolverError("clouds live in different dimensions")
    if solver == "exact":
        coupling = solve_exact(source, target, order)
    elif solver == "entropic":
        coupling = solve_entropic(source, target, eps, maxiter, tol, order)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return float(np.sqrt(coupling.cost)) if order == 2 else coupling.cost


def w1_from_cdfs(cdf_a, cdf_b, lo=-np.inf, hi=np.inf):
    """One-dimensional ``d_1 = int |F_a - F_b|`` by adaptive quadrature."""
    val, _ = quad(lambda t: abs(cdf_a(t) - cdf_b(t)), lo, hi, limit=400, epsabs=1e-12, epsrel=1e-10)
    return float(val)


@dataclass(frozen=True)
class MonotonicityReport:
    cycles_tested: int
    worst_sum: float
    worst_cycle: tuple
    tol: float
    exhaustive: bool
    max_cycle_len: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def monotone(self):
        return self.worst_sum <= self.tol

    @property
    def verdict(self):
        return "monotone" if self.monotone else "violated"


def _pairs_arrays(pairs):
    if isinstance(pairs, DiscreteCoupling):
        return pairs.support_pairs()
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        return np.asarray(pairs[0], float), np.asarray(pairs[1], float)
    xs = np.array([np.atleast_1d(p[0]) for p in pairs], dtype=float)
    ys = np.array([np.atleast_1d(p[1]) for p in pairs], dtype=float)
    return xs, ys


def _cycle_count(n, kmax):
    return sum(comb(n, k) * factorial(k - 1) for k in range(2, kmax + 1))


def check_cyclic_monotone(pairs, cycle_budget=200_000, max_cycle_len=None, tol=1e-9, seed=0):
    """Largest ``sum_t <y_{i_t}, x_{i_{t+1}} - x_{i_t}>`` over tested cycles.

    All cycles of length ``2..max_cycle_len`` are enumerated when their number
    fits in ``cycle_budget``; otherwise ``cycle_budget`` random cycles are drawn.
    """
    x, y = _pairs_arrays(pairs)
    n = x.shape[0]
    if n == 0:
        raise ValueError("pairs must be nonempty")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    kmax = n if max_cycle_len is None else min(int(max_cycle_len), n)
    if n < 2 or kmax < 2:
        return MonotonicityReport(0, -np.inf, (), tol, True, kmax)
    gram = y @ x.T
    delta = gram - np.diag(gram)[:, None]
    total = _cycle_count(n, kmax)
    exhaustive = total <= cycle_budget
    worst, worst_cycle, tested = -np.inf, (), 0
    if exhaustive:
        for k in range(2, kmax + 1):
            cyc = []
            for sub in combinations(range(n), k):
                head, rest = sub[0], sub[1:]
                cyc.extend((head,) + p for p in permutations(rest))
            worst, worst_cycle = _scan(delta, np.array(cyc), worst, worst_cycle)
            tested += len(cyc)
    else:
        rng = stream(seed, "cyclic-monotone")
        lengths = rng.integers(2, kmax + 1, size=int(cycle_budget))
        for k in np.unique(lengths):
            m = int(np.sum(lengths == k))
            cyc = np.argsort(rng.random((m, n)), axis=1)[:, :k]
            worst, worst_cycle = _scan(delta, cyc, worst, worst_cycle)
            tested += m
    return MonotonicityReport(tested, float(worst), worst_cycle, tol, exhaustive, kmax)


def _scan(delta, cyc, worst, worst_cycle):
    nxt = np.roll(cyc, -1, axis=1)
    sums = delta[cyc, nxt].sum(axis=1)
    i = int(np.argmax(sums))
    if sums[i] > worst:
        return float(sums[i]), tuple(int(c) for c in cyc[i])
    return worst, worst_cycle
