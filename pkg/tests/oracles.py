"""Independent reference computations used by the tests.

Nothing here calls the solvers under test: sequence-level quantities are
computed by brute force over all K**n sequences, and continuous quantities
by closed forms, vertex enumeration or dense grids.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize, minimize_scalar


# -- divergences and transport ---------------------------------------------------------

def kl(p, q) -> float:
    total = []
    for a, b in zip(p, q):
        if a == 0:
            continue
        if b == 0:
            return math.inf
        total.append(a * (math.log(a) - math.log(b)))
    return max(math.fsum(total), 0.0)


def emd_vertices(p, q, d) -> float:
    """Transportation LP by enumerating basic feasible solutions (K <= 4)."""
    p, q, d = np.asarray(p, float), np.asarray(q, float), np.asarray(d, float)
    k = len(p)
    a = np.zeros((2 * k, k * k))
    for i in range(k):
        a[i, i * k:(i + 1) * k] = 1
        a[k + i, i::k] = 1
    b = np.concatenate([p, q])
    best = math.inf
    for cells in itertools.combinations(range(k * k), 2 * k - 1):
        sub = a[:, cells]
        if np.linalg.matrix_rank(sub) < 2 * k - 1:
            continue
        x, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if np.max(np.abs(sub @ x - b)) > 1e-12 or np.min(x) < -1e-12:
            continue
        best = min(best, float(d.ravel()[list(cells)] @ x))
    return best


def emd_line(p, q) -> float:
    """EMD for ``d(i, j) = |i - j|``: L1 distance between CDFs."""
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))[:-1]))


def emd_tv(p, q) -> float:
    """EMD for Hamming distortion: total variation."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def gendiv_binary_hamming(py, p, delta) -> float:
    """Reachable X-marginals form the interval ``py0 -/+ delta`` clipped to [0, 1];
    the KL is convex in ``x0`` and minimized at ``p0``, so clamp."""
    py0, p0 = float(py[0]), float(p[0])
    lo, hi = max(0.0, py0 - delta), min(1.0, py0 + delta)
    x0 = min(max(p0, lo), hi)
    return kl([x0, 1 - x0], p)


def gendiv_grid_k3(py, p, delta, emd_fn, step=1e-3) -> float:
    """Dense simplex grid, then SLSQP polish from the best grid point.

    Both closed-form EMDs are sums of absolute values of affine maps of x,
    so the budget is written with epigraph variables ``s >= |A (x - py)|``
    and the polish has only linear constraints.
    """
    py, p = np.asarray(py, float), np.asarray(p, float)
    m = int(round(1 / step))
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = i + j <= m
    x = np.stack([i[keep], j[keep], m - i[keep] - j[keep]], axis=1) / m
    if emd_fn is emd_tv:
        amap, scale = np.eye(3), 0.5
    else:
        amap, scale = np.array([[1.0, 0, 0], [1.0, 1.0, 0]]), 1.0
    cost = scale * np.abs((x - py) @ amap.T).sum(axis=1)
    feas = x[cost <= delta + 1e-15]
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(feas > 0, feas * np.log(feas / p), 0.0).sum(axis=1)
    best = int(np.argmin(vals))
    x0 = feas[best]
    r = amap.shape[0]

    def obj(z):
        xx = np.clip(z[:3], 1e-300, None)
        return float(np.sum(xx * np.log(xx / p)))

    cons = [{"type": "eq", "fun": lambda z: np.sum(z[:3]) - 1.0},
            {"type": "ineq", "fun": lambda z: delta - scale * np.sum(z[3:])},
            {"type": "ineq", "fun": lambda z: z[3:] - amap @ (z[:3] - py)},
            {"type": "ineq", "fun": lambda z: z[3:] + amap @ (z[:3] - py)}]
    z0 = np.concatenate([x0, np.abs(amap @ (x0 - py))])
    res = minimize(obj, z0, method="SLSQP", constraints=cons,
                   bounds=[(0, 1)] * 3 + [(0, None)] * r,
                   options={"ftol": 1e-15, "maxiter": 1000})
    xr = np.clip(res.x[:3], 0, None)
    xr = xr / xr.sum()
    if emd_fn(xr, py) <= delta + 1e-10:
        return min(float(vals[best]), kl(xr, p))
    return float(vals[best])


def chernoff_information(p0, p1) -> float:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    res = minimize_scalar(lambda s: math.log(float(np.sum(p0 ** s * p1 ** (1 - s)))),
                          bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
    return -float(res.fun)


# -- sequence-level brute force ---------------------------------------------------------------

def sequences(k: int, n: int) -> list:
    return list(itertools.product(range(k), repeat=n))


def seq_distortion(x, y, d) -> Fraction:
    return sum((Fraction(d[a][b]).limit_denominator(10 ** 9) for a, b in zip(x, y)), Fraction(0))


def joint_counts(x, y, k) -> tuple:
    c = [[0] * k for _ in range(k)]
    for a, b in zip(x, y):
        c[a][b] += 1
    return tuple(map(tuple, c))


def attack_channel(k: int, n: int, d, delta) -> np.ndarray:
    """Dominant attack channel as a dense ``K**n x K**n`` matrix, built from its definition.

    For each x: group admissible y by joint composition with x, weight each
    group equally, and split the group weight uniformly among its members.
    """
    seqs = sequences(k, n)
    budget = n * Fraction(delta).limit_denominator(10 ** 9) if not isinstance(delta, Fraction) \
        else n * delta
    chan = np.zeros((len(seqs), len(seqs)))
    for ix, x in enumerate(seqs):
        groups: dict = {}
        for iy, y in enumerate(seqs):
            if seq_distortion(x, y, d) <= budget:
                groups.setdefault(joint_counts(x, y, k), []).append(iy)
        for members in groups.values():
            for iy in members:
                chan[ix, iy] = 1.0 / (len(groups) * len(members))
    return chan


def iid_probs(p, k: int, n: int) -> np.ndarray:
    return np.array([math.prod(p[s] for s in x) for x in sequences(k, n)])


def induced_pmf(p, k, n, d, delta) -> np.ndarray:
    return iid_probs(p, k, n) @ attack_channel(k, n, d, delta)


def empirical_gendiv(y, p, d, delta) -> float:
    """Minimum of ``D(type(x) || p)`` over all x with ``d(x, y) <= n delta``."""
    n, k = len(y), len(p)
    budget = n * Fraction(delta).limit_denominator(10 ** 9) if not isinstance(delta, Fraction) \
        else n * delta
    best = math.inf
    for x in sequences(k, n):
        if seq_distortion(x, y, d) <= budget:
            counts = np.bincount(x, minlength=k) / n
            best = min(best, kl(counts, p))
    return best


def np_accept(y, p0, d, delta0, lam) -> float:
    score = empirical_gendiv(y, p0, d, delta0)
    return math.exp(-len(y) * max(lam - score, 0.0))


def np_exponent_binary_hamming(p0, p1, delta0, delta1, lam, step=1e-4) -> float:
    """Grid over ``P_Y(0)`` plus the exact ends of the feasible interval.

    ``D~(P_Y, p0)`` is convex in ``P_Y(0)``, so the feasible set is an
    interval; its ends are located by bisection between grid neighbours.
    """
    fp = lambda y: gendiv_binary_hamming([y, 1 - y], p0, delta0)
    fn = lambda y: gendiv_binary_hamming([y, 1 - y], p1, delta1)
    grid = [i * step for i in range(int(round(1 / step)) + 1)]
    feas = [fp(y) <= lam for y in grid]
    cand = [y for y, ok in zip(grid, feas) if ok]
    for i in range(len(grid) - 1):
        if feas[i] != feas[i + 1]:
            lo, hi = (grid[i], grid[i + 1]) if feas[i] else (grid[i + 1], grid[i])
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if fp(mid) <= lam:
                    lo = mid
                else:
                    hi = mid
            cand.append(lo)
    return min(fn(y) for y in cand)
