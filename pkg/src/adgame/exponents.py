"""Equilibrium error exponents of the adversarial detection games.

Every exponent here is a small convex program over a pair of couplings
``(Q0, Q1)`` that share their Y-marginal ``P_Y`` (the PMF of the attacked
sequence): ``Q0`` carries ``P_Y`` back to a PMF judged against ``P_0`` within
distortion ``delta0``, ``Q1`` does the same for ``P_1`` within ``delta1``.
Writing the nested minimizations this way turns each formula into a single
program for :mod:`adgame._convex`.

The one exception is the false-positive component of the Bayesian game,
which minimizes over a reverse-convex set; see :func:`bayes_exponent`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from . import _convex
from .errors import DimensionError, SolverError, ValidationError
from .gendiv import col_sum_map, gen_divergence, gen_divergence_value, row_sum_map
from .simplex import Coupling, DistortionMatrix, Pmf, as_pmf, simplex_lattice
from .transport import emd

GAP_TOL = 1e-10
ACTIVE_TOL = 1e-6
CERT_TOL = 1e-8

Level = Union[float, Fraction]


@dataclass(frozen=True)
class GameSpec:
    """Parameters of a detection game.

    ``lam`` is the false-positive exponent constraint of the Neyman-Pearson
    game, ``a`` the exponential weight of the Bayesian payoff. Distortion
    levels may be given as floats, strings such as ``"1/3"`` or Fractions;
    exact values matter for finite-n enumeration.
    """

    p0: Pmf
    p1: Pmf
    d: DistortionMatrix
    delta0: Level = 0.0
    delta1: Level = 0.0
    lam: Optional[float] = None
    a: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "p0", as_pmf(self.p0))
        object.__setattr__(self, "p1", as_pmf(self.p1))
        k = self.p0.alphabet_size
        if self.p1.alphabet_size != k or self.d.alphabet_size != k:
            raise DimensionError("p0, p1 and d must share the alphabet size")
        for name in ("delta0", "delta1"):
            v = getattr(self, name)
            if isinstance(v, str):
                v = Fraction(v.strip())
                object.__setattr__(self, name, v)
            if not np.isfinite(float(v)) or float(v) < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        if self.lam is not None and not float(self.lam) > 0:
            raise ValidationError(f"lam must be > 0, got {self.lam}")
        if self.a is not None and not float(self.a) >= 0:
            raise ValidationError(f"a must be >= 0, got {self.a}")

    @property
    def k(self) -> int:
        return self.p0.alphabet_size

    @property
    def d0(self) -> float:
        return float(self.delta0)

    @property
    def d1(self) -> float:
        return float(self.delta1)

    def replace(self, **changes) -> "GameSpec":
        fields = dict(p0=self.p0, p1=self.p1, d=self.d, delta0=self.delta0,
                      delta1=self.delta1, lam=self.lam, a=self.a)
        fields.update(changes)
        return GameSpec(**fields)


@dataclass(frozen=True)
class ExponentResult:
    value: float
    argmin_py: Optional[Pmf]
    witness_couplings: Tuple[Optional[Coupling], Optional[Coupling]]
    diagnostics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class BayesExponents:
    payoff_exponent: ExponentResult
    fn_exponent: float
    fp_exponent: float


@dataclass(frozen=True)
class IndistinguishabilityResult:
    member: bool
    inner_value: float
    alpha: Optional[float]
    diagnostics: dict = field(default_factory=dict, compare=False)


class _PairLayout:
    """Index bookkeeping for ``z = [vec(Q0), vec(Q1), extra...]``."""

    def __init__(self, k: int, extra: int = 0):
        self.k = k
        self.kk = k * k
        self.n = 2 * self.kk + extra
        self.extra = extra

    def block(self, mat: np.ndarray, which: int) -> np.ndarray:
        out = np.zeros((mat.shape[0], self.n))
        out[:, which * self.kk:(which + 1) * self.kk] = mat
        return out

    def rows(self, which: int) -> np.ndarray:
        return self.block(row_sum_map(self.k), which)

    def cols(self, which: int) -> np.ndarray:
        return self.block(col_sum_map(self.k), which)

    def cost(self, d: DistortionMatrix, which: int) -> np.ndarray:
        return self.block(d.values.ravel()[None, :], which)[0]

    def nonneg(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[2 * self.kk:] = False
        return mask

    def shared_y(self) -> Tuple[np.ndarray, np.ndarray]:
        a = np.vstack([self.cols(0) - self.cols(1), np.append(np.ones(self.kk),
                                                             np.zeros(self.n - self.kk))])
        b = np.append(np.zeros(self.k), 1.0)
        return a, b

    def couplings(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        q0 = np.clip(z[:self.kk].reshape(self.k, self.k), 0.0, None)
        q1 = np.clip(z[self.kk:2 * self.kk].reshape(self.k, self.k), 0.0, None)
        return q0, q1


def _zero_lin(n: int) -> np.ndarray:
    return np.zeros(n)


def _pair_result(sol: _convex.Solution, lay: _PairLayout, value: Optional[float] = None,
                 **diag) -> ExponentResult:
    info = {"gap": sol.gap, "iterations": sol.diagnostics.get("newton", 0),
            "status": sol.status, "certified": bool(sol.gap <= CERT_TOL), **diag}
    if sol.status != "optimal":
        info["reason"] = sol.diagnostics.get("reason", "")
        return ExponentResult(float("inf"), None, (None, None), info)
    q0, q1 = lay.couplings(sol.z)
    py = q1.sum(axis=0)
    py = py / py.sum()
    return ExponentResult(max(sol.value if value is None else value, 0.0), Pmf(py),
                          (Coupling.from_solver(q0), Coupling.from_solver(q1)), info)


def _np_program(spec: GameSpec, lam: float) -> Tuple[_convex.ConvexProgram, _PairLayout]:
    lay = _PairLayout(spec.k)
    objective = _convex.Smooth([_convex.KLTerm(lay.rows(1), spec.p1.probs)], _zero_lin(lay.n))
    ineqs = [
        _convex.Smooth([_convex.KLTerm(lay.rows(0), spec.p0.probs)], _zero_lin(lay.n), -lam),
        _convex.Smooth([], lay.cost(spec.d, 0), -spec.d0),
        _convex.Smooth([], lay.cost(spec.d, 1), -spec.d1),
    ]
    a, b = lay.shared_y()
    return _convex.ConvexProgram(lay.n, objective, ineqs, a, b, lay.nonneg()), lay


def np_fn_exponent(spec: GameSpec) -> ExponentResult:
    """False-negative exponent of the Neyman-Pearson game at equilibrium.

    Minimum over attacked PMFs ``P_Y`` with ``D~_{delta0}(P_Y, P0) <= lam`` of
    ``D~_{delta1}(P_Y, P1)``. ``diagnostics["constraint_active"]`` flags
    optima on the boundary of the false-positive constraint.
    """
    if spec.lam is None:
        raise ValidationError("the Neyman-Pearson exponent needs lam")
    lam = float(spec.lam)
    prog, lay = _np_program(spec, lam)
    sol = _convex.solve(prog, gap_tol=GAP_TOL)
    res = _pair_result(sol, lay)
    if res.argmin_py is not None:
        q0 = res.witness_couplings[0].joint
        fp_side = _convex.Smooth([_convex.KLTerm(row_sum_map(spec.k), spec.p0.probs)],
                                 np.zeros(spec.k ** 2)).value(q0.ravel())
        res.diagnostics["fp_divergence"] = fp_side
        res.diagnostics["constraint_active"] = bool(abs(fp_side - lam) <= ACTIVE_TOL)
    return res


def np_fn_exponent_metric_form(spec: GameSpec) -> ExponentResult:
    """Minimum over ``P_Y`` with ``D(P_Y || P0) <= lam`` of ``D~_{delta0+delta1}(P_Y, P1)``.

    Equals :func:`np_fn_exponent` when ``d`` is a metric and upper-bounds it
    otherwise.
    """
    if spec.lam is None:
        raise ValidationError("the Neyman-Pearson exponent needs lam")
    k, kk = spec.k, spec.k ** 2
    objective = _convex.Smooth([_convex.KLTerm(row_sum_map(k), spec.p1.probs)], np.zeros(kk))
    ineqs = [
        _convex.Smooth([_convex.KLTerm(col_sum_map(k), spec.p0.probs)], np.zeros(kk),
                       -float(spec.lam)),
        _convex.Smooth([], spec.d.values.ravel().copy(), -(spec.d0 + spec.d1)),
    ]
    prog = _convex.ConvexProgram(kk, objective, ineqs, np.ones((1, kk)), np.ones(1),
                                 np.ones(kk, dtype=bool))
    sol = _convex.solve(prog, gap_tol=GAP_TOL)
    info = {"gap": sol.gap, "iterations": sol.diagnostics.get("newton", 0),
            "status": sol.status, "certified": bool(sol.gap <= CERT_TOL),
            "metric": spec.d.is_metric}
    if sol.status != "optimal":
        return ExponentResult(float("inf"), None, (None, None), info)
    q1 = np.clip(sol.z.reshape(k, k), 0.0, None)
    py = q1.sum(axis=0) / q1.sum()
    return ExponentResult(max(sol.value, 0.0), Pmf(py), (Coupling.diagonal(py), Coupling.from_solver(q1)),
                          info)


def _bayes_program(spec: GameSpec, a: float):
    lay = _PairLayout(spec.k, extra=1)
    t = np.zeros(lay.n)
    t[-1] = 1.0
    objective = _convex.Smooth([], t.copy())
    ineqs = [
        _convex.Smooth([_convex.KLTerm(lay.rows(1), spec.p1.probs)], -t),
        _convex.Smooth([_convex.KLTerm(lay.rows(0), spec.p0.probs)], -t, -a),
        _convex.Smooth([], lay.cost(spec.d, 0), -spec.d0),
        _convex.Smooth([], lay.cost(spec.d, 1), -spec.d1),
    ]
    am, b = lay.shared_y()
    return _convex.ConvexProgram(lay.n, objective, ineqs, am, b, lay.nonneg()), lay


def bayes_payoff_exponent(spec: GameSpec, a: Optional[float] = None) -> ExponentResult:
    """``min_{P_Y} max{D~_{delta1}(P_Y, P1), D~_{delta0}(P_Y, P0) - a}`` via its epigraph."""
    a = float(spec.a if a is None else a)
    prog, lay = _bayes_program(spec, a)
    sol = _convex.solve(prog, gap_tol=GAP_TOL)
    res = _pair_result(sol, lay)
    if res.argmin_py is not None:
        q0, q1 = (c.joint for c in res.witness_couplings)
        kl = lambda q, p: _convex.Smooth([_convex.KLTerm(row_sum_map(spec.k), p.probs)],
                                         np.zeros(spec.k ** 2)).value(q.ravel())
        fn_side, fp_side = kl(q1, spec.p1), kl(q0, spec.p0)
        value = max(fn_side, fp_side - a, 0.0)
        res = ExponentResult(value, res.argmin_py, res.witness_couplings,
                             {**res.diagnostics, "fn_divergence": fn_side,
                              "fp_divergence": fp_side})
    return res


def bayes_exponent(spec: GameSpec, search_step: Optional[float] = None) -> BayesExponents:
    """Payoff exponent of the Bayesian game and its false-negative / false-positive parts.

    The payoff exponent ``E`` is convex. The false-negative exponent always
    equals ``E``. The false-positive exponent ``min {D~0 : D~0 - D~1 >= a}``
    equals ``E + a`` whenever the two divergences equalize at the optimum
    (always the case when ``E > 0``); otherwise it is found by a global search
    over the simplex of ``P_Y``, available for alphabets of size 2 and 3.
    """
    if spec.a is None:
        raise ValidationError("the Bayesian exponent needs a")
    a = float(spec.a)
    payoff = bayes_payoff_exponent(spec, a)
    e = payoff.value
    if payoff.argmin_py is None:
        raise SolverError("Bayesian payoff program is infeasible")
    py = payoff.argmin_py
    d1 = gen_divergence_value(py, spec.p1, spec.d, spec.d1)
    d0 = gen_divergence_value(py, spec.p0, spec.d, spec.d0)
    payoff.diagnostics.update(witness_fn=d1, witness_fp=d0)
    if e > 1e-7 or abs(d0 - a - d1) <= 1e-7:
        payoff.diagnostics["fp_method"] = "equalized"
        return BayesExponents(payoff, e, e + a)
    fp, where = _fp_exponent_search(spec, a, search_step)
    payoff.diagnostics["fp_method"] = "search"
    payoff.diagnostics["fp_argmin_py"] = where
    if not fp >= a - 1e-8:
        raise SolverError(f"false-positive exponent {fp!r} below the floor a = {a!r}")
    return BayesExponents(payoff, e, fp)


def _fp_exponent_search(spec: GameSpec, a: float, step: Optional[float]):
    """Global search for ``min D~0(P_Y)`` subject to ``D~0 - D~1 >= a``.

    Scans a simplex lattice, then refines along the boundary of the feasible
    set. On the boundary ``D~0 = a + D~1``; refinement minimizes ``D~0`` on
    segments between each feasible lattice point and its infeasible
    neighbors.
    """
    k = spec.k
    if k > 3:
        raise ValidationError("the false-positive exponent search supports K <= 3 only")
    step = step or (0.005 if k == 2 else 0.05)

    def both(py):
        d0 = gen_divergence_value(py, spec.p0, spec.d, spec.d0)
        d1 = gen_divergence_value(py, spec.p1, spec.d, spec.d1)
        return d0, d1

    pts = list(simplex_lattice(k, step))
    vals = [both(p) for p in pts]
    feas = [i for i, (d0, d1) in enumerate(vals) if d0 - d1 >= a and np.isfinite(d0)]
    if not feas:
        return float("inf"), None
    best_i = min(feas, key=lambda i: vals[i][0])
    best, where = vals[best_i][0], pts[best_i]
    # refine: boundary crossings next to the best few feasible points
    order = sorted(feas, key=lambda i: vals[i][0])[:4]
    for i in order:
        for j, q in enumerate(pts):
            if j in feas or np.max(np.abs(q - pts[i])) > step * 1.0001:
                continue
            lo, hi = 0.0, 1.0  # fraction of the way from pts[i] toward q; lo feasible
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                d0, d1 = both(pts[i] + mid * (q - pts[i]))
                if d0 - d1 >= a:
                    lo = mid
                else:
                    hi = mid
            cand = pts[i] + lo * (q - pts[i])
            d0, _ = both(cand)
            if d0 < best:
                best, where = d0, cand
    # local polish along the boundary for the binary alphabet
    if k == 2:
        best, where = _polish_binary(spec, a, both, where, step, best)
    return best, (where.tolist() if where is not None else None)


def _polish_binary(spec, a, both, where, step, best):
    y0 = float(where[0])

    def objective(y):
        d0, d1 = both(np.array([y, 1.0 - y]))
        return d0 if d0 - d1 >= a else d0 + 1e3 * (a - (d0 - d1))

    lo, hi = max(0.0, y0 - step), min(1.0, y0 + step)
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    d0, d1 = both(np.array([res.x, 1.0 - res.x]))
    if d0 - d1 >= a and d0 < best:
        return d0, np.array([res.x, 1.0 - res.x])
    return best, where


def np_limit_exponent(spec: GameSpec) -> ExponentResult:
    """``lam -> 0`` limit of the Neyman-Pearson exponent.

    Minimum of ``D~_{delta1}(P_Y, P1)`` over ``P_Y`` reachable from ``P0``
    within distortion ``delta0``.
    """
    lay = _PairLayout(spec.k)
    objective = _convex.Smooth([_convex.KLTerm(lay.rows(1), spec.p1.probs)], _zero_lin(lay.n))
    ineqs = [
        _convex.Smooth([], lay.cost(spec.d, 0), -spec.d0),
        _convex.Smooth([], lay.cost(spec.d, 1), -spec.d1),
    ]
    a = np.vstack([lay.cols(0) - lay.cols(1), lay.rows(0)])
    b = np.concatenate([np.zeros(spec.k), spec.p0.probs])
    prog = _convex.ConvexProgram(lay.n, objective, ineqs, a, b, lay.nonneg())
    return _pair_result(_convex.solve(prog, gap_tol=GAP_TOL), lay)


def limit_exponents(spec: GameSpec) -> dict:
    """Best achievable exponents: Neyman-Pearson as ``lam -> 0``, Bayes as ``a -> 0``."""
    np_res = np_limit_exponent(spec)
    bayes = bayes_payoff_exponent(spec, 0.0)
    return {"np_limit": np_res.value, "bayes_limit": bayes.value,
            "np_result": np_res, "bayes_result": bayes}


def indistinguishability(p0, p, d: DistortionMatrix, delta0: float,
                         delta1: float) -> IndistinguishabilityResult:
    """Whether ``p`` lies in the indistinguishability region of ``p0``.

    ``inner_value`` is the smallest ``emd(p, P_Y)`` over attacked PMFs
    ``P_Y`` with ``emd(p0, P_Y) <= delta0``, solved as one LP over two
    couplings. For a metric ``d`` the optimal ``P_Y`` is the mixture
    ``alpha p0 + (1 - alpha) p`` with ``alpha = 1 - delta0 / emd(p0, p)``
    and ``inner_value`` equals ``max(0, emd(p0, p) - delta0)``. When
    ``emd(p0, p) <= delta0`` the mixture degenerates to ``P_Y = p`` and
    ``alpha`` is reported as 0. ``alpha`` is None for non-metric ``d``.
    """
    p0, p = as_pmf(p0), as_pmf(p)
    k = p0.alphabet_size
    if p.alphabet_size != k or d.alphabet_size != k:
        raise DimensionError("alphabet sizes differ")
    delta0, delta1 = float(delta0), float(delta1)
    lay = _PairLayout(k)
    # Q0: p0 -> P_Y within delta0; Q1: p -> P_Y, cost minimized
    a_eq = np.vstack([lay.rows(0), lay.rows(1), lay.cols(0) - lay.cols(1)])
    b_eq = np.concatenate([p0.probs, p.probs, np.zeros(k)])
    res = linprog(lay.cost(d, 1), A_ub=lay.cost(d, 0)[None, :], b_ub=[delta0],
                  A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverError(f"indistinguishability LP failed: {res.message}")
    inner = max(float(res.fun), 0.0)
    dual_obj = float(res.eqlin.marginals @ b_eq + res.ineqlin.marginals @ [delta0])
    direct = emd(p0, p, d).cost
    diag = {"emd_p0_p": direct, "dual_gap": float(res.fun) - dual_obj,
            "metric": d.is_metric}
    q0, q1 = lay.couplings(res.x)
    diag["argmin_py"] = (q1.sum(axis=0) / q1.sum()).tolist()
    alpha = None
    if d.is_metric:
        closed = max(0.0, direct - delta0)
        diag["closed_form_value"] = closed
        if abs(closed - inner) > 1e-8:
            raise SolverError(f"metric closed form {closed!r} disagrees with LP value {inner!r}")
        # alpha = 0 (P_Y = p itself) when p is already within reach of p0
        alpha = 1.0 - delta0 / direct if direct > delta0 else 0.0
    return IndistinguishabilityResult(inner <= delta1 + 1e-9, inner, alpha, diag)


def _sweep_row(p0, pt, d, delta0, delta1, with_limits):
    ind = indistinguishability(p0, pt, d, delta0, delta1)
    row = {"pmf": pt.tolist(), "member": ind.member, "inner_value": ind.inner_value}
    if with_limits:
        lim = limit_exponents(GameSpec(p0, Pmf(pt), d, delta0, delta1))
        row["np_limit"] = lim["np_limit"]
        row["bayes_limit"] = lim["bayes_limit"]
    return row


def region_sweep(p0, d: DistortionMatrix, delta0: float, delta1: float, grid_step: float,
                 with_limits: bool = True, threads: int = 1) -> list:
    """Tabulate membership and limiting exponents over a simplex lattice (K = 2 or 3)."""
    p0 = as_pmf(p0)
    k = p0.alphabet_size
    if k not in (2, 3):
        raise ValidationError("region sweeps support alphabets of size 2 or 3")
    if not 0 < grid_step <= 0.5:
        raise ValidationError("grid_step must lie in (0, 0.5]")
    pts = list(simplex_lattice(k, grid_step))
    job = lambda pt: _sweep_row(p0, pt, d, delta0, delta1, with_limits)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, pts))
    return [job(pt) for pt in pts]
