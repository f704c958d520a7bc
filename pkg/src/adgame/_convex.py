"""Small dense log-barrier solver for KL-type convex programs.

The programs solved here all have the form::

    minimize    f_0(z)
    subject to  f_k(z) <= 0,   A z = b,   z_j >= 0 for flagged j

where every ``f`` is a weighted sum of ``KL(M z || r)`` terms (``M`` a
nonnegative linear map, ``KL`` the unnormalized ``sum x ln(x/r)``) plus an
affine part. Problem sizes are tiny (a few dozen variables), so everything
is dense numpy.

Before the barrier runs, the feasible set is reduced to a face with a
nonempty relative interior: variables that are forced to zero (by a zero
reference mass in a KL term, by a zero right-hand side, or found by LP) are
removed and inequalities that are tight on the whole polytope become
equalities. A strictly feasible start is found by a max-slack LP followed,
if needed, by a barrier phase I on the nonlinear constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import SolverError

SLACK_TOL = 1e-9
MU = 16.0
MAX_NEWTON = 200
T_MAX = 1e20
LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass
class KLTerm:
    m: np.ndarray
    ref: np.ndarray
    weight: float = 1.0


@dataclass
class Smooth:
    """``sum_w KL(M z || r) + lin . z + const``."""

    kl: List[KLTerm]
    lin: np.ndarray
    const: float = 0.0

    @property
    def is_linear(self) -> bool:
        return not self.kl

    def value(self, z: np.ndarray) -> float:
        val = float(self.lin @ z) + self.const
        for term in self.kl:
            x = term.m @ z
            if np.any(x <= 0):
                pos = x > 0
                if np.any(x < 0):
                    return float("inf")
                val += term.weight * float(np.sum(x[pos] * np.log(x[pos] / term.ref[pos])))
            else:
                val += term.weight * float(np.sum(x * np.log(x / term.ref)))
        return val

    def grad(self, z: np.ndarray) -> np.ndarray:
        g = self.lin.astype(float).copy()
        for term in self.kl:
            x = term.m @ z
            g += term.weight * (term.m.T @ (np.log(x / term.ref) + 1.0))
        return g

    def hess(self, z: np.ndarray) -> np.ndarray:
        n = z.size
        h = np.zeros((n, n))
        for term in self.kl:
            x = term.m @ z
            h += term.weight * (term.m.T * (1.0 / x)) @ term.m
        return h

    def restrict(self, keep: np.ndarray) -> "Smooth":
        """Drop columns not in ``keep``; rows of KL maps left empty are dropped."""
        terms = []
        for term in self.kl:
            m = term.m[:, keep]
            rows = np.any(m != 0, axis=1)
            if np.any(rows):
                terms.append(KLTerm(m[rows], term.ref[rows], term.weight))
        return Smooth(terms, self.lin[keep], self.const)


@dataclass
class ConvexProgram:
    n: int
    objective: Smooth
    ineqs: List[Smooth]
    a_eq: np.ndarray
    b_eq: np.ndarray
    nonneg: np.ndarray


@dataclass
class Solution:
    status: str
    z: np.ndarray
    value: float
    gap: float
    diagnostics: dict = field(default_factory=dict)


class _Infeasible(Exception):
    pass


def _forced_zero_by_kl(prog: ConvexProgram) -> np.ndarray:
    zero = np.zeros(prog.n, dtype=bool)
    for fn in [prog.objective] + prog.ineqs:
        for term in fn.kl:
            dead = term.ref <= 0
            if np.any(dead):
                zero |= np.any(term.m[dead] != 0, axis=0)
    return zero


def _propagate_sign_rules(prog: ConvexProgram, alive: np.ndarray) -> bool:
    """Zero out variables pinned by ``sum_j g_j z_j <= 0`` with ``g >= 0``.

    Returns True when something changed. Raises ``_Infeasible``.
    """
    changed = False
    rows = [(prog.a_eq[r], prog.b_eq[r], True) for r in range(prog.a_eq.shape[0])]
    rows += [(fn.lin, -fn.const, False) for fn in prog.ineqs if fn.is_linear]
    for coef, rhs, is_eq in rows:
        c = np.where(alive, coef, 0.0)
        live = c != 0
        if not np.any(live):
            if (is_eq and abs(rhs) > SLACK_TOL) or (not is_eq and rhs < -SLACK_TOL):
                raise _Infeasible("constraint with no live variables is violated")
            continue
        if np.any(~prog.nonneg[live]):
            continue
        if np.all(c[live] >= 0):
            if rhs < -SLACK_TOL:
                raise _Infeasible("nonnegative combination bounded by a negative number")
            if rhs <= SLACK_TOL:
                alive &= ~(live & (c > 0))
                changed = True
        elif is_eq and np.all(c[live] <= 0):
            if rhs > SLACK_TOL:
                raise _Infeasible("nonpositive combination equal to a positive number")
            if rhs >= -SLACK_TOL:
                alive &= ~(live & (c < 0))
                changed = True
    return changed


def _lp_bounds(prog: ConvexProgram, alive: np.ndarray):
    bounds = []
    for j in range(prog.n):
        if not alive[j]:
            bounds.append((0.0, 0.0))
        elif prog.nonneg[j]:
            bounds.append((0.0, None))
        else:
            bounds.append((-1e6, 1e6))
    return bounds


def _linear_rows(prog: ConvexProgram):
    lin = [fn for fn in prog.ineqs if fn.is_linear]
    g = np.array([fn.lin for fn in lin]).reshape(len(lin), prog.n)
    h = np.array([-fn.const for fn in lin])
    return g, h


def _max_slack(prog, alive, g, h, tight):
    """LP: maximize s with z_j >= s on live nonneg vars and g z + s <= h on loose rows."""
    n = prog.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_ub, b_ub = [], []
    for j in range(n):
        if alive[j] and prog.nonneg[j]:
            row = np.zeros(n + 1)
            row[j] = -1.0
            row[-1] = 1.0
            a_ub.append(row)
            b_ub.append(0.0)
    a_eq = [np.append(prog.a_eq[r], 0.0) for r in range(prog.a_eq.shape[0])]
    b_eq = list(prog.b_eq)
    for r in range(g.shape[0]):
        if tight[r]:
            a_eq.append(np.append(g[r], 0.0))
            b_eq.append(h[r])
        else:
            a_ub.append(np.append(g[r], 1.0))
            b_ub.append(h[r])
    bounds = _lp_bounds(prog, alive) + [(None, 1.0)]
    res = linprog(c, A_ub=np.array(a_ub) if a_ub else None, b_ub=b_ub if b_ub else None,
                  A_eq=np.array(a_eq) if a_eq else None, b_eq=b_eq if b_eq else None,
                  bounds=bounds, method="highs", options=LP_OPTIONS)
    if res.status == 2:
        raise _Infeasible("linear constraints are infeasible")
    if res.status != 0:
        raise SolverError(f"phase-I LP failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def _facial_reduction(prog, alive, g, h, tight):
    """Find variables that vanish and inequalities that are tight on the whole polytope."""
    a_eq = list(prog.a_eq)
    b_eq = list(prog.b_eq)
    for r in range(g.shape[0]):
        if tight[r]:
            a_eq.append(g[r])
            b_eq.append(h[r])
    loose = [r for r in range(g.shape[0]) if not tight[r]]
    a_ub = g[loose] if loose else None
    b_ub = h[loose] if loose else None
    kw = dict(A_ub=a_ub, b_ub=b_ub, A_eq=np.array(a_eq) if a_eq else None,
              b_eq=b_eq if b_eq else None, bounds=_lp_bounds(prog, alive), method="highs",
              options=LP_OPTIONS)
    for j in range(prog.n):
        if alive[j] and prog.nonneg[j]:
            c = np.zeros(prog.n)
            c[j] = -1.0
            res = linprog(c, **kw)
            if res.status == 0 and -res.fun <= SLACK_TOL:
                alive[j] = False
    kw["bounds"] = _lp_bounds(prog, alive)
    for r in loose:
        res = linprog(g[r], **kw)
        if res.status == 0 and h[r] - res.fun <= SLACK_TOL:
            tight[r] = True


def _equality_system(prog, alive, g, h, tight):
    rows = [prog.a_eq[:, alive]] + [g[tight][:, alive]]
    rhs = [prog.b_eq, h[tight]]
    a = np.vstack(rows) if sum(r.shape[0] for r in rows) else np.zeros((0, int(alive.sum())))
    return a, np.concatenate(rhs)


class _Reduced:
    """Barrier problem on the live variables, parametrized as ``z = z0 + F u``."""

    def __init__(self, objective: Smooth, cons: List[Smooth], nonneg: np.ndarray,
                 a: np.ndarray, b: np.ndarray):
        self.objective = objective
        self.cons = cons
        self.nonneg = nonneg
        self.basis = scipy.linalg.null_space(a) if a.shape[0] else np.eye(nonneg.size)
        self.a, self.b = a, b

    @property
    def m(self) -> int:
        return int(self.nonneg.sum()) + len(self.cons)

    def project(self, z: np.ndarray) -> np.ndarray:
        if self.a.shape[0] == 0:
            return z
        corr, *_ = np.linalg.lstsq(self.a, self.a @ z - self.b, rcond=None)
        return z - corr

    def strictly_feasible(self, z: np.ndarray) -> bool:
        if not np.all(np.isfinite(z)) or not np.all(z[self.nonneg] > 0):
            return False
        return all(c.value(z) < 0 for c in self.cons)

    def merit(self, z: np.ndarray, t: float):
        if not self.strictly_feasible(z):
            return float("inf")
        vals = np.array([c.value(z) for c in self.cons])
        if not np.all(vals < 0):
            return float("inf")
        return t * self.objective.value(z) - float(np.sum(np.log(z[self.nonneg]))) \
            - float(np.sum(np.log(-vals)))

    def newton_system(self, z: np.ndarray, t: float):
        g = t * self.objective.grad(z)
        hm = t * self.objective.hess(z)
        zn = z[self.nonneg]
        g[self.nonneg] -= 1.0 / zn
        hm[self.nonneg, self.nonneg] += 1.0 / zn ** 2
        for c in self.cons:
            v = c.value(z)
            gc = c.grad(z)
            g += gc / (-v)
            hm += np.outer(gc, gc) / v ** 2
            if not c.is_linear:
                hm += c.hess(z) / (-v)
        return g, hm

    def center(self, z: np.ndarray, t: float, stats: dict) -> np.ndarray:
        basis = self.basis
        if basis.shape[1] == 0:
            return z
        prev = float("inf")
        for _ in range(MAX_NEWTON):
            g, hm = self.newton_system(z, t)
            gr = basis.T @ g
            hr = basis.T @ hm @ basis
            du = -_psd_solve(hr, gr)
            dec = abs(float(-gr @ du))
            if not np.isfinite(dec):
                break
            stats["newton"] += 1
            stats["decrement"] = dec
            if dec <= 1e-10:
                break
            # roundoff floor: in the quadratic region the decrement stopped shrinking
            if dec < 1e-3 and dec >= 0.5 * prev:
                break
            prev = dec
            if _ == MAX_NEWTON - 1:
                stats["capped_centering"] = stats.get("capped_centering", 0) + 1
            dz = basis @ du
            step = 1.0
            neg = (dz < 0) & self.nonneg
            if np.any(neg):
                step = min(1.0, 0.99 * float(np.min(-z[neg] / dz[neg])))
            if dec > 0.5:
                base = self.merit(z, t)
                slope = float(g @ dz)
                while step > 1e-14:
                    znew = z + step * dz
                    if self.merit(znew, t) <= base + 0.25 * step * slope:
                        break
                    step *= 0.5
                else:
                    break
            else:
                # quadratic region: pure Newton, only guard strict feasibility
                while step > 1e-14:
                    znew = z + step * dz
                    if self.strictly_feasible(znew):
                        break
                    step *= 0.5
                else:
                    break
            z = znew
        return z

    def run(self, z: np.ndarray, gap_tol: float, stats: dict,
            stop: Optional[Callable[[np.ndarray], bool]] = None) -> tuple:
        t = 1.0
        m = max(self.m, 1)
        while True:
            z = self.center(z, t, stats)
            stats["outer"] += 1
            # an inexact center adds at most its Newton decrement / t to the bound
            slack = stats.get("decrement", 0.0) / t
            if stop is not None and stop(z):
                break
            if m / t + slack <= gap_tol:
                break
            if t > T_MAX:
                stats["t_capped"] = True
                break
            t *= MU
        return z, m / t + slack


def _psd_solve(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``h x = g`` for a PSD ``h``, adding jitter when Cholesky fails."""
    h = 0.5 * (h + h.T)
    jitter = 0.0
    scale = max(float(np.max(np.abs(np.diag(h)))), 1e-300)
    for _ in range(8):
        try:
            cf = scipy.linalg.cho_factor(h + jitter * np.eye(h.shape[0]))
            return scipy.linalg.cho_solve(cf, g)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, scale * 1e-15)
    return np.linalg.lstsq(h, g, rcond=None)[0]


def solve(prog: ConvexProgram, gap_tol: float = 1e-10) -> Solution:
    """Minimize ``prog``; returns status ``optimal`` or ``infeasible``."""
    stats = {"newton": 0, "outer": 0, "lp": 0}
    try:
        return _solve(prog, gap_tol, stats)
    except _Infeasible as exc:
        return Solution("infeasible", np.zeros(prog.n), float("inf"), 0.0,
                        {"reason": str(exc), **stats})


def _solve(prog: ConvexProgram, gap_tol: float, stats: dict) -> Solution:
    alive = ~_forced_zero_by_kl(prog)
    while _propagate_sign_rules(prog, alive):
        pass
    g, h = _linear_rows(prog)
    tight = np.zeros(g.shape[0], dtype=bool)
    for r in range(g.shape[0]):
        if not np.any(g[r, alive] != 0) and h[r] <= SLACK_TOL:
            # no live variables left: the row reads 0 <= h, satisfied within tolerance
            tight[r] = True
            h[r] = 0.0
    z_lp, slack = _max_slack(prog, alive, g, h, tight)
    stats["lp"] += 1
    if slack < -SLACK_TOL:
        raise _Infeasible(f"linear constraints are infeasible (max slack {slack:.3g})")
    reduced = False
    while True:
        if slack <= SLACK_TOL or reduced:
            _facial_reduction(prog, alive, g, h, tight)
            while _propagate_sign_rules(prog, alive):
                pass
            z_lp, slack = _max_slack(prog, alive, g, h, tight)
            stats["lp"] += 1
            if not slack > 0 and np.any(alive & prog.nonneg):
                raise SolverError(f"could not find a relative interior point (slack {slack:.3g})")
        live_nonneg = prog.nonneg[alive]
        a, b = _equality_system(prog, alive, g, h, tight)
        cons = [fn.restrict(alive) for fn in prog.ineqs if not fn.is_linear]
        cons += [fn.restrict(alive) for fn, tt in
                 zip([f for f in prog.ineqs if f.is_linear], tight) if not tt]
        objective = prog.objective.restrict(alive)
        red = _Reduced(objective, cons, live_nonneg, a, b)
        z = red.project(z_lp[alive])
        if np.all(z[live_nonneg] > 0) and all(c.value(z) < 0 for c in cons if c.is_linear):
            break
        if reduced:
            raise SolverError("projected phase-I point left the feasible interior")
        # a nearly degenerate face: the LP slack did not survive projection
        reduced = True

    nonlinear = [c for c in cons if not c.is_linear]
    if any(c.value(z) >= 0 for c in nonlinear):
        z = _phase_one(red, z, nonlinear, gap_tol, stats)

    gap = 0.0
    if red.basis.shape[1]:
        z, gap = red.run(z, gap_tol, stats)
    full = np.zeros(prog.n)
    full[alive] = z
    value = objective.value(z)
    stats["live_variables"] = int(alive.sum())
    stats["tight_inequalities"] = int(tight.sum())
    return Solution("optimal", full, value, gap, stats)


def _phase_one(red: _Reduced, z: np.ndarray, nonlinear: List[Smooth], gap_tol: float,
               stats: dict) -> np.ndarray:
    """Minimize a common slack ``s`` with ``c_k(z) <= s`` until ``s < 0``."""
    n = z.size
    lin_cons = [c for c in red.cons if c.is_linear]

    def lift(fn: Smooth, s_coef: float) -> Smooth:
        terms = [KLTerm(np.hstack([t.m, np.zeros((t.m.shape[0], 1))]), t.ref, t.weight)
                 for t in fn.kl]
        return Smooth(terms, np.append(fn.lin, s_coef), fn.const)

    s0 = max(c.value(z) for c in nonlinear) + 1.0
    cons = [lift(c, -1.0) for c in nonlinear] + [lift(c, 0.0) for c in lin_cons]
    # keep the phase-I problem bounded: s >= -1 and a wide box on free variables
    floor = np.zeros(n + 1)
    floor[-1] = -1.0
    cons.append(Smooth([], floor, -1.0))
    for j in np.flatnonzero(~red.nonneg):
        radius = 1e3 * (1.0 + abs(z[j]) + s0)
        for sign in (1.0, -1.0):
            row = np.zeros(n + 1)
            row[j] = sign
            cons.append(Smooth([], row, -sign * z[j] - radius))
    objective = Smooth([], np.append(np.zeros(n), 1.0))
    a = np.hstack([red.a, np.zeros((red.a.shape[0], 1))])
    ph = _Reduced(objective, cons, np.append(red.nonneg, False), a, red.b)
    w0 = np.append(z, s0)
    # thin feasible sets (slack below gap_tol) need a tighter phase-I gap
    w, _ = ph.run(w0, min(gap_tol, 1e-15), stats, stop=lambda w: w[-1] < -1e-7)
    if not w[-1] < 0 or any(c.value(w[:n]) >= 0 for c in nonlinear):
        raise _Infeasible(f"nonlinear constraints infeasible (phase-I slack {w[-1]:.3g})")
    return w[:n]
