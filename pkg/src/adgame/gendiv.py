"""Transport-constrained divergence between an attacked PMF and a source.

``gen_divergence(py, p, d, delta)`` is the smallest ``D(P_X || p)`` over
joint PMFs ``P_XY`` whose Y-marginal is ``py`` and whose expected distortion
is at most ``delta``: the divergence of ``py`` from the source ``p`` once an
attacker with distortion budget ``delta`` is accounted for. The empirical
variant restricts the minimization to joint types of length-``n`` sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from . import _convex
from .errors import DimensionError, SolverError, ValidationError
from .simplex import Coupling, DistortionMatrix, Pmf, as_pmf, kl_array
from .typeclasses import Composition, enumerate_joint_compositions

GAP_TOL = 1e-10


@dataclass(frozen=True)
class GenDivResult:
    value: float
    argmin_px: Optional[Pmf]
    coupling: Optional[Coupling]
    diagnostics: dict = field(default_factory=dict, compare=False)


def row_sum_map(k: int) -> np.ndarray:
    """``(k, k*k)`` matrix taking a flattened coupling to its X-marginal."""
    return np.kron(np.eye(k), np.ones((1, k)))


def col_sum_map(k: int) -> np.ndarray:
    """``(k, k*k)`` matrix taking a flattened coupling to its Y-marginal."""
    return np.kron(np.ones((1, k)), np.eye(k))


def _check(py: Pmf, p: Pmf, d: DistortionMatrix, delta: float) -> None:
    k = py.alphabet_size
    if p.alphabet_size != k or d.alphabet_size != k:
        raise DimensionError(f"alphabet sizes differ: {k}, {p.alphabet_size}, {d.alphabet_size}")
    if not np.isfinite(delta) or delta < 0:
        raise ValidationError(f"distortion level must be finite and >= 0, got {delta}")


def gendiv_program(py: Pmf, p: Pmf, d: DistortionMatrix, delta: float) -> _convex.ConvexProgram:
    k = py.alphabet_size
    n = k * k
    objective = _convex.Smooth([_convex.KLTerm(row_sum_map(k), p.probs)], np.zeros(n))
    budget = _convex.Smooth([], d.values.ravel().copy(), -float(delta))
    return _convex.ConvexProgram(n, objective, [budget], col_sum_map(k), py.probs.copy(),
                                 np.ones(n, dtype=bool))


def _frank_wolfe_gap(c: np.ndarray, p: Pmf, py: Pmf, d: DistortionMatrix, delta: float) -> float:
    """Linear-minimization certificate ``<grad f(C), C - S>`` over the feasible polytope.

    Restricted to rows in ``supp(p)``, where the objective is finite.
    """
    k = p.alphabet_size
    x = c.sum(axis=1)
    live_rows = p.probs > 0
    grad = np.zeros((k, k))
    pos = live_rows & (x > 0)
    grad[pos] = (np.log(x[pos] / p.probs[pos]) + 1.0)[:, None]
    # rows with x == 0 have gradient -inf; they are penalized below only if unused
    grad[live_rows & (x <= 0)] = -1e6
    bounds = [(0.0, None) if live_rows[i] else (0.0, 0.0) for i in range(k) for _ in range(k)]
    res = linprog(grad.ravel(), A_ub=d.values.ravel()[None, :], b_ub=[delta],
                  A_eq=col_sum_map(k), b_eq=py.probs, bounds=bounds, method="highs")
    if res.status != 0:
        return float("nan")
    return float(grad.ravel() @ c.ravel() - res.fun)


def gen_divergence(py, p, d: DistortionMatrix, delta: float,
                   certify: bool = True) -> GenDivResult:
    """Minimum of ``D(P_X || p)`` over couplings with Y-marginal ``py`` and ``E d <= delta``.

    Solved by an interior-point method on the coupling polytope. The value is
    ``+inf`` (reason in ``diagnostics``) when ``py`` cannot be reached from
    ``supp(p)`` within the distortion budget. The reported
    ``primal_dual_gap`` is the central-path duality bound of the barrier
    method; with ``certify`` it is tightened by the Frank-Wolfe gap from one
    transportation-type LP at the returned coupling, and a gap above
    ``1e-9 * max(1, value)`` raises.
    """
    py, p = as_pmf(py), as_pmf(p)
    delta = float(delta)
    _check(py, p, d, delta)
    k = py.alphabet_size
    sol = _convex.solve(gendiv_program(py, p, d, delta), gap_tol=GAP_TOL)
    diag = {"iterations": sol.diagnostics.get("newton", 0),
            "barrier_gap": sol.gap, "solver": "barrier"}
    if sol.status == "infeasible":
        diag["reason"] = "unreachable_support: " + sol.diagnostics.get("reason", "")
        diag["primal_dual_gap"] = 0.0
        return GenDivResult(float("inf"), None, None, diag)
    c = np.clip(sol.z.reshape(k, k), 0.0, None)
    # restore the Y-marginal exactly after clipping
    col = c.sum(axis=0)
    scale = np.divide(py.probs, col, out=np.zeros(k), where=col > 0)
    c = c * scale[None, :]
    px = c.sum(axis=1)
    px = px / px.sum()
    value = kl_array(px, p.probs)
    # the central-path bound is a valid duality gap only when centering converged
    barrier_bound = sol.gap if not sol.diagnostics.get("capped_centering") else float("inf")
    gap = barrier_bound
    if certify:
        diag["fw_gap"] = _frank_wolfe_gap(c, p, py, d, delta)
        gap = min(gap, diag["fw_gap"])
    diag["primal_dual_gap"] = gap
    if certify and not gap <= 1e-9 * max(1.0, value):
        raise SolverError(f"generalized divergence not certified (gap {gap:.3g})")
    return GenDivResult(value, Pmf(px), Coupling.from_solver(c), diag)


def gen_divergence_value(py, p, d: DistortionMatrix, delta: float) -> float:
    return gen_divergence(py, p, d, delta, certify=False).value


def gen_divergence_empirical(y_type: Composition, p, d: DistortionMatrix, delta) -> float:
    """Minimum of ``D(x-type/n || p)`` over joint compositions with Y-counts ``y_type``
    and total distortion at most ``n * delta``."""
    p = as_pmf(p)
    if p.alphabet_size != y_type.alphabet_size or d.alphabet_size != p.alphabet_size:
        raise DimensionError("alphabet sizes differ")
    # enumerate with rows indexing y by transposing the distortion
    joints = enumerate_joint_compositions(y_type, d, delta, fixed="y")
    return min_divergence_over_x_types(joints.x_counts, y_type.n, p)


def min_divergence_over_x_types(x_counts: np.ndarray, n: int, p: Pmf) -> float:
    if x_counts.shape[0] == 0:
        return float("inf")
    uniq = np.unique(x_counts, axis=0) / n
    return min(kl_array(row, p.probs) for row in uniq)
