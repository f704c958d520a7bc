"""Earth Mover Distance between PMFs on a common finite alphabet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, SolverError
from .simplex import Coupling, DistortionMatrix, as_pmf

GAP_TOL = 1e-9


@dataclass(frozen=True)
class TransportResult:
    cost: float
    plan: Coupling
    diagnostics: dict = field(default_factory=dict, compare=False)


def _marginal_constraints(k: int) -> np.ndarray:
    """Rows: X-marginal sums (k) then Y-marginal sums (k) of a flattened k x k plan."""
    a = np.zeros((2 * k, k * k))
    for i in range(k):
        a[i, i * k:(i + 1) * k] = 1.0
        a[k + i, i::k] = 1.0
    return a


def emd(p, q, d: DistortionMatrix) -> TransportResult:
    """Minimum of ``E d(X, Y)`` over couplings with ``X ~ p`` and ``Y ~ q``.

    Solved as a transportation LP (HiGHS dual simplex); optimality is
    certified by the LP duals: the returned ``dual_gap`` is the primal cost
    minus the dual objective, and dual feasibility ``u_i + v_j <= d_ij`` is
    checked explicitly.
    """
    p, q = as_pmf(p), as_pmf(q)
    k = p.alphabet_size
    if q.alphabet_size != k or d.alphabet_size != k:
        raise DimensionError(f"alphabet sizes differ: {k}, {q.alphabet_size}, {d.alphabet_size}")
    cost_vec = d.values.ravel()
    a_eq = _marginal_constraints(k)
    b_eq = np.concatenate([p.probs, q.probs])
    res = linprog(cost_vec, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverError(f"transportation LP failed: {res.message}")
    plan = np.clip(res.x.reshape(k, k), 0.0, None)
    cost = float(np.sum(plan * d.values))
    duals = res.eqlin.marginals
    u, v = duals[:k], duals[k:]
    dual_obj = float(u @ p.probs + v @ q.probs)
    dual_infeas = float(max(0.0, np.max(u[:, None] + v[None, :] - d.values)))
    gap = cost - dual_obj
    if abs(gap) > GAP_TOL * max(1.0, abs(cost)) or dual_infeas > GAP_TOL:
        raise SolverError(f"EMD not certified: gap {gap:.3g}, dual infeasibility {dual_infeas:.3g}")
    diagnostics = {"iterations": int(res.nit), "dual_gap": gap, "dual_infeasibility": dual_infeas}
    return TransportResult(max(cost, 0.0), Coupling.from_solver(plan), diagnostics)


def emd_value(p, q, d: DistortionMatrix) -> float:
    return emd(p, q, d).cost
