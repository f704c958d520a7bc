"""Finite-n play of the detection games.

Everything the defender does depends on the observed sequence only through
its type, and the dominant attack channel maps a sequence of type ``s`` to a
sequence whose type is the column sum of a uniformly chosen admissible joint
composition. Exact error probabilities are therefore sums over types, and
Monte Carlo trials can be drawn at the level of types with the same law as
sequence-level simulation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import DimensionError, ResourceBudgetError, ValidationError
from .exponents import GameSpec
from .gendiv import gen_divergence_empirical
from .simplex import DistortionMatrix, Pmf, as_pmf
from .typeclasses import (ENUMERATION_BUDGET, Composition, all_compositions, as_rational,
                          enumerate_joint_compositions, type_class_size)

MIN_EVENTS = 50
TRIAL_CHUNK = 20_000


@dataclass(frozen=True)
class DefenseEval:
    accept_h1_prob: float
    score: float

    def __post_init__(self):
        if not 0.0 <= self.accept_h1_prob <= 1.0:
            raise ValidationError(f"acceptance probability {self.accept_h1_prob} outside [0, 1]")


Defense = Callable[[Composition], DefenseEval]


@dataclass(frozen=True)
class SimulationReport:
    per_n: List[dict]
    fitted: dict
    seed: int
    diagnostics: dict = field(default_factory=dict, compare=False)


def _as_type(y: Union[Composition, Sequence[int]], k: int) -> Composition:
    if isinstance(y, Composition):
        if y.alphabet_size != k:
            raise DimensionError("type and PMF alphabet sizes differ")
        return y
    return Composition.of(y, k)


def np_defense_prob(y_type: Composition, p0, d: DistortionMatrix, delta0, lam: float
                    ) -> DefenseEval:
    """Neyman-Pearson defense: accept H1 with probability ``exp(-n [lam - score]_+)``.

    ``score`` is the empirical generalized divergence of the observed type
    from ``p0`` under distortion ``delta0``.
    """
    score = gen_divergence_empirical(y_type, p0, d, delta0)
    excess = max(float(lam) - score, 0.0)
    return DefenseEval(math.exp(-y_type.n * excess), score)


# -- induced output laws --------------------------------------------------------

def _log_type_prob(counts: np.ndarray, logp: np.ndarray) -> float:
    """``log P^n(T(s))`` for a composition ``s``."""
    if np.any((counts > 0) & ~np.isfinite(logp)):
        return -math.inf
    live = counts > 0
    n = int(counts.sum())
    return (math.lgamma(n + 1) - sum(math.lgamma(int(c) + 1) for c in counts)
            + float(np.dot(counts[live], logp[live])))


_LAW_CACHE: Dict[tuple, Dict[tuple, float]] = {}


def _output_type_law(p: Pmf, d: DistortionMatrix, delta, n: int, limit: int
                     ) -> Dict[tuple, float]:
    key = (tuple(p.probs.tolist()), d.values.tobytes(), delta, n, limit)
    hit = _LAW_CACHE.get(key)
    if hit is not None:
        return hit
    k = p.alphabet_size
    p = p.probs
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    law: Dict[tuple, float] = {}
    used = 0
    for s in all_compositions(k, n):
        lp = _log_type_prob(s.as_array(), logp)
        if lp == -math.inf:
            continue
        joints = enumerate_joint_compositions(s, d, delta, limit=limit)
        used += len(joints)
        if used > limit:
            raise ResourceBudgetError(
                f"exact computation exceeds the budget of {limit} joint compositions")
        ys, mult = np.unique(joints.y_counts, axis=0, return_counts=True)
        w = math.exp(lp) / len(joints)
        for y, m in zip(map(tuple, ys.tolist()), mult.tolist()):
            law[y] = law.get(y, 0.0) + w * m
    if len(_LAW_CACHE) > 256:
        _LAW_CACHE.clear()
    _LAW_CACHE[key] = law
    return law


def output_type_law(p, d: DistortionMatrix, delta, n: int,
                    limit: int = ENUMERATION_BUDGET) -> Dict[Composition, float]:
    """Probability that the attacked sequence has each type.

    The source emits ``n`` i.i.d. symbols from ``p`` and the attack applies
    the dominant channel with level ``delta``. Types of probability zero are
    omitted.
    """
    p = as_pmf(p)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if d.alphabet_size != p.alphabet_size:
        raise DimensionError("alphabet sizes differ")
    law = _output_type_law(p, d, as_rational(delta), int(n), int(limit))
    return {Composition(t): v for t, v in law.items()}


def induced_output_pmf(p, d: DistortionMatrix, delta, n: int,
                       limit: int = ENUMERATION_BUDGET) -> Dict[Composition, float]:
    """``Q*(y)`` for one sequence ``y`` of each type: source ``p`` seen through the attack.

    ``Q*`` is constant on type classes, so the map is keyed by type; every
    type of length ``n`` appears (with 0 where unreachable).
    """
    law = output_type_law(p, d, delta, n, limit)
    k = as_pmf(p).alphabet_size
    return {t: law.get(t, 0.0) / type_class_size(t) for t in all_compositions(k, n)}


# -- defenses ----------------------------------------------------------------------

def _heaviside(score: float, a: float) -> float:
    return 1.0 if score - a >= 0 else 0.0


def _bayes_exact_score(t: Composition, spec: GameSpec) -> float:
    n = t.n
    q0 = output_type_law(spec.p0, spec.d, spec.delta0, n).get(t, 0.0)
    q1 = output_type_law(spec.p1, spec.d, spec.delta1, n).get(t, 0.0)
    if q0 == 0.0 and q1 == 0.0:
        return 0.0
    if q0 == 0.0:
        return math.inf
    if q1 == 0.0:
        return -math.inf
    # equal class sizes cancel in the per-sequence likelihood ratio
    return math.log(q1 / q0) / n


def _bayes_single_letter_score(t: Composition, spec: GameSpec) -> float:
    d0 = gen_divergence_empirical(t, spec.p0, spec.d, spec.delta0)
    d1 = gen_divergence_empirical(t, spec.p1, spec.d, spec.delta1)
    if math.isinf(d0) and math.isinf(d1):
        return 0.0
    return d0 - d1


def bayes_defense(y: Union[Composition, Sequence[int]], spec: GameSpec,
                  n: Optional[int] = None, mode: str = "single_letter") -> DefenseEval:
    """Bayesian defense; decides H1 iff ``score >= a``.

    ``mode="exact"`` scores with ``(1/n) ln(Q1*(y) / Q0*(y))``, the optimum
    rule; ``mode="single_letter"`` with the difference of empirical
    generalized divergences from ``p0`` and ``p1``, asymptotically optimum.
    Types unreachable under both hypotheses get score 0.
    """
    if spec.a is None:
        raise ValidationError("the Bayesian defense needs a")
    t = _as_type(y, spec.k)
    if n is not None and n != t.n:
        raise ValidationError(f"n = {n} does not match the observed length {t.n}")
    if mode == "exact":
        score = _bayes_exact_score(t, spec)
    elif mode == "single_letter":
        score = _bayes_single_letter_score(t, spec)
    else:
        raise ValidationError(f"unknown Bayesian defense mode {mode!r}")
    return DefenseEval(_heaviside(score, float(spec.a)), score)


def np_defense(spec: GameSpec) -> Defense:
    if spec.lam is None:
        raise ValidationError("the Neyman-Pearson defense needs lam")
    return lambda t: np_defense_prob(t, spec.p0, spec.d, spec.delta0, spec.lam)


def bayes_defense_rule(spec: GameSpec, mode: str = "single_letter") -> Defense:
    return lambda t: bayes_defense(t, spec, mode=mode)


def always_h0(_: Composition) -> DefenseEval:
    return DefenseEval(0.0, -math.inf)


def always_h1(_: Composition) -> DefenseEval:
    return DefenseEval(1.0, math.inf)


def defense_for(spec: GameSpec, mode: str) -> Defense:
    """``mode`` in {np, bayes_single_letter, bayes_exact}."""
    if mode == "np":
        return np_defense(spec)
    if mode in ("bayes_single_letter", "bayes_exact"):
        return bayes_defense_rule(spec, mode.split("_", 1)[1])
    raise ValidationError(f"unknown defense mode {mode!r}")


# -- exact error probabilities --------------------------------------------------------

def exact_error_probs(defense: Defense, spec: GameSpec, n: int,
                      limit: int = ENUMERATION_BUDGET) -> dict:
    """FP and FN probabilities of ``defense`` against the dominant attacks at length ``n``."""
    law0 = output_type_law(spec.p0, spec.d, spec.delta0, n, limit)
    law1 = output_type_law(spec.p1, spec.d, spec.delta1, n, limit)
    cache: Dict[Composition, float] = {}

    def accept(t):
        if t not in cache:
            cache[t] = defense(t).accept_h1_prob
        return cache[t]

    fp = math.fsum(w * accept(t) for t, w in law0.items())
    fn = math.fsum(w * (1.0 - accept(t)) for t, w in law1.items())
    return {"fp": min(max(fp, 0.0), 1.0), "fn": min(max(fn, 0.0), 1.0)}


def error_prob_under_channel(defense: Defense, p, channel: np.ndarray, n: int,
                             hypothesis: int) -> float:
    """Error probability of ``defense`` when ``channel[x, y]`` is an arbitrary attack.

    Sequences are indexed in lexicographic order over ``0..K-1``; this is
    exhaustive and meant for tiny ``n``. ``hypothesis=0`` returns the FP
    probability, ``1`` the FN probability.
    """
    p = as_pmf(p)
    k = p.alphabet_size
    seqs = np.array(np.unravel_index(np.arange(k ** n), (k,) * n)).T
    if channel.shape != (k ** n, k ** n):
        raise DimensionError(f"channel must be {k ** n} x {k ** n}")
    px = np.prod(p.probs[seqs], axis=1)
    accept = np.array([defense(Composition.of(s, k)).accept_h1_prob for s in seqs])
    q = px @ channel
    if hypothesis == 0:
        return float(q @ accept)
    return float(q @ (1.0 - accept))


# -- Monte Carlo ----------------------------------------------------------------------------

def wilson_interval(events: int, trials: int, confidence: float = 0.95) -> tuple:
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    phat = events / trials
    denom = 1 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if events == 0 else max(0.0, center - half)
    hi = 1.0 if events == trials else min(1.0, center + half)
    return (lo, hi)


class _TypeLevelGame:
    """Samples attacked output types and defense decisions for one ``(n, hypothesis)``."""

    def __init__(self, p: Pmf, d: DistortionMatrix, delta, n: int, defense: Defense,
                 accept_cache: dict):
        self.p, self.d, self.delta, self.n = p, d, delta, n
        self.defense = defense
        self.accept_cache = accept_cache

    def accept_prob(self, t: tuple) -> float:
        v = self.accept_cache.get(t)
        if v is None:
            v = self.defense(Composition(t)).accept_h1_prob
            self.accept_cache[t] = v
        return v

    def run(self, trials: int, rng: np.random.Generator) -> int:
        """Number of trials in which the defense accepts H1.

        Draw order: all x-types (one multinomial call), then for each distinct
        x-type in lexicographic order one integer draw per trial picking the
        admissible joint composition, then one uniform per trial (in trial
        order) for the randomized decision.
        """
        xs = rng.multinomial(self.n, self.p.probs, size=trials)
        uniq, inverse = np.unique(xs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        ys = np.empty_like(xs)
        for u, s in enumerate(uniq):
            rows = np.flatnonzero(inverse == u)
            joints = enumerate_joint_compositions(Composition(tuple(s.tolist())), self.d,
                                                  self.delta)
            pick = rng.integers(len(joints), size=rows.size)
            ys[rows] = joints.y_counts[pick]
        yuniq, yinv = np.unique(ys, axis=0, return_inverse=True)
        probs = np.array([self.accept_prob(tuple(t.tolist())) for t in yuniq])[yinv.ravel()]
        draws = rng.random(trials)
        return int(np.count_nonzero(draws < probs))


def _fit_slope(points: List[tuple]) -> tuple:
    """Least-squares slope of ``-ln(estimate)`` against ``n``; returns (slope, stderr)."""
    if len(points) < 2:
        return float("nan"), float("nan")
    ns = np.array([p[0] for p in points], dtype=float)
    ys = -np.log([p[1] for p in points])
    if len(points) == 2:
        return float((ys[1] - ys[0]) / (ns[1] - ns[0])), float("nan")
    fit = stats.linregress(ns, ys)
    return float(fit.slope), float(fit.stderr)


def monte_carlo_simulate(spec: GameSpec, defense_mode: str, n_grid: Sequence[int],
                         trials: int, seed: int, threads: int = 1) -> SimulationReport:
    """Estimate FP and FN probabilities over ``n_grid`` and fit their exponents.

    Each ``(n, hypothesis)`` cell gets its own random stream spawned from
    ``seed``; trials are split into fixed chunks with their own child
    streams, so results do not depend on ``threads``.
    """
    if trials < 1000:
        raise ValidationError("trials must be >= 1000")
    if not n_grid or any(int(n) < 1 for n in n_grid):
        raise ValidationError("n_grid must be a nonempty list of positive integers")
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    defense = defense_for(spec, defense_mode)
    root = np.random.SeedSequence(int(seed))
    cells = root.spawn(2 * len(n_grid))
    chunks = [TRIAL_CHUNK] * (trials // TRIAL_CHUNK)
    if trials % TRIAL_CHUNK:
        chunks.append(trials % TRIAL_CHUNK)

    per_n, fn_pts, fp_pts = [], [], []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for i, n in enumerate(int(v) for v in n_grid):
            counts = []
            for h, (p, delta) in enumerate([(spec.p0, spec.delta0), (spec.p1, spec.delta1)]):
                game = _TypeLevelGame(p, spec.d, delta, n, defense, {})
                streams = cells[2 * i + h].spawn(len(chunks))
                jobs = [(c, np.random.default_rng(s)) for c, s in zip(chunks, streams)]
                if pool is None:
                    accepted = [game.run(c, r) for c, r in jobs]
                else:
                    accepted = list(pool.map(lambda job: game.run(*job), jobs))
                counts.append(sum(accepted))
            fp_events = counts[0]
            fn_events = trials - counts[1]
            row = {"n": n, "trials": trials, "fp_events": fp_events, "fn_events": fn_events,
                   "fp_hat": fp_events / trials, "fn_hat": fn_events / trials,
                   "fp_ci95": wilson_interval(fp_events, trials),
                   "fn_ci95": wilson_interval(fn_events, trials)}
            per_n.append(row)
            if fn_events >= MIN_EVENTS:
                fn_pts.append((n, row["fn_hat"]))
            if fp_events >= MIN_EVENTS:
                fp_pts.append((n, row["fp_hat"]))
    finally:
        if pool is not None:
            pool.shutdown()
    fn_slope, fn_se = _fit_slope(fn_pts)
    fp_slope, fp_se = _fit_slope(fp_pts)
    fitted = {"fn_slope": fn_slope, "fp_slope": fp_slope, "slope_stderr": fn_se,
              "fn_slope_stderr": fn_se, "fp_slope_stderr": fp_se,
              "fn_points": len(fn_pts), "fp_points": len(fp_pts)}
    return SimulationReport(per_n, fitted, int(seed),
                            {"defense_mode": defense_mode, "sampling": "type-level"})
