"""Method-of-types combinatorics for length-n sequences over a finite alphabet.

Covers sequence types (compositions), joint types of sequence pairs, exact
type-class sizes, the count of distortion-admissible conditional type
classes, and exact sampling from the attack channel that picks an
admissible conditional type class uniformly at random and then a sequence
uniformly inside it.

Distortion budgets are checked in exact rational arithmetic: the
constraint ``sum_ij n(i,j) d(i,j) <= n * delta`` is evaluated on integers
after scaling by a common denominator, so boundary classes are never lost to
float rounding. A float such as ``1/3`` is read as the simplest fraction
that rounds to it (see :func:`as_rational`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, ResourceBudgetError, ValidationError
from .simplex import DistortionMatrix, Pmf

ENUMERATION_BUDGET = 10_000_000

Rational = Union[int, float, str, Fraction]


def as_rational(v: Rational) -> Fraction:
    """Exact rational value of ``v``.

    Floats map to the simplest fraction with denominator <= 1e9 that rounds
    back to the same float, falling back to the float's exact binary value.
    """
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v.strip())
    v = float(v)
    if not math.isfinite(v):
        raise ValidationError(f"non-finite value {v}")
    approx = Fraction(v).limit_denominator(10 ** 9)
    return approx if float(approx) == v else Fraction(v)


@dataclass(frozen=True)
class Composition:
    """Symbol counts of a length-``n`` sequence."""

    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts) or not counts:
            raise ValidationError(f"invalid composition {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def alphabet_size(self) -> int:
        return len(self.counts)

    @property
    def pmf(self) -> Pmf:
        return Pmf(np.array(self.counts, dtype=float) / self.n)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @classmethod
    def of(cls, seq: Sequence[int], k: int) -> "Composition":
        arr = np.asarray(seq, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValidationError(f"symbols must lie in 0..{k - 1}")
        return cls(tuple(np.bincount(arr, minlength=k).tolist()))


@dataclass(frozen=True)
class JointComposition:
    """Pair counts ``n(i, j)``: rows index x-symbols, columns y-symbols."""

    counts: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or np.any(arr < 0):
            raise ValidationError(f"invalid joint composition {self.counts}")
        object.__setattr__(self, "counts", tuple(tuple(int(v) for v in row) for row in arr))

    @property
    def n(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def alphabet_size(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def x_type(self) -> Composition:
        return Composition(tuple(self.as_array().sum(axis=1)))

    @property
    def y_type(self) -> Composition:
        return Composition(tuple(self.as_array().sum(axis=0)))

    def distortion(self, d: DistortionMatrix) -> Fraction:
        """Exact total distortion ``sum n(i,j) d(i,j)``."""
        return sum((c * as_rational(d.values[i, j])
                    for i, row in enumerate(self.counts) for j, c in enumerate(row) if c),
                   Fraction(0))

    @classmethod
    def of(cls, x: Sequence[int], y: Sequence[int], k: int) -> "JointComposition":
        x, y = np.asarray(x, dtype=np.int64), np.asarray(y, dtype=np.int64)
        if x.shape != y.shape:
            raise DimensionError("sequences differ in length")
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (x, y), 1)
        return cls(tuple(map(tuple, counts.tolist())))


class JointCompositionSet:
    """Sequence of joint compositions backed by an ``(N, K, K)`` integer array."""

    def __init__(self, counts: np.ndarray):
        self.counts = counts

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    def __getitem__(self, i) -> JointComposition:
        return JointComposition(tuple(map(tuple, self.counts[i].tolist())))

    def __iter__(self) -> Iterator[JointComposition]:
        for i in range(len(self)):
            yield self[i]

    @property
    def x_counts(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    @property
    def y_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def _integer_budget(d: DistortionMatrix, delta: Rational, n: int):
    """Scale ``d`` and ``n * delta`` to integers over a common denominator."""
    rd = [[as_rational(v) for v in row] for row in d.values]
    rdelta = as_rational(delta)
    if rdelta < 0:
        raise ValidationError(f"distortion level must be >= 0, got {delta}")
    den = rdelta.denominator
    for row in rd:
        for v in row:
            den = den * v.denominator // math.gcd(den, v.denominator)
    dint = [[int(v * den) for v in row] for row in rd]
    budget = int(n * rdelta * den)
    big = max(max(map(max, dint)), 1) * max(n, 1) >= 2 ** 62 or budget >= 2 ** 62
    arr = np.array(dint, dtype=object if big else np.int64)
    return arr, budget


@lru_cache(maxsize=None)
def _compositions_of(c: int, k: int) -> np.ndarray:
    """All ways to write ``c`` as ``k`` ordered nonnegative parts, lexicographic."""
    if k == 1:
        return np.array([[c]], dtype=np.int64)
    rows = []
    for first in range(c + 1):
        rest = _compositions_of(c - first, k - 1)
        rows.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int64), rest]))
    out = np.vstack(rows)
    out.setflags(write=False)
    return out


def _enumerate_rows(margin: Tuple[int, ...], dint: np.ndarray, budget: int,
                    limit: int) -> np.ndarray:
    k = len(margin)
    partial = np.zeros((1, 0, k), dtype=np.int64)
    cost = np.zeros(1, dtype=dint.dtype)
    for i, c in enumerate(margin):
        rows = _compositions_of(c, k)
        row_cost = rows.astype(dint.dtype) @ dint[i]
        total = cost[:, None] + row_cost[None, :]
        keep = total <= budget
        a_idx, b_idx = np.nonzero(keep)
        if a_idx.size > limit:
            raise ResourceBudgetError(
                f"enumeration exceeds the budget of {limit} joint compositions")
        partial = np.concatenate([partial[a_idx], rows[b_idx][:, None, :]], axis=1)
        cost = total[a_idx, b_idx]
    return partial


def _lex_sort(counts: np.ndarray) -> np.ndarray:
    flat = counts.reshape(counts.shape[0], -1)
    order = np.lexsort(flat.T[::-1])
    return counts[order]


def enumerate_joint_compositions(fixed_type: Composition, d: DistortionMatrix, delta: Rational,
                                 fixed: str = "x", limit: int = ENUMERATION_BUDGET
                                 ) -> JointCompositionSet:
    """All joint compositions with the given marginal and total distortion ``<= n * delta``.

    ``fixed="x"`` fixes the row sums (the type of x); ``fixed="y"`` fixes the
    column sums. Results are in lexicographic order of the flattened count
    matrices.
    """
    k = fixed_type.alphabet_size
    if d.alphabet_size != k:
        raise DimensionError(f"alphabet sizes differ: {k}, {d.alphabet_size}")
    if fixed not in ("x", "y"):
        raise ValidationError(f"fixed must be 'x' or 'y', got {fixed!r}")
    return _enumerate_cached(fixed_type.counts, d.values.tobytes(), k, as_rational(delta),
                             fixed, limit, d)


_ENUM_CACHE: dict = {}


def _enumerate_cached(counts, dkey, k, delta, fixed, limit, d) -> JointCompositionSet:
    key = (counts, dkey, k, delta, fixed)
    hit = _ENUM_CACHE.get(key)
    if hit is not None:
        return hit
    n = sum(counts)
    dint, budget = _integer_budget(d, delta, n)
    if fixed == "y":
        dint = dint.T
    out = _enumerate_rows(counts, dint, budget, limit)
    if fixed == "y":
        out = out.transpose(0, 2, 1)
    out = _lex_sort(np.ascontiguousarray(out))
    out.setflags(write=False)
    result = JointCompositionSet(out)
    if len(_ENUM_CACHE) > 50_000:
        _ENUM_CACHE.clear()
    _ENUM_CACHE[key] = result
    return result


def count_admissible_conditional_classes(x_type: Composition, d: DistortionMatrix,
                                         delta: Rational) -> int:
    """Number of conditional type classes ``T(y|x)`` with ``d(x, y) <= n * delta``."""
    return len(enumerate_joint_compositions(x_type, d, delta))


def multinomial(counts: Sequence[int]) -> int:
    """Exact ``n! / prod(c!)``."""
    out, total = 1, 0
    for c in counts:
        total += int(c)
        out *= math.comb(total, int(c))
    return out


def type_class_size(t: Composition) -> int:
    return multinomial(t.counts)


def conditional_class_size(j: JointComposition, given: str = "x") -> int:
    """``|T(y|x)|`` (``given="x"``) or ``|T(x|y)|`` (``given="y"``), exactly."""
    arr = j.as_array()
    if given == "y":
        arr = arr.T
    out = 1
    for row in arr:
        out *= multinomial(row)
    return out


def joint_class_size(j: JointComposition) -> int:
    return multinomial(j.as_array().ravel())


def sample_attack_output(x: Sequence[int], d: DistortionMatrix, delta: Rational,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw ``y`` from the uniform-over-admissible-classes attack channel.

    Randomness is consumed in a fixed order: one ``rng.integers`` draw
    selecting the joint composition (lexicographic index among admissible
    ones for the type of ``x``), then one ``rng.permutation`` per symbol value
    ``a = 0..K-1`` shuffling the y-symbols assigned to the positions where
    ``x == a``.
    """
    k = d.alphabet_size
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        raise ValidationError("x must be nonempty")
    joints = enumerate_joint_compositions(Composition.of(x, k), d, delta)
    pick = joints.counts[int(rng.integers(len(joints)))]
    y = np.empty_like(x)
    for a in range(k):
        pos = np.flatnonzero(x == a)
        block = np.repeat(np.arange(k, dtype=np.int64), pick[a])
        y[pos] = rng.permutation(block)
    return y


def all_sequences(k: int, n: int) -> np.ndarray:
    """Every length-``n`` sequence over ``0..k-1`` in lexicographic order."""
    return np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)


def all_compositions(k: int, n: int) -> list:
    """Every type of length-``n`` sequences, lexicographic."""
    return [Composition(tuple(c)) for c in _compositions_of(n, k).tolist()]
