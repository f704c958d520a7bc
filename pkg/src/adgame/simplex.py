"""Probability-simplex primitives.

PMFs, joint PMFs (couplings), per-letter distortion matrices and the
Kullback-Leibler divergence. All quantities are in nats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, ValidationError

SUM_TOL = 1e-12

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _parse_number(v) -> float:
    if isinstance(v, str):
        return float(Fraction(v.strip()))
    return float(v)


@dataclass(frozen=True)
class Pmf:
    """Probability vector over the alphabet ``{0, ..., K-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray([_parse_number(v) for v in np.ravel(self.probs)], dtype=float)
        if probs.size < 1:
            raise ValidationError("a PMF needs at least one letter")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValidationError(f"PMF entries must be finite and nonnegative: {probs}")
        if abs(probs.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"PMF entries sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def alphabet_size(self) -> int:
        return int(self.probs.size)

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def __len__(self) -> int:
        return self.alphabet_size

    def __getitem__(self, i):
        return self.probs[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pmf):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def tolist(self) -> list:
        return self.probs.tolist()

    @classmethod
    def uniform(cls, k: int) -> "Pmf":
        return cls(np.full(k, 1.0 / k))


def as_pmf(p) -> Pmf:
    return p if isinstance(p, Pmf) else Pmf(p)


@dataclass(frozen=True)
class Coupling:
    """Joint PMF on ``A x A``; rows index X, columns index Y."""

    joint: np.ndarray

    def __post_init__(self):
        joint = np.array(self.joint, dtype=float)
        if joint.ndim != 2 or joint.shape[0] != joint.shape[1]:
            raise DimensionError(f"coupling must be a square matrix, got shape {joint.shape}")
        if not np.all(np.isfinite(joint)) or np.any(joint < 0):
            raise ValidationError("coupling entries must be finite and nonnegative")
        if abs(joint.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"coupling mass is {joint.sum()!r}, not 1")
        object.__setattr__(self, "joint", _frozen(joint))

    @property
    def alphabet_size(self) -> int:
        return int(self.joint.shape[0])

    @property
    def x_marginal(self) -> Pmf:
        return Pmf(self.joint.sum(axis=1))

    @property
    def y_marginal(self) -> Pmf:
        return Pmf(self.joint.sum(axis=0))

    @classmethod
    def from_solver(cls, joint: np.ndarray) -> "Coupling":
        """Build from a solver iterate: clip round-off negatives, renormalize."""
        joint = np.clip(np.asarray(joint, dtype=float), 0.0, None)
        return cls(joint / joint.sum())

    @classmethod
    def diagonal(cls, p) -> "Coupling":
        return cls(np.diag(as_pmf(p).probs))


@dataclass(frozen=True)
class MetricCertificate:
    symmetric: bool
    zero_diagonal: bool
    triangle_ok: bool

    @property
    def is_metric(self) -> bool:
        return self.symmetric and self.zero_diagonal and self.triangle_ok


def certify_metric(values: np.ndarray, tol: float = 0.0) -> MetricCertificate:
    """Exhaustive symmetry / diagonal / triangle-inequality scan."""
    v = np.asarray(values, dtype=float)
    symmetric = bool(np.all(np.abs(v - v.T) <= tol))
    zero_diagonal = bool(np.all(np.abs(np.diag(v)) <= tol))
    # d[i,k] <= d[i,j] + d[j,k] for every triple (i, j, k)
    via = v[:, :, None] + v[None, :, :]
    triangle_ok = bool(np.all(v[:, None, :] <= via + tol))
    return MetricCertificate(symmetric, zero_diagonal, triangle_ok)


@dataclass(frozen=True)
class DistortionMatrix:
    """Per-letter distortion ``d(i, j)`` with its metric certificate.

    ``kind`` records how the matrix was built; it is informational only.
    """

    values: np.ndarray
    metric_certificate: Optional[MetricCertificate] = None
    kind: str = field(default="explicit", compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionError(f"distortion must be a square matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValidationError("distortion entries must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(v))
        cert = certify_metric(v)
        claimed = self.metric_certificate
        if claimed is not None and claimed != cert:
            raise ValidationError(f"claimed metric certificate {claimed} does not hold ({cert})")
        object.__setattr__(self, "metric_certificate", cert)

    @property
    def alphabet_size(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_metric(self) -> bool:
        return self.metric_certificate.is_metric

    @property
    def max_value(self) -> float:
        return float(self.values.max())

    def scaled(self, alpha: float) -> "DistortionMatrix":
        return DistortionMatrix(alpha * self.values, kind=self.kind)

    def __getitem__(self, ij):
        return self.values[ij]


def make_distortion(kind: str, k: int, p: Optional[float] = None,
                    matrix: Optional[ArrayLike] = None) -> DistortionMatrix:
    """Build a distortion matrix.

    Parameters
    ----------
    kind : {"hamming", "lp_power", "explicit"}
        ``lp_power`` is ``|i - j|**p`` on the symbol indices ``0..k-1``.
    k : int
        Alphabet size, at least 2.
    p : float, optional
        Exponent for ``lp_power`` (``p >= 1``).
    matrix : array-like, optional
        Entries for ``explicit``.
    """
    if k < 2:
        raise ValidationError("alphabet size must be at least 2")
    if kind == "hamming":
        values = 1.0 - np.eye(k)
    elif kind == "lp_power":
        if p is None or p < 1:
            raise ValidationError("lp_power needs an exponent p >= 1")
        idx = np.arange(k, dtype=float)
        values = np.abs(idx[:, None] - idx[None, :]) ** float(p)
    elif kind == "explicit":
        if matrix is None:
            raise ValidationError("explicit distortion needs a matrix")
        values = np.array([[_parse_number(v) for v in row] for row in matrix], dtype=float)
        if values.shape != (k, k):
            raise DimensionError(f"explicit matrix has shape {values.shape}, expected {(k, k)}")
        if np.any(values < 0):
            raise ValidationError("explicit distortion has negative entries")
    else:
        raise ValidationError(f"unknown distortion kind {kind!r}")
    label = kind if kind != "lp_power" else f"lp_power({p:g})"
    return DistortionMatrix(values, kind=label)


def _check_sizes(*sizes: int) -> None:
    if len(set(sizes)) != 1:
        raise DimensionError(f"alphabet sizes differ: {sizes}")


def kl_divergence(p, q) -> float:
    """``D(p || q)`` in nats; ``+inf`` when ``p`` puts mass outside ``supp(q)``."""
    p, q = as_pmf(p), as_pmf(q)
    _check_sizes(p.alphabet_size, q.alphabet_size)
    return kl_array(p.probs, q.probs)


def kl_array(p: np.ndarray, q: np.ndarray) -> float:
    """Unchecked ``sum p ln(p/q)`` on raw arrays with the 0 ln 0 = 0 convention."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    # difference of logs avoids overflow in p/q for subnormal q
    val = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return max(val, 0.0)


def expected_distortion(c: Coupling, d: DistortionMatrix) -> float:
    _check_sizes(c.alphabet_size, d.alphabet_size)
    return float(np.sum(c.joint * d.values))


def simplex_lattice(k: int, step: float):
    """Points of the simplex with coordinates on a ``step`` grid, in lexicographic order.

    ``1/step`` must be an integer (up to rounding).
    """
    m = int(round(1.0 / step))
    if m < 1 or abs(m * step - 1.0) > 1e-9:
        raise ValidationError(f"grid step {step} does not divide 1")
    for head in itertools.product(range(m + 1), repeat=k - 1):
        s = sum(head)
        if s <= m:
            yield np.array(list(head) + [m - s], dtype=float) / m
