"""Shared domain types, parameter validation, seed derivation and sup-norm helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# relative slack used when flooring quantities like alpha*n that are
# integers in exact arithmetic but land a few ulps below in floating point
_SNAP_RTOL = 1e-9


class InvalidParams(ValueError):
    """Raised when a parameter tuple violates a type invariant.

    ``field`` names the offending parameter and ``reason`` is a short
    machine-readable code such as ``"out_of_range"``.
    """

    def __init__(self, field: str, reason: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.reason = reason

    def as_dict(self) -> dict:
        return {"field": self.field, "reason": self.reason, "message": str(self)}


def snap_floor(x: float) -> int:
    """floor(x), treating values within a relative 1e-9 of an integer as that integer."""
    r = round(x)
    if abs(x - r) <= _SNAP_RTOL * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


def snap_ceil(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _SNAP_RTOL * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _mix64(z: int) -> int:
    # SplitMix64 finalizer; a bijection on 64-bit words
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, stream_id: int) -> int:
    """Derive an independent 64-bit seed for ``stream_id`` from ``master``.

    For a fixed master the map ``stream_id -> seed`` is injective on
    ``[0, 2**64 - 1)``, because it is a composition of bijections.
    """
    if stream_id < 0:
        raise ValueError("stream_id must be non-negative")
    base = _mix64(master & MASK64)
    return _mix64(base + ((stream_id + 1) * _GOLDEN & MASK64))


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


def linf_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True)
class ProblemParams:
    """Dimension, sample count, error radius and subset fraction of an instance."""

    d: int
    n: int
    epsilon: float
    alpha: float

    def __post_init__(self):
        validate_params(self.d, self.n, self.epsilon, self.alpha)

    @property
    def subset_size(self) -> int:
        return snap_floor(self.alpha * self.n)

    @property
    def intersection_cap(self) -> int:
        return snap_floor(2 * self.alpha**2 * self.n)

    @property
    def tightness_intersection(self) -> int:
        # intersection size of the joint lower-bound regime
        return snap_ceil(self.alpha**2 * self.n / 2)

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "subset_size": self.subset_size,
            "intersection_cap": self.intersection_cap,
        }


def validate_params(d, n, epsilon, alpha) -> None:
    if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 1:
        raise InvalidParams("d", "not_positive_integer", f"expected positive integer, got {d!r}")
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParams("n", "not_positive_integer", f"expected positive integer, got {n!r}")
    if not (0.0 < epsilon < 1.0):
        raise InvalidParams("epsilon", "out_of_range", f"must lie in (0, 1), got {epsilon!r}")
    if not (0.0 < alpha < 0.5):
        raise InvalidParams("alpha", "out_of_range", f"must lie in (0, 1/2), got {alpha!r}")
    if snap_floor(alpha * n) < 1:
        raise InvalidParams(
            "alpha", "empty_subsets", f"floor(alpha*n) = 0 for alpha={alpha}, n={n}"
        )


@dataclass(frozen=True)
class Target:
    """A target point together with the range it was declared to lie in.

    ``halfwidth`` is ``None`` for the unit cube, otherwise the half-width of a
    scaled box; ``center`` shifts the box (affine inputs).
    """

    z: tuple
    halfwidth: Optional[float] = None
    center: tuple = field(default=())

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", tuple(float(v) for v in z.ravel()))
        if self.center:
            if len(self.center) != len(self.z):
                raise InvalidParams("center", "dimension_mismatch", "center and z differ in length")
            c = np.asarray(self.center, dtype=float)
        else:
            c = np.zeros(len(self.z))
        h = 1.0 if self.halfwidth is None else float(self.halfwidth)
        if h <= 0:
            raise InvalidParams("halfwidth", "out_of_range", "halfwidth must be positive")
        if np.any(np.abs(z - c) > h):
            raise InvalidParams("z", "out_of_range", f"target outside declared box of half-width {h}")

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.z, dtype=float)

    @property
    def d(self) -> int:
        return len(self.z)
