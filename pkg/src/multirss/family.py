"""Low-intersection families of equal-size subsets of range(n)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import derive_seed, rng_from_seed, snap_floor


@dataclass(frozen=True)
class SubsetFamily:
    n: int
    member_size: int
    subsets: tuple  # tuple of sorted tuples of 0-based indices
    certified_max_intersection: int
    build_stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subsets)

    @property
    def log2_size(self) -> float:
        return math.log2(len(self.subsets)) if self.subsets else -math.inf

    def incidence(self) -> np.ndarray:
        """n x |C| 0/1 matrix whose column j marks the members of subset j."""
        M = np.zeros((self.n, len(self.subsets)), dtype=np.float64)
        for j, s in enumerate(self.subsets):
            M[list(s), j] = 1.0
        return M

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "member_size": self.member_size,
            "certified_max_intersection": self.certified_max_intersection,
            "subsets": [list(s) for s in self.subsets],
            "build_stats": dict(self.build_stats),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubsetFamily":
        return cls(
            n=int(data["n"]),
            member_size=int(data["member_size"]),
            subsets=tuple(tuple(int(i) for i in s) for s in data["subsets"]),
            certified_max_intersection=int(data["certified_max_intersection"]),
            build_stats=dict(data.get("build_stats", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SubsetFamily":
        return cls.from_dict(json.loads(text))


class FamilyBuildError(RuntimeError):
    """No attempt produced a family within the intersection cap.

    ``best`` is the attempt with the fewest violating pairs (its certified
    cap is the largest intersection it actually contains) and ``stats``
    records attempts and violations.
    """

    reason = "cap_unachievable"

    def __init__(self, message: str, best: SubsetFamily, stats: dict):
        super().__init__(message)
        self.best = best
        self.stats = stats


@dataclass(frozen=True)
class FamilyReport:
    ok: bool
    max_intersection_found: int
    offending_pair: Optional[tuple]
    problems: tuple = ()


def uniform_subset(rng: np.random.Generator, n: int, m: int) -> tuple:
    """Uniform m-subset of range(n) by a partial Fisher-Yates shuffle."""
    if not 0 <= m <= n:
        raise ValueError(f"cannot draw {m} of {n} elements")
    pool = list(range(n))
    for i in range(m):
        j = i + int(rng.integers(n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return tuple(sorted(pool[:m]))


def _intersections(subsets, n: int) -> np.ndarray:
    M = np.zeros((len(subsets), n), dtype=np.int64)
    for i, s in enumerate(subsets):
        M[i, list(s)] = 1
    return M @ M.T


def build_family(n: int, alpha: float, requested_size: int, seed: int, max_attempts: int = 100) -> SubsetFamily:
    """Draw ``requested_size`` uniform floor(alpha*n)-subsets with pairwise
    intersections at most floor(2*alpha^2*n), restarting from scratch with a
    fresh derived seed whenever some pair (or a duplicate) violates the cap."""
    if requested_size < 1:
        raise ValueError("requested_size must be at least 1")
    if not (0.0 < alpha < 0.5):
        raise ValueError("alpha must lie in (0, 1/2)")
    m = snap_floor(alpha * n)
    if m < 1:
        raise ValueError(f"floor(alpha*n) = 0 for alpha={alpha}, n={n}")
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    if requested_size > math.comb(n, m):
        raise ValueError(f"only {math.comb(n, m)} distinct subsets of size {m} exist")
    cap = snap_floor(2 * alpha**2 * n)

    rejected_pairs = 0
    best = None
    best_bad = None
    for attempt in range(max_attempts):
        rng = rng_from_seed(derive_seed(seed, attempt))
        subsets = [uniform_subset(rng, n, m) for _ in range(requested_size)]
        inter = _intersections(subsets, n)
        iu = np.triu_indices(requested_size, k=1)
        # duplicates always count as violations, even when cap >= m
        bad = int(np.count_nonzero((inter[iu] > cap) | (inter[iu] == m)))
        rejected_pairs += bad
        if bad == 0:
            stats = {"attempts": attempt + 1, "rejected_pairs": rejected_pairs}
            return SubsetFamily(n, m, tuple(subsets), cap, stats)
        if best_bad is None or bad < best_bad:
            best_bad = bad
            best = (subsets, int(inter[iu].max()))
    stats = {"attempts": max_attempts, "rejected_pairs": rejected_pairs, "best_violations": best_bad}
    subsets, worst = best
    fam = SubsetFamily(n, m, tuple(subsets), worst, stats)
    raise FamilyBuildError(
        f"no family of {requested_size} subsets with intersections <= {cap} in {max_attempts} attempts",
        fam,
        stats,
    )


def validate_family(f: SubsetFamily) -> FamilyReport:
    """Brute-force check of sizes, sortedness, range and pairwise intersections."""
    problems = []
    for idx, s in enumerate(f.subsets):
        if len(s) != f.member_size:
            problems.append(f"subset {idx} has {len(s)} elements, expected {f.member_size}")
        if list(s) != sorted(set(s)):
            problems.append(f"subset {idx} is not sorted or has repeats")
        if s and (min(s) < 0 or max(s) >= f.n):
            problems.append(f"subset {idx} leaves range({f.n})")
    worst, pair = 0, None
    sets = [set(s) for s in f.subsets]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            k = len(sets[i] & sets[j])
            if k > worst:
                worst = k
            if pair is None and (k > f.certified_max_intersection or sets[i] == sets[j]):
                pair = (i, j)
    ok = not problems and pair is None
    return FamilyReport(ok, worst, pair, tuple(problems))


def pair_with_intersection(n: int, alpha: float, k: int, seed: int) -> tuple:
    """Two uniform floor(alpha*n)-subsets meeting in exactly ``k`` elements."""
    m = snap_floor(alpha * n)
    if not 0 <= k <= m:
        raise ValueError(f"intersection {k} not in [0, {m}]")
    if 2 * m - k > n:
        raise ValueError(f"two {m}-subsets sharing {k} elements need {2 * m - k} > {n} elements")
    rng = rng_from_seed(seed)
    pool = list(uniform_subset(rng, n, 2 * m - k))
    order = rng.permutation(len(pool))
    pool = [pool[i] for i in order]
    shared = pool[:k]
    s_only = pool[k:m]
    t_only = pool[m : 2 * m - k]
    return tuple(sorted(shared + s_only)), tuple(sorted(shared + t_only))


def union_bound_restart_prob(n: int, alpha: float, k: int) -> float:
    """C(k, 2) * exp(-alpha^2 n / 3), the per-attempt failure bound from the existence proof."""
    return math.comb(k, 2) * math.exp(-(alpha**2) * n / 3)


def guaranteed_log2_size(n: int, alpha: float) -> float:
    """log2 of the family size whose existence is guaranteed: alpha^2 n / 6."""
    return alpha**2 * n / 6
