"""Exact subset-sum search in d dimensions under the sup norm.

Both engines screen candidates with fast floating-point sums and confirm
borderline ones with correctly rounded per-coordinate sums (``math.fsum``),
so the reported ``achieved`` vector and ``error`` are canonical: they do not
depend on the engine or on summation order.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import linf_distance, snap_ceil
from .family import SubsetFamily
from .sampler import SampleMatrix

EXHAUSTIVE_MAX_N = 30
MIM_MAX_N = 44
ANCHOR_EVERY = 1 << 12  # Gray-code steps between exact re-anchorings (<= 2**16)
DEFAULT_MEMORY_LIMIT = 4 << 30
PREFIX_SCHEDULE = (16, 24, 32, 40, 44)


class SearchGuardError(ValueError):
    """The instance is too large for the requested engine."""


class CoverageBudgetError(ValueError):
    def __init__(self, required: int, budget: int):
        super().__init__(f"coverage grid needs {required} points, budget is {budget}")
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class SearchResult:
    found: bool
    subset: tuple
    achieved: tuple
    error: float
    engine: str
    stats: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "found": self.found,
            "subset": list(self.subset),
            "achieved": list(self.achieved),
            "error": self.error,
            "engine": self.engine,
            "stats": dict(self.stats),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _values(m) -> np.ndarray:
    v = m.values if isinstance(m, SampleMatrix) else np.asarray(m, dtype=float)
    if v.ndim != 2:
        raise ValueError("expected an n x d matrix")
    return v


def exact_sum(values: np.ndarray, subset) -> np.ndarray:
    """Correctly rounded coordinate-wise sum of the selected rows."""
    values = np.asarray(values, dtype=float)
    idx = list(subset)
    if not idx:
        return np.zeros(values.shape[1])
    rows = values[idx]
    return np.array([math.fsum(rows[:, j]) for j in range(values.shape[1])])


def _exact_error(values, z, subset) -> float:
    return linf_distance(z, exact_sum(values, subset))


def _band(values: np.ndarray, z) -> float:
    # bound on the gap between screened and correctly rounded errors
    scale = 1.0 + float(np.abs(values).max(axis=1).sum() if values.size else 0.0)
    scale += float(np.max(np.abs(z))) if np.size(z) else 0.0
    return 1e-10 * scale


def _mask_to_subset(mask: int) -> tuple:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a.astype(np.uint64)).astype(np.int64)


def _result(values, z, subset, found, engine, stats) -> SearchResult:
    achieved = exact_sum(values, subset)
    err = linf_distance(z, achieved)
    return SearchResult(bool(found), tuple(int(i) for i in subset), tuple(float(x) for x in achieved), err, engine, stats)


# -- exhaustive (Gray code) -----------------------------------------------------


def gray_blocks(values: np.ndarray, block: int = ANCHOR_EVERY):
    """Yield ``(masks, sums)`` over all subsets in Gray-code order.

    Sums are maintained incrementally (one row added or removed per step) and
    re-anchored to an exact sum at the start of every block.
    """
    n, d = values.shape
    total = 1 << n
    for k0 in range(0, total, block):
        k = np.arange(k0, min(k0 + block, total), dtype=np.int64)
        g = k ^ (k >> 1)
        anchor = exact_sum(values, _mask_to_subset(int(g[0])))
        if len(k) == 1:
            yield g, anchor[None, :]
            continue
        kk = k[1:]
        low = kk & -kk
        bit = np.log2(low.astype(np.float64)).astype(np.int64)
        sign = np.where((g[1:] >> bit) & 1, 1.0, -1.0)
        delta = sign[:, None] * values[bit]
        sums = np.empty((len(k), d))
        sums[0] = anchor
        sums[1:] = anchor + np.cumsum(delta, axis=0)
        yield g, sums


def _exhaustive_multi(values, targets, epsilon, cardinality=None):
    """Run the exhaustive engine for several targets in one enumeration."""
    n, d = values.shape
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    T = len(targets)
    band = max(_band(values, t) for t in targets)
    found_mask = [None] * T
    best_err = [math.inf] * T
    best_mask = [None] * T
    examined = 0
    for g, sums in gray_blocks(values):
        if cardinality is not None:
            keep = _popcount(g) == cardinality
            if not keep.any():
                continue
            g, sums = g[keep], sums[keep]
        examined += len(g)
        pending = [t for t in range(T) if found_mask[t] is None]
        if not pending:
            continue
        errs = np.max(np.abs(sums[:, None, :] - targets[None, pending, :]), axis=2)
        for col, t in enumerate(pending):
            e = errs[:, col]
            hits = np.flatnonzero(e <= epsilon + band)
            for i in hits:
                mask = int(g[i])
                if e[i] <= epsilon - band or _exact_error(values, targets[t], _mask_to_subset(mask)) <= epsilon:
                    found_mask[t] = mask
                    break
            if found_mask[t] is not None:
                continue
            thresh = min(best_err[t], float(e.min())) + band
            for i in np.flatnonzero(e <= thresh):
                mask = int(g[i])
                ex = _exact_error(values, targets[t], _mask_to_subset(mask))
                if ex < best_err[t]:
                    best_err[t], best_mask[t] = ex, mask
    out = []
    for t in range(T):
        if found_mask[t] is not None:
            out.append((True, _mask_to_subset(found_mask[t])))
        elif best_mask[t] is not None:
            out.append((False, _mask_to_subset(best_mask[t])))
        else:
            out.append((False, ()))
    return out, examined


def enumerate_exhaustive(m, z, epsilon: float, cardinality: Optional[int] = None) -> SearchResult:
    """First subset in Gray-code order within ``epsilon`` of ``z``, else the best one."""
    values = _values(m)
    n = values.shape[0]
    if n > EXHAUSTIVE_MAX_N:
        raise SearchGuardError(f"n={n} exceeds the exhaustive guard {EXHAUSTIVE_MAX_N}; use meet_in_middle")
    if cardinality is not None and not 0 <= cardinality <= n:
        raise ValueError(f"cardinality must lie in [0, {n}]")
    z = _target(z, values.shape[1])
    t0 = time.perf_counter()
    [(found, subset)], examined = _exhaustive_multi(values, z[None, :], epsilon, cardinality)
    stats = {"candidates_examined": examined, "wall_time": time.perf_counter() - t0}
    return _result(values, z, subset, found, "exhaustive", stats)


def _target(z, d) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.shape != (d,):
        raise ValueError(f"target has dimension {z.size}, matrix has {d}")
    return z


# -- meet in the middle ----------------------------------------------------------


def _half_sums(rows: np.ndarray):
    d = rows.shape[1]
    sums = np.zeros((1, d))
    for r in rows:
        sums = np.concatenate([sums, sums + r])
    return sums


_P = np.uint64(0x9E3779B97F4A7C15)
_Q = np.uint64(0xC2B2AE3D27D4EB4F)


def _cell_key(cells: np.ndarray, pop: Optional[np.ndarray]) -> np.ndarray:
    # wrapping polynomial hash; collisions only add candidates that are re-checked
    key = np.zeros(cells.shape[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(cells.shape[1]):
            key = key * _P + cells[:, j].astype(np.uint64)
        if pop is not None:
            key = key + pop.astype(np.uint64) * _Q
    return key


class MeetInMiddle:
    """Half-sum tables for one matrix, reusable across queries.

    Second-half sums are bucketed on a grid of cell width just over
    ``2 * radius``; a query probes the at most ``2**d`` cells that meet the
    box around ``z - a`` for every first-half sum ``a``.  Among several hits
    the least (first-half mask, second-half mask) pair is returned, which
    lets the scan stop at the first batch of first-half rows with a hit.
    """

    def __init__(self, m, cardinality: Optional[int] = None, memory_limit: int = DEFAULT_MEMORY_LIMIT, batch_limit: int = 1 << 20):
        values = _values(m)
        n, d = values.shape
        if n > MIM_MAX_N:
            raise SearchGuardError(f"n={n} exceeds the meet-in-the-middle guard {MIM_MAX_N}")
        if cardinality is not None and not 0 <= cardinality <= n:
            raise ValueError(f"cardinality must lie in [0, {n}]")
        self.h1 = n // 2
        self.h2 = n - self.h1
        estimate = ((1 << self.h1) + (1 << self.h2)) * (8 * d + 8) + (1 << self.h2) * 3 * 8 + batch_limit * (8 * d + 40)
        if estimate > memory_limit:
            raise SearchGuardError(f"meet-in-the-middle needs about {estimate} bytes, limit is {memory_limit}")
        self.values = values
        self.n, self.d = n, d
        self.cardinality = cardinality
        self.batch_limit = batch_limit
        A = _half_sums(values[: self.h1])
        B = _half_sums(values[self.h1 :])
        ia = np.arange(len(A), dtype=np.int64)
        ib = np.arange(len(B), dtype=np.int64)
        popA, popB = _popcount(ia), _popcount(ib)
        if cardinality is not None:
            keepA = (popA <= cardinality) & (cardinality - popA <= self.h2)
            keepB = popB <= cardinality
            ia, popA, A = ia[keepA], popA[keepA], A[keepA]
            ib, popB, B = ib[keepB], popB[keepB], B[keepB]
        self.A, self.B = A, B
        self.maskA, self.maskB = ia, ib
        self.popA, self.popB = popA, popB
        self._offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
        self._tables = {}

    @property
    def candidates_total(self) -> int:
        return len(self.A) * len(self.B)

    def _table(self, w: float):
        if w not in self._tables:
            cells = np.floor(self.B / w).astype(np.int64)
            pop = self.popB if self.cardinality is not None else None
            keys = _cell_key(cells, pop)
            order = np.argsort(keys, kind="stable")
            if len(self._tables) > 4:
                self._tables.clear()
            self._tables[w] = (keys[order], order)
        return self._tables[w]

    def _batches(self, z: np.ndarray, radius: float, band: float):
        """Yield ``(i, j, err)`` for row pairs with screened error at most
        ``radius + band``.  Batches cover whole first-half rows in increasing
        order and are sorted by (i, j); each holds at most ``batch_limit``
        probed pairs unless a single row alone exceeds it."""
        s = 4 * band + 1e-7 * radius
        w = 2 * radius + 2 * s
        keys, order = self._table(w)
        nA = len(self.A)
        chunk, c0 = 256, 0
        limit = 1 << 12  # grows so that abundant hits are found cheaply
        while c0 < nA:
            c1 = min(nA, c0 + chunk)
            chunk = min(chunk * 2, 1 << 14)
            t = z - self.A[c0:c1]
            lo = np.floor((t - radius - s) / w).astype(np.int64)
            need = None if self.cardinality is None else self.cardinality - self.popA[c0:c1]
            lefts, counts = [], []
            for off in self._offsets:
                key = _cell_key(lo + off, need)
                left = np.searchsorted(keys, key, side="left")
                lefts.append(left)
                counts.append(np.searchsorted(keys, key, side="right") - left)
            lefts, counts = np.array(lefts), np.array(counts)  # offsets x rows
            cum = np.cumsum(counts.sum(axis=0))
            r0 = 0
            while r0 < len(cum):
                base = cum[r0 - 1] if r0 else 0
                r1 = max(r0 + 1, int(np.searchsorted(cum, base + limit, side="right")))
                limit = min(limit * 4, self.batch_limit)
                out = self._expand(z, radius + band, c0, r0, r1, lefts, counts, order)
                if out is not None:
                    yield out
                r0 = r1
            c0 = c1

    def _expand(self, z, limit, c0, r0, r1, lefts, counts, order):
        ii_all, jj_all = [], []
        rows = np.arange(c0 + r0, c0 + r1, dtype=np.int64)
        for left, cnt in zip(lefts[:, r0:r1], counts[:, r0:r1]):
            total = int(cnt.sum())
            if total == 0:
                continue
            ii = np.repeat(rows, cnt)
            starts = np.repeat(left - (np.cumsum(cnt) - cnt), cnt)
            ii_all.append(ii)
            jj_all.append(order[np.arange(total) + starts])
        if not ii_all:
            return None
        ii, jj = np.concatenate(ii_all), np.concatenate(jj_all)
        err = np.max(np.abs(z - self.A[ii] - self.B[jj]), axis=1)
        ok = err <= limit
        if not ok.any():
            return None
        ii, jj, err = ii[ok], jj[ok], err[ok]
        # sort by (i, j); hash collisions can report a pair twice
        code = ii * len(self.B) + jj
        _, first = np.unique(code, return_index=True)
        return ii[first], jj[first], err[first]

    def _subset(self, i, j) -> tuple:
        return _mask_to_subset(int(self.maskA[i]) | (int(self.maskB[j]) << self.h1))

    def query(self, z, epsilon: float) -> SearchResult:
        t0 = time.perf_counter()
        z = _target(z, self.d)
        values = self.values
        band = _band(values, z)
        examined = 0
        if len(self.A) == 0 or len(self.B) == 0:
            stats = {"candidates_examined": 0, "wall_time": time.perf_counter() - t0}
            return _result(values, z, (), False, "mim", stats)
        for ii, jj, ee in self._batches(z, epsilon, band):
            examined += len(ii)
            for i, j, e in zip(ii, jj, ee):
                if e <= epsilon - band or _exact_error(values, z, self._subset(i, j)) <= epsilon:
                    stats = {"candidates_examined": examined, "wall_time": time.perf_counter() - t0}
                    return _result(values, z, self._subset(i, j), True, "mim", stats)

        # no hit: widen the radius until the box contains some subset sum,
        # then keep the pairs of minimal exact error
        radius = 2 * epsilon
        while True:
            best_e, best = math.inf, None
            for ii, jj, ee in self._batches(z, radius, band):
                examined += len(ii)
                close = ee <= min(best_e, float(ee.min())) + 2 * band
                for i, j in zip(ii[close], jj[close]):
                    e = _exact_error(values, z, self._subset(i, j))
                    if e < best_e:
                        best_e, best = e, (i, j)
            if best is not None:
                break
            radius *= 2
        stats = {"candidates_examined": examined, "wall_time": time.perf_counter() - t0}
        return _result(values, z, self._subset(*best), False, "mim", stats)


def meet_in_middle(m, z, epsilon: float, cardinality: Optional[int] = None, memory_limit: int = DEFAULT_MEMORY_LIMIT) -> SearchResult:
    """Exact search: found iff some subset (of the given size) lies within ``epsilon``.

    Among hits the least (first-half mask, second-half mask) pair is
    returned; on a miss the subset of minimal error is reported instead.
    """
    return MeetInMiddle(m, cardinality, memory_limit).query(z, epsilon)


class PrefixSearch:
    """Search successively longer prefixes of the rows with meet-in-the-middle.

    Exact for n <= 44.  Beyond that only the first 44 rows are searched, so a
    hit is genuine but a miss is conservative (``stats["exact"]`` is False).
    """

    def __init__(self, m, cardinality: Optional[int] = None):
        values = _values(m)
        self.values = values
        n = values.shape[0]
        self.exact = n <= MIM_MAX_N
        if self.exact:
            self.sizes = (n,)
        else:
            self.sizes = tuple(s for s in PREFIX_SCHEDULE if s <= MIM_MAX_N)
        if cardinality is not None and not self.exact:
            raise SearchGuardError("cardinality-restricted search needs n <= 44")
        self.cardinality = cardinality
        self._engines = {}

    def _engine(self, size):
        if size not in self._engines:
            self._engines[size] = MeetInMiddle(self.values[:size], self.cardinality)
        return self._engines[size]

    def query(self, z, epsilon: float) -> SearchResult:
        res = None
        for size in self.sizes:
            res = self._engine(size).query(z, epsilon)
            if res.found:
                break
        stats = dict(res.stats, exact=self.exact, rows_searched=size)
        engine = "mim" if self.exact else "prefix"
        return SearchResult(res.found, res.subset, res.achieved, res.error, engine, stats)


def search(m, z, epsilon: float, engine: str = "auto", cardinality: Optional[int] = None) -> SearchResult:
    """Dispatch to ``exhaustive``, ``mim`` or ``auto`` (prefix-deepening mim)."""
    if engine == "exhaustive":
        return enumerate_exhaustive(m, z, epsilon, cardinality)
    if engine == "mim":
        return meet_in_middle(m, z, epsilon, cardinality)
    if engine == "auto":
        return PrefixSearch(m, cardinality).query(z, epsilon)
    raise ValueError(f"unknown engine {engine!r}")


# -- hit counting ------------------------------------------------------------------


def subset_sums(m, fam: SubsetFamily) -> np.ndarray:
    values = _values(m)
    if fam.n != values.shape[0]:
        raise ValueError(f"family is over n={fam.n}, matrix has {values.shape[0]} rows")
    if not fam.subsets:
        return np.zeros((0, values.shape[1]))
    return fam.incidence().T @ values


def count_hits(m, fam: SubsetFamily, z, epsilon: float) -> int:
    """Number of family members whose sum lies in the sup-norm box of radius epsilon around z."""
    sums = subset_sums(m, fam)
    if len(sums) == 0:
        return 0
    z = _target(z, sums.shape[1])
    return int(np.count_nonzero(np.max(np.abs(sums - z), axis=1) <= epsilon))


# -- grid coverage -------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    grid_step: float
    total_points: int
    covered_points: int
    first_uncovered: Optional[tuple]
    max_error: float
    mean_error: float
    point_errors: tuple = ()
    centers: tuple = ()
    exact: bool = True

    @property
    def full(self) -> bool:
        return self.first_uncovered is None

    def as_dict(self, with_points: bool = False) -> dict:
        out = {
            "grid_step": self.grid_step,
            "total_points": self.total_points,
            "covered_points": self.covered_points,
            "first_uncovered": list(self.first_uncovered) if self.first_uncovered is not None else None,
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "exact": self.exact,
        }
        if with_points:
            out["centers"] = [list(c) for c in self.centers]
            out["point_errors"] = list(self.point_errors)
        return out

    def points_csv(self) -> str:
        d = len(self.centers[0]) if self.centers else 0
        lines = [",".join([f"c{j}" for j in range(d)] + ["error", "covered"])]
        for c, e in zip(self.centers, self.point_errors):
            lines.append(",".join([repr(x) for x in c] + [repr(e), str(int(e <= self.grid_step / 2))]))
        return "\n".join(lines) + "\n"


def grid_centers(d: int, epsilon: float, range_halfwidth: float = 1.0, center=None) -> np.ndarray:
    """Centers at spacing 2 eps whose eps-boxes cover [-h, h]^d."""
    k = snap_ceil(range_halfwidth / epsilon)
    axis = -range_halfwidth + epsilon * (2 * np.arange(k) + 1)
    pts = np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def cover_grid(m, epsilon: float, engine="auto", range_halfwidth: float = 1.0, budget: int = 100_000, center=None, cardinality: Optional[int] = None) -> CoverageReport:
    """Check that every grid center has a subset sum within ``epsilon``.

    Full coverage certifies that every point of [-h, h]^d is within
    2 epsilon of a subset sum.  ``engine`` is an engine name or a
    :class:`SubsetFamily` (only its members are tried).
    """
    values = _values(m)
    n, d = values.shape
    k = snap_ceil(range_halfwidth / epsilon)
    required = k**d
    if required > budget:
        raise CoverageBudgetError(required, budget)
    centers = grid_centers(d, epsilon, range_halfwidth, center)
    exact = True
    if isinstance(engine, SubsetFamily):
        sums = subset_sums(values, engine)
        if len(sums):
            errs = np.max(np.abs(sums[None, :, :] - centers[:, None, :]), axis=2).min(axis=1)
        else:
            errs = np.full(len(centers), math.inf)
    elif engine == "exhaustive":
        if n > EXHAUSTIVE_MAX_N:
            raise SearchGuardError(f"n={n} exceeds the exhaustive guard {EXHAUSTIVE_MAX_N}")
        results, _ = _exhaustive_multi(values, centers, epsilon, cardinality)
        errs = np.array([_exact_error(values, c, s) for c, (_, s) in zip(centers, results)])
    elif engine in ("mim", "auto"):
        searcher = MeetInMiddle(values, cardinality) if engine == "mim" else PrefixSearch(values, cardinality)
        exact = engine == "mim" or searcher.exact
        errs = np.array([searcher.query(c, epsilon).error for c in centers])
    else:
        raise ValueError(f"unknown engine {engine!r}")
    covered = errs <= epsilon
    miss = np.flatnonzero(~covered)
    first = tuple(float(x) for x in centers[miss[0]]) if len(miss) else None
    return CoverageReport(
        grid_step=2 * epsilon,
        total_points=len(centers),
        covered_points=int(covered.sum()),
        first_uncovered=first,
        max_error=float(errs.max()),
        mean_error=float(errs.mean()),
        point_errors=tuple(float(e) for e in errs),
        centers=tuple(tuple(float(x) for x in c) for c in centers),
        exact=exact,
    )
