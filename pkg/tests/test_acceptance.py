"""Acceptance checks, one test per criterion.

Each test is named ``test_criterion_NN_<label>``; the conftest hook prints a
PASS/FAIL line per criterion at the end of the run.
"""

import time

import numpy as np
import pytest

from multirss import bounds
from multirss.core import ProblemParams, derive_seed
from multirss.experiments import (
    estimate_joint_prob,
    estimate_moments,
    estimate_single_subset_prob,
    monotone_within_ci,
    sweep,
    verify_appendix_claims,
    wilson_interval,
)
from multirss.family import build_family, union_bound_restart_prob, validate_family
from multirss.nne import Genotype, find_genotype, genotype_tensor, random_target, sample_genes
from multirss.sampler import quantize, sample_standard_normal
from multirss.search import enumerate_exhaustive, exact_sum, meet_in_middle, search
from multirss.walks import initial_frontier, run_walk, step, walk_steps

pytestmark = pytest.mark.slow
SEED = 20240601


def test_criterion_01_single_subset_sandwich():
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    for i in range(20):
        d = int(rng.integers(1, 4))
        size = int(rng.integers(1, 201))
        eps = float(rng.uniform(0.05, 0.5))
        z = rng.uniform(-1, 1, d)
        s = estimate_single_subset_prob(d, size, eps, z, 10**5, derive_seed(SEED, i))
        lo, hi = s.bounds_linear()
        # multiplier-4 Wilson interval: stays informative when no trial hits
        assert s.ci_high >= lo, (d, size, eps, z, s)
        assert s.ci_low <= hi, (d, size, eps, z, s)
        assert s.verdict == "within"
    assert time.perf_counter() - t0 <= 60


def test_criterion_02_moment_sandwich():
    t0 = time.perf_counter()
    p = ProblemParams(1, 729, 0.5, 1 / 6)
    fam = build_family(729, 1 / 6, 64, seed=SEED)
    assert validate_family(fam).ok
    mean, var = estimate_moments(p, fam, 0.0, 10**5, seed=derive_seed(SEED, 2))
    lo, hi = mean.bounds_linear()
    assert mean.verdict == "within"
    assert lo <= mean.ci_high and mean.ci_low <= hi
    _, vhi = var.bounds_linear()
    assert var.estimate - 4 * var.stderr <= vhi
    assert time.perf_counter() - t0 <= 300


def test_criterion_03_joint_bracketing():
    t0 = time.perf_counter()
    up = ProblemParams(1, 729, 0.5, 1 / 6)
    su = estimate_joint_prob(1, 729, 1 / 6, 0.5, up.intersection_cap, 0.0, 10**6, seed=derive_seed(SEED, 3))
    assert up.intersection_cap == 40
    assert su.bound_upper == pytest.approx(bounds.log_joint_upper(up))
    assert su.ci_low <= 2**su.bound_upper
    lowp = ProblemParams(1, 33, 0.3, 1 / 6)
    assert lowp.tightness_intersection == 1
    sl = estimate_joint_prob(1, 33, 1 / 6, 0.3, 1, 0.0, 10**6, seed=derive_seed(SEED, 4))
    assert sl.bound_lower == pytest.approx(bounds.log_joint_lower(lowp))
    assert sl.ci_high >= 2**sl.bound_lower
    assert su.verdict == sl.verdict == "within"
    assert time.perf_counter() - t0 <= 600


def test_criterion_04_family_construction():
    attempts = restarts = 0
    for i in range(100):
        fam = build_family(200, 0.1, 10, seed=derive_seed(SEED, 1000 + i))
        assert validate_family(fam).ok
        attempts += fam.build_stats["attempts"]
        restarts += fam.build_stats["attempts"] - 1
    _, hi = wilson_interval(restarts, attempts)
    rate = restarts / attempts
    bound = min(1.0, union_bound_restart_prob(200, 0.1, 10))
    assert rate <= bound + (hi - rate)


def test_criterion_05_engine_equivalence():
    rng = np.random.default_rng(SEED + 5)
    for i in range(500):
        n = int(rng.integers(1, 21))
        d = int(rng.integers(1, 4))
        eps = float(rng.uniform(0.001, 0.5))
        m = sample_standard_normal(n, d, derive_seed(SEED + 5, i)).values
        z = rng.uniform(-1, 1, d)
        a = enumerate_exhaustive(m, z, eps)
        b = meet_in_middle(m, z, eps)
        assert a.found == b.found, (n, d, eps)
        if not a.found:
            assert abs(a.error - b.error) <= 1e-12


def test_criterion_06_coverage_monotonicity():
    base = ProblemParams(1, 4, 0.25, 0.25)
    out = sweep("n", [4, 8, 16, 32, 64], base, trials=200, seed=SEED)
    assert [s.params["n"] for s in out] == [4, 8, 16, 32, 64]
    assert monotone_within_ci(out)
    assert out[-1].estimate >= 0.95


def test_criterion_07_auxiliary_inequalities():
    t0 = time.perf_counter()
    reps = verify_appendix_claims(10**4, seed=SEED)
    assert len(reps) == 5
    for r in reps:
        assert r.draws == 10**4
        assert r.violations == 0, r
    assert time.perf_counter() - t0 <= 300


def test_criterion_08_nne_reduction_faithfulness():
    eps = 0.3
    for i in range(100):
        bank = sample_genes(20, 1, 2, derive_seed(SEED + 8, 2 * i))
        target = random_target(1, 2, derive_seed(SEED + 8, 2 * i + 1))
        res = find_genotype(bank, target, eps)
        flat = search(bank.flat(), target.flat(), 2 * eps, engine="mim")
        assert res.found == flat.found
        assert res.genotype == Genotype.from_subset(20, flat.subset)
        assert res.max_entry_error == flat.error
        if res.found:
            err = float(np.max(np.abs(target.flat() - genotype_tensor(bank, res.genotype).flat())))
            assert err < 2 * eps


def test_criterion_09_discrete_corollary():
    rng = np.random.default_rng(SEED + 9)
    checked = i = 0
    while checked < 50:
        n = int(rng.integers(4, 17))
        d = int(rng.integers(1, 3))
        eps = float(rng.uniform(0.05, 0.45))
        m = sample_standard_normal(n, d, derive_seed(SEED + 9, i))
        i += 1
        z = rng.uniform(-1, 1, d)
        res = search(m, z, 2 * eps, engine="exhaustive")
        if not res.error <= 2 * eps:
            continue
        q = quantize(m, 2 * eps)
        err = float(np.max(np.abs(z - exact_sum(q.values, res.subset))))
        assert err <= bounds.discrete_error_bound(n, eps)
        checked += 1


def _brute_sums(xs):
    # independent of the frontier recursion: one sum per bitmask, rows added in index order
    t, d = xs.shape
    masks = np.arange(1 << t)
    sums = np.zeros((1 << t, d))
    for i in range(t):
        sel = ((masks >> i) & 1).astype(bool)
        sums[sel] = sums[sel] + xs[i]
    return {tuple(r) for r in sums.tolist()}


def test_criterion_10_walk_equivalence():
    for seed in range(4):
        d = 1 + seed % 3
        xs = walk_steps(d, 16, derive_seed(SEED + 10, seed))
        f = initial_frontier(d)
        assert f.as_set() == _brute_sums(xs[:0])
        for t in range(1, 17):
            f = step(f, xs[t - 1])
            if t in (1, 2, 5, 9, 12, 16) or seed == 0:
                assert f.as_set() == _brute_sums(xs[:t])
    targets = np.array([[0.5, -0.25], [1.5, 1.0], [-0.8, 0.3]])
    for seed in range(5):
        exact = run_walk(2, 16, seed, 0.0, targets)
        for cell in (0.01, 0.1):
            coarse = run_walk(2, 16, seed, cell, targets)
            for t, (e, c) in enumerate(zip(exact.distances, coarse.distances)):
                assert all(cv <= ev + t * cell for ev, cv in zip(e, c))
