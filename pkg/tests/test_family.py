import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multirss.core import derive_seed, rng_from_seed
from multirss.family import (
    FamilyBuildError,
    SubsetFamily,
    build_family,
    guaranteed_log2_size,
    pair_with_intersection,
    uniform_subset,
    union_bound_restart_prob,
    validate_family,
)


def test_small_family_example():
    f = build_family(600, 0.1, 2, seed=1)
    assert f.member_size == 60
    assert f.certified_max_intersection == 12
    assert len(f) == 2
    assert guaranteed_log2_size(600, 0.1) == pytest.approx(1.0)
    assert validate_family(f).ok


@given(st.integers(20, 300), st.sampled_from([0.05, 0.1, 1 / 6, 0.2]), st.integers(1, 8), st.integers(0, 2**32))
def test_built_families_validate(n, alpha, size, seed):
    m = math.floor(alpha * n + 1e-9)
    if m < 1 or size > math.comb(n, m):
        return
    try:
        f = build_family(n, alpha, size, seed, max_attempts=20)
    except FamilyBuildError as e:
        assert not validate_family(e.best).ok or e.best.certified_max_intersection > math.floor(2 * alpha**2 * n + 1e-9)
        return
    rep = validate_family(f)
    assert rep.ok
    assert len(f) == size
    assert len(set(f.subsets)) == size
    assert rep.max_intersection_found <= f.certified_max_intersection


def test_duplicate_is_flagged():
    f = build_family(200, 0.1, 5, seed=3)
    bad = SubsetFamily(f.n, f.member_size, f.subsets + (f.subsets[0],), f.certified_max_intersection)
    rep = validate_family(bad)
    assert not rep.ok
    assert rep.offending_pair == (0, 5)
    assert rep.max_intersection_found == f.member_size


def test_duplicate_flagged_even_when_cap_allows():
    f = SubsetFamily(4, 2, ((0, 1), (0, 1)), 2)
    assert not validate_family(f).ok


def test_hand_built_family():
    f = SubsetFamily(4, 2, ((0, 1), (1, 2), (2, 3)), 1)
    rep = validate_family(f)
    assert rep.ok
    assert rep.max_intersection_found == 1
    assert rep.offending_pair is None


def test_validate_reports_structure_problems():
    f = SubsetFamily(4, 2, ((1, 0), (2, 3, 3), (3, 9)), 2)
    rep = validate_family(f)
    assert not rep.ok
    assert len(rep.problems) >= 3


def test_cap_unachievable_carries_best():
    # 2 alpha^2 n = 0.5 -> cap 0 with tiny n: disjointness of many subsets is impossible
    with pytest.raises(FamilyBuildError) as exc:
        build_family(10, 0.2, 8, seed=0, max_attempts=5)
    e = exc.value
    assert e.reason == "cap_unachievable"
    assert e.stats["attempts"] == 5
    assert len(e.best) == 8


def test_build_family_rejects_bad_args():
    with pytest.raises(ValueError):
        build_family(10, 0.6, 2, 0)
    with pytest.raises(ValueError):
        build_family(10, 0.2, 0, 0)
    with pytest.raises(ValueError):
        build_family(4, 0.1, 2, 0)


def test_build_is_deterministic():
    assert build_family(200, 0.1, 10, 5) == build_family(200, 0.1, 10, 5)


def test_uniform_subset_marginals():
    rng = rng_from_seed(1)
    counts = np.zeros(10)
    draws = 20_000
    for _ in range(draws):
        counts[list(uniform_subset(rng, 10, 3))] += 1
    p = 0.3
    assert np.all(np.abs(counts / draws - p) < 4 * math.sqrt(p * (1 - p) / draws))


def test_pair_with_intersection_extremes():
    s, t = pair_with_intersection(50, 0.2, 10, seed=1)
    assert s == t
    s, t = pair_with_intersection(50, 0.2, 0, seed=1)
    assert not set(s) & set(t)


def test_pair_with_intersection_exact_k():
    for i in range(1000):
        s, t = pair_with_intersection(60, 0.2, 5, seed=derive_seed(4, i))
        assert len(s) == len(t) == 12
        assert len(set(s) & set(t)) == 5


def test_pair_with_intersection_infeasible():
    with pytest.raises(ValueError):
        pair_with_intersection(20, 0.2, 5, seed=0)
    with pytest.raises(ValueError):
        pair_with_intersection(20, 0.2, -1, seed=0)


def test_union_bound_value():
    assert union_bound_restart_prob(200, 0.1, 10) == pytest.approx(45 * math.exp(-2 / 3))


def test_json_roundtrip():
    f = build_family(100, 0.1, 6, seed=2)
    assert SubsetFamily.from_json(f.to_json()) == f


def test_incidence_matrix():
    f = SubsetFamily(4, 2, ((0, 1), (2, 3)), 0)
    inc = f.incidence()
    assert inc.shape == (4, 2)
    assert inc[:, 0].tolist() == [1, 1, 0, 0]
