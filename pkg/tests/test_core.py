import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multirss.core import (
    InvalidParams,
    ProblemParams,
    Target,
    derive_seed,
    linf_distance,
    rng_from_seed,
    snap_ceil,
    snap_floor,
)


def test_derive_seed_is_deterministic():
    assert derive_seed(12345, 0) == derive_seed(12345, 0)


def test_derive_seed_separates_streams():
    assert derive_seed(12345, 0) != derive_seed(12345, 1)


def test_derive_seed_distinct_over_range():
    seeds = {derive_seed(987654321, i) for i in range(10_000)}
    assert len(seeds) == 10_000


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**20), st.integers(0, 2**20))
def test_derive_seed_injective_in_stream(master, i, j):
    if i != j:
        assert derive_seed(master, i) != derive_seed(master, j)
    assert 0 <= derive_seed(master, i) < 2**64


def test_derive_seed_rejects_negative_stream():
    with pytest.raises(ValueError):
        derive_seed(1, -1)


def test_rng_reproducible():
    a = rng_from_seed(7).standard_normal(5)
    b = rng_from_seed(7).standard_normal(5)
    assert np.array_equal(a, b)


def test_linf_identity_and_coordinate_max():
    assert linf_distance([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert linf_distance([0, 0], [0.3, -0.5]) == 0.5


def test_linf_dimension_mismatch():
    with pytest.raises(ValueError):
        linf_distance([0, 0], [0, 0, 0])


@given(st.integers(1, 6).flatmap(lambda d: st.tuples(
    st.lists(st.floats(-1e3, 1e3), min_size=d, max_size=d),
    st.lists(st.floats(-1e3, 1e3), min_size=d, max_size=d))))
def test_linf_between_norms(pair):
    a, b = map(np.array, pair)
    li = linf_distance(a, b)
    l2 = float(np.linalg.norm(a - b))
    assert li <= l2 * (1 + 1e-12) + 1e-12
    assert l2 <= math.sqrt(len(a)) * li * (1 + 1e-12) + 1e-12


def test_params_derived_quantities():
    p = ProblemParams(1, 729, 0.5, 1 / 6)
    assert p.subset_size == 121
    assert p.intersection_cap == 40
    assert p.tightness_intersection == 11


def test_params_floor_snaps_roundoff():
    # 2 * (1/6)^2 * 36 evaluates to 1.9999999999999998
    p = ProblemParams(1, 36, 0.5, 1 / 6)
    assert p.intersection_cap == 2
    assert p.subset_size == 6


@given(st.integers(1, 10**6), st.floats(1e-3, 0.499))
def test_subset_size_floor_property(n, alpha):
    if snap_floor(alpha * n) < 1:
        return
    p = ProblemParams(1, n, 0.5, alpha)
    assert p.subset_size <= alpha * n * (1 + 1e-9) + 1e-9
    assert alpha * n < p.subset_size + 1


@pytest.mark.parametrize(
    "args, field, reason",
    [
        ((0, 10, 0.5, 0.2), "d", "not_positive_integer"),
        ((1.5, 10, 0.5, 0.2), "d", "not_positive_integer"),
        ((1, 0, 0.5, 0.2), "n", "not_positive_integer"),
        ((1, 10, 0.0, 0.2), "epsilon", "out_of_range"),
        ((1, 10, 1.0, 0.2), "epsilon", "out_of_range"),
        ((1, 10, 0.5, 0.5), "alpha", "out_of_range"),
        ((1, 10, 0.5, 0.0), "alpha", "out_of_range"),
        ((1, 3, 0.5, 0.2), "alpha", "empty_subsets"),
    ],
)
def test_params_rejections(args, field, reason):
    with pytest.raises(InvalidParams) as exc:
        ProblemParams(*args)
    assert exc.value.field == field
    assert exc.value.reason == reason
    assert exc.value.as_dict()["field"] == field


@given(st.integers(-3, 40), st.integers(-3, 400), st.floats(-0.5, 1.5), st.floats(-0.5, 1.0))
def test_validation_rejects_exactly_invalid(d, n, eps, alpha):
    valid = d >= 1 and n >= 1 and 0 < eps < 1 and 0 < alpha < 0.5 and snap_floor(alpha * n) >= 1
    try:
        ProblemParams(d, n, eps, alpha)
        ok = True
    except InvalidParams:
        ok = False
    assert ok == valid


def test_snap_helpers():
    assert snap_floor(2.9999999999999996) == 3
    assert snap_floor(2.5) == 2
    assert snap_ceil(1.0000000000000002) == 1
    assert snap_ceil(1.2) == 2


def test_target_ranges():
    assert Target((0.5, -1.0)).d == 2
    with pytest.raises(InvalidParams):
        Target((1.5,))
    Target((1.5,), halfwidth=2.0)
    Target((3.0,), halfwidth=1.0, center=(2.5,))
    with pytest.raises(InvalidParams):
        Target((3.0,), halfwidth=1.0, center=(0.0,))
