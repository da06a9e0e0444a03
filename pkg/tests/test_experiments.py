import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sci_integrate
from scipy.stats import norm

from multirss import bounds as B
from multirss.core import ProblemParams, derive_seed
from multirss.experiments import (
    CLAIM_IDS,
    check_int_ub_convex,
    check_lb_exp_int,
    estimate_coverage_prob,
    estimate_joint_prob,
    estimate_moments,
    estimate_single_subset_prob,
    exact_cube_prob,
    exact_joint_prob,
    integrate,
    monotone_within_ci,
    sample_hit_indicators,
    summaries_to_csv,
    sweep,
    verify_appendix_claims,
    wilson_interval,
)
from multirss.family import SubsetFamily
from multirss.core import rng_from_seed


def cube_oracle(d, sigma2, eps, z):
    s = math.sqrt(sigma2)
    z = np.broadcast_to(np.asarray(z, dtype=float), (d,))
    return float(np.prod([norm.cdf((zj + eps) / s) - norm.cdf((zj - eps) / s) for zj in z]))


def joint_oracle(m, k, eps, z):
    sa, sb = math.sqrt(m - k), math.sqrt(k)
    g = lambda x: (norm.cdf((z - x + eps) / sa) - norm.cdf((z - x - eps) / sa)) ** 2 * norm.pdf(x, scale=sb)
    val, _ = sci_integrate.quad(g, -12 * sb, 12 * sb, epsabs=1e-14, limit=200)
    return val


def inside(summary, value):
    return summary.ci_low <= value <= summary.ci_high


# -- references ---------------------------------------------------------------------


def test_exact_cube_prob_example():
    v = exact_cube_prob(1, 2, 0.1, 0.0)
    assert v == pytest.approx(0.0564, abs=5e-5)
    assert v == pytest.approx(cube_oracle(1, 2, 0.1, 0.0), rel=1e-12)


@given(st.integers(1, 3), st.floats(0.5, 200), st.floats(0.01, 0.99), st.floats(-1, 1))
def test_exact_cube_prob_matches_oracle(d, sigma2, eps, z):
    assert exact_cube_prob(d, sigma2, eps, z) == pytest.approx(cube_oracle(d, sigma2, eps, z), rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("m,k,eps,z", [(121, 40, 0.5, 0.0), (5, 1, 0.3, 0.0), (20, 7, 0.1, 0.8), (50, 49, 0.4, -1.0)])
def test_exact_joint_prob_matches_oracle(m, k, eps, z):
    assert exact_joint_prob(1, m, k, eps, z) == pytest.approx(joint_oracle(m, k, eps, z), rel=1e-8)


def test_exact_joint_prob_limits():
    assert exact_joint_prob(2, 30, 0, 0.2, 0.1) == pytest.approx(exact_cube_prob(2, 30, 0.2, 0.1) ** 2)
    assert exact_joint_prob(2, 30, 30, 0.2, 0.1) == pytest.approx(exact_cube_prob(2, 30, 0.2, 0.1))


def test_integrate_known_integrals():
    v = integrate(lambda x: np.exp(-x * x / 2) / math.sqrt(2 * math.pi), [-10.0, 0.0], [10.0, 1.0])
    assert v[0] == pytest.approx(1.0, abs=1e-12)
    assert v[1] == pytest.approx(norm.cdf(1) - 0.5, abs=1e-12)
    assert integrate(lambda x: np.cos(x), [0.0], [math.pi / 2])[0] == pytest.approx(1.0, abs=1e-13)


# -- confidence machinery ---------------------------------------------------------------


@given(st.integers(1, 10**6), st.floats(0, 1))
def test_wilson_endpoints_solve_score_equation(n, frac):
    k = int(frac * n)
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
    for p in (lo, hi):
        if 0 < p < 1:
            assert (k / n - p) ** 2 == pytest.approx(16 * p * (1 - p) / n, rel=1e-6, abs=1e-15)


def test_wilson_nondegenerate_at_extremes():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and hi > 0
    lo, hi = wilson_interval(100, 100)
    assert hi == 1 and lo < 1


# -- single subset ------------------------------------------------------------------------


def test_single_subset_example():
    s = estimate_single_subset_prob(1, 2, 0.1, 0.0, 10**5, seed=1)
    exact = cube_oracle(1, 2, 0.1, 0.0)
    assert inside(s, exact)
    lo, hi = s.bounds_linear()
    assert lo == pytest.approx(math.exp(-1) * 0.2 / math.sqrt(4 * math.pi), rel=1e-12)
    assert hi == pytest.approx(0.2 / math.sqrt(4 * math.pi), rel=1e-12)
    assert s.verdict == "within"


def test_single_subset_at_corner():
    s = estimate_single_subset_prob(2, 10, 0.3, [1.0, 1.0], 10**5, seed=2)
    assert s.verdict == "within"
    assert inside(s, cube_oracle(2, 10, 0.3, 1.0))


def test_single_subset_epsilon_doubling():
    d = 2
    a = estimate_single_subset_prob(d, 50, 0.05, 0.0, 4 * 10**5, seed=3)
    b = estimate_single_subset_prob(d, 50, 0.1, 0.0, 4 * 10**5, seed=4)
    ratio = b.estimate / a.estimate
    rel = math.hypot(a.stderr / a.estimate, b.stderr / b.estimate)
    assert abs(ratio - 2**d) <= 4 * rel * ratio + 0.01 * 2**d


def test_single_subset_needs_trials():
    with pytest.raises(ValueError):
        estimate_single_subset_prob(1, 2, 0.1, 0.0, 999, seed=0)


def test_single_subset_oracle_chain_meta():
    exact = cube_oracle(1, 8, 0.2, 0.3)
    bracketed = 0
    for i in range(100):
        s = estimate_single_subset_prob(1, 8, 0.2, 0.3, 2000, seed=derive_seed(2024, i))
        bracketed += abs(s.estimate - exact) <= 4 * s.stderr
    assert bracketed >= 99


@pytest.mark.parametrize("experiment", ["single", "joint"])
def test_worker_count_does_not_change_results(experiment):
    if experiment == "single":
        run = lambda w: estimate_single_subset_prob(1, 5, 0.2, 0.0, 200_000, seed=7, workers=w)
    else:
        run = lambda w: estimate_joint_prob(1, 100, 0.1, 0.3, 2, 0.0, 200_000, seed=7, workers=w)
    assert run(1) == run(3)


# -- moments ----------------------------------------------------------------------------------


def test_moments_single_member_reduces_to_single_subset():
    p = ProblemParams(1, 40, 0.3, 0.1)
    fam = SubsetFamily(40, 4, ((0, 5, 9, 31),), 0)
    mean, var = estimate_moments(p, fam, 0.0, 20_000, seed=5)
    exact = cube_oracle(1, 4, 0.3, 0.0)
    assert inside(mean, exact)
    assert var.estimate == pytest.approx(mean.estimate * (1 - mean.estimate), rel=1e-3)


def test_moments_reject_invalid_family():
    p = ProblemParams(1, 10, 0.3, 0.2)
    fam = SubsetFamily(10, 2, ((0, 1), (0, 1)), 2)
    with pytest.raises(ValueError):
        estimate_moments(p, fam, 0.0, 1000, seed=0)


def test_disjoint_pair_uncorrelated():
    p = ProblemParams(1, 40, 0.3, 0.1)
    fam = SubsetFamily(40, 4, ((0, 1, 2, 3), (4, 5, 6, 7)), 0)
    Y = sample_hit_indicators(p, fam, 0.0, 100_000, seed=11).astype(float)
    a, b = Y[:, 0], Y[:, 1]
    prod = (a - a.mean()) * (b - b.mean())
    cov = prod.mean()
    assert abs(cov) <= 4 * prod.std() / math.sqrt(len(prod))


def test_overlapping_pair_joint_matches_quadrature():
    p = ProblemParams(1, 40, 0.3, 0.1)
    fam = SubsetFamily(40, 4, ((0, 1, 2, 3), (2, 3, 4, 5)), 2)
    Y = sample_hit_indicators(p, fam, 0.0, 100_000, seed=12)
    hits = int(np.count_nonzero(Y[:, 0] & Y[:, 1]))
    lo, hi = wilson_interval(hits, len(Y))
    assert lo <= joint_oracle(4, 2, 0.3, 0.0) <= hi


# -- joint probability ------------------------------------------------------------------------


def test_joint_independent_and_identical_limits():
    single = cube_oracle(1, 20, 0.3, 0.0)
    s0 = estimate_joint_prob(1, 200, 0.1, 0.3, 0, 0.0, 200_000, seed=1)
    assert inside(s0, single**2)
    sm = estimate_joint_prob(1, 200, 0.1, 0.3, 20, 0.0, 200_000, seed=2)
    assert inside(sm, single)
    assert s0.verdict == sm.verdict == "hypotheses_unmet"  # no bound at these sizes


def test_joint_infeasible_intersection():
    with pytest.raises(ValueError):
        estimate_joint_prob(1, 200, 0.1, 0.3, 21, 0.0, 1000, seed=0)


def test_joint_bound_gating_small_n():
    # at n=33 the cap and the tightness size coincide (k=1)
    s = estimate_joint_prob(1, 33, 1 / 6, 0.3, 1, 0.0, 20_000, seed=3)
    assert s.bound_upper is None and s.bound_lower is not None
    assert not s.extras["joint_upper_hypotheses"]["satisfied"]
    assert s.verdict == "within"


# -- coverage -----------------------------------------------------------------------------------


def test_coverage_origin_trivially_covered():
    p = ProblemParams(1, 10, 0.5, 0.1)
    s = estimate_coverage_prob(p, "auto", trials=30, seed=0, range_halfwidth=0.5)
    assert s.estimate == 1.0
    assert s.verdict == "hypotheses_unmet"


def test_coverage_dimension_no_easier():
    a = estimate_coverage_prob(ProblemParams(1, 12, 0.25, 0.1), "mim", trials=100, seed=1)
    b = estimate_coverage_prob(ProblemParams(2, 12, 0.25, 0.1), "mim", trials=100, seed=1)
    assert b.estimate <= a.estimate + 4 * math.hypot(a.stderr, b.stderr)


def test_coverage_with_family():
    rng = np.random.default_rng(0)
    fam = SubsetFamily(200, 10, tuple(tuple(sorted(rng.choice(200, 10, replace=False).tolist())) for _ in range(30)), 10)
    s = estimate_coverage_prob(ProblemParams(1, 200, 0.25, 0.05), fam, trials=20, seed=0)
    assert s.params["engine"] == "family"
    assert 0 <= s.estimate <= 1


# -- sweeps ------------------------------------------------------------------------------------


def test_sweep_singleton_equals_direct_call():
    base = ProblemParams(1, 8, 0.25, 0.25)
    [s] = sweep("n", [12], base, trials=40, seed=9)
    direct = estimate_coverage_prob(ProblemParams(1, 12, 0.25, 0.25), "auto", 40, derive_seed(9, 0))
    assert s == direct


def test_sweep_deterministic_sorted_and_monotone():
    base = ProblemParams(1, 8, 0.25, 0.25)
    a = sweep("n", [16, 4, 8], base, trials=60, seed=9)
    b = sweep("n", [16, 4, 8], base, trials=60, seed=9)
    assert a == b
    assert [s.params["n"] for s in a] == [4, 8, 16]
    assert monotone_within_ci(a)


def test_sweep_single_subset_axis():
    base = ProblemParams(1, 100, 0.2, 0.1)
    out = sweep("epsilon", [0.1, 0.2], base, trials=20_000, seed=3, experiment="single_subset")
    assert out[0].estimate < out[1].estimate


def test_sweep_rejects_bad_input():
    base = ProblemParams(1, 8, 0.25, 0.25)
    with pytest.raises(ValueError):
        sweep("n", [], base, 10, 0)
    with pytest.raises(ValueError):
        sweep("q", [1], base, 10, 0)


def test_monotone_within_ci_detects_drop():
    base = ProblemParams(1, 8, 0.25, 0.25)
    a = sweep("n", [4, 32], base, trials=100, seed=1)
    assert monotone_within_ci(a)
    assert not monotone_within_ci(list(reversed(a)))


def test_csv_export():
    s = estimate_single_subset_prob(1, 2, 0.1, 0.0, 1000, seed=0)
    rows = list(csv.DictReader(io.StringIO(summaries_to_csv([s, s]))))
    assert len(rows) == 2
    assert float(rows[0]["estimate"]) == s.estimate
    assert rows[0]["verdict"] == s.verdict


# -- auxiliary inequalities ----------------------------------------------------------------------


def test_claims_no_violations_small_run():
    reps = verify_appendix_claims(500, seed=1)
    assert [r.claim_id for r in reps] == list(CLAIM_IDS)
    for r in reps:
        assert r.draws == 500
        assert r.violations == 0, r


def test_claims_unknown_id_and_bad_draws():
    with pytest.raises(ValueError):
        verify_appendix_claims(10, 0, claims=["nope"])
    with pytest.raises(ValueError):
        verify_appendix_claims(0, 0)


def test_lb_exp_int_equality_limit():
    # as c -> 0 both sides tend to (2 eps)^2
    rng = rng_from_seed(0)
    r = check_lb_exp_int(200, rng)
    assert r.violations == 0
    eps = 0.37
    c = 1e-12
    lhs = sci_integrate.quad(lambda y: math.exp(-c * y * y), -eps, eps)[0] ** 2
    assert lhs == pytest.approx((2 * eps) ** 2, rel=1e-9)


def test_int_ub_convex_slack_at_zero():
    for c in (1e-3, 1 / 200):
        eps = 0.8
        lhs = sci_integrate.quad(lambda s: math.exp(-c * s * s), -eps, eps, epsabs=1e-14)[0] ** 2
        rhs = (2 * eps * math.exp(c * eps * eps) * math.exp(-c * eps * eps)) ** 2
        assert lhs < rhs
    assert check_int_ub_convex(300, rng_from_seed(1)).violations == 0


def test_claims_deterministic_and_worker_independent():
    a = verify_appendix_claims(200, seed=4, workers=1)
    b = verify_appendix_claims(200, seed=4, workers=2)
    assert a == b
