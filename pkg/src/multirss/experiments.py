"""Monte Carlo estimates of the bounded quantities, sweeps, and numeric checks
of the auxiliary inequalities.

Every estimate is reduced from fixed-size chunks, each drawn from its own
derived seed, so output depends only on (arguments, seed) and never on the
number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr

from . import bounds
from .core import ProblemParams, derive_seed, rng_from_seed
from .family import SubsetFamily, validate_family
from .sampler import sample_standard_normal
from .search import cover_grid

CI_MULTIPLIER = 4.0
CHUNK = 1 << 16
VERDICTS = ("within", "above_upper", "below_lower", "hypotheses_unmet")


@dataclass(frozen=True)
class TrialSummary:
    """One Monte Carlo estimate with its confidence interval and verdict.

    ``stderr`` is the plain standard error; ``ci_low``/``ci_high`` is the
    interval the verdict uses (a Wilson score interval at multiplier 4 for
    frequencies, estimate +- 4 stderr otherwise).  Bounds are on the scale
    named by ``bound_scale``; ``None`` means no bound on that side.
    """

    experiment: str
    params: dict
    trials: int
    estimate: float
    stderr: float
    ci_halfwidth: float
    ci_low: float
    ci_high: float
    bound_lower: Optional[float]
    bound_upper: Optional[float]
    bound_scale: str
    verdict: str
    extras: dict = field(default_factory=dict)

    def bounds_linear(self) -> tuple:
        conv = (lambda v: v) if self.bound_scale == "linear" else (lambda v: 2.0**v)
        lo = None if self.bound_lower is None else conv(self.bound_lower)
        hi = None if self.bound_upper is None else conv(self.bound_upper)
        return lo, hi

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": dict(self.params),
            "trials": self.trials,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "ci_halfwidth": self.ci_halfwidth,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "bound_lower": self.bound_lower,
            "bound_upper": self.bound_upper,
            "bound_scale": self.bound_scale,
            "verdict": self.verdict,
            "extras": dict(self.extras),
        }


CSV_COLUMNS = (
    "experiment", "trials", "estimate", "stderr", "ci_halfwidth", "ci_low", "ci_high",
    "bound_lower", "bound_upper", "bound_scale", "verdict", "params",
)


def summaries_to_csv(summaries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in summaries:
        row = s.as_dict()
        row["params"] = json.dumps(row["params"], sort_keys=True)
        w.writerow(["" if row[c] is None else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


# -- confidence intervals and verdicts ---------------------------------------------


def wilson_interval(hits: int, trials: int, z: float = CI_MULTIPLIER) -> tuple:
    """Wilson score interval; unlike p +- z*se it never collapses at p = 0 or 1."""
    p = hits / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == trials else min(1.0, center + half)
    return lo, hi


def _verdict(ci_low, ci_high, lower, upper, scale, hypotheses_ok=True) -> str:
    if not hypotheses_ok or (lower is None and upper is None):
        return "hypotheses_unmet"
    conv = (lambda v: v) if scale == "linear" else (lambda v: 2.0**v)
    if upper is not None and ci_low > conv(upper):
        return "above_upper"
    if lower is not None and ci_high < conv(lower):
        return "below_lower"
    return "within"


def _frequency_summary(experiment, params, hits, trials, lower, upper, scale="log2", hypotheses_ok=True, extras=None):
    p = hits / trials
    se = math.sqrt(p * (1 - p) / trials)
    lo, hi = wilson_interval(hits, trials)
    verdict = _verdict(lo, hi, lower, upper, scale, hypotheses_ok)
    return TrialSummary(experiment, params, trials, p, se, CI_MULTIPLIER * se, lo, hi, lower, upper, scale, verdict, extras or {})


def _moment_summary(experiment, params, trials, est, se, lower, upper, scale="log2", hypotheses_ok=True, extras=None):
    lo, hi = est - CI_MULTIPLIER * se, est + CI_MULTIPLIER * se
    verdict = _verdict(lo, hi, lower, upper, scale, hypotheses_ok)
    return TrialSummary(experiment, params, trials, est, se, CI_MULTIPLIER * se, lo, hi, lower, upper, scale, verdict, extras or {})


def _chunks(trials: int, chunk: int = CHUNK):
    return [(i, min(chunk, trials - s)) for i, s in enumerate(range(0, trials, chunk))]


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _in_box(points: np.ndarray, z: np.ndarray, epsilon: float) -> np.ndarray:
    return np.all(np.abs(points - z) <= epsilon, axis=-1)


def _target(z, d) -> np.ndarray:
    z = np.zeros(d) if z is None else np.asarray(z, dtype=float).ravel()
    if z.size == 1 and d > 1:
        z = np.full(d, float(z[0]))
    if z.shape != (d,):
        raise ValueError(f"target must have length {d}")
    return z


# -- exact references ---------------------------------------------------------------


def exact_cube_prob(d: int, sigma2: float, epsilon: float, z) -> float:
    """P(X in B_inf(z, eps)) for X ~ N(0, sigma2 I_d), as a product of normal CDF differences."""
    z = _target(z, d)
    s = math.sqrt(sigma2)
    return float(np.prod(ndtr((z + epsilon) / s) - ndtr((z - epsilon) / s)))


def exact_joint_prob(d: int, subset_size: int, intersection: int, epsilon: float, z) -> float:
    """P(A + B and C + B both in B_inf(z, eps)) by quadrature over B, per coordinate."""
    z = _target(z, d)
    m, k = subset_size, intersection
    sa = math.sqrt(m - k)
    if k == 0:
        return exact_cube_prob(d, m, epsilon, z) ** 2
    if m == k:
        return exact_cube_prob(d, m, epsilon, z)
    sb = math.sqrt(k)
    total = 1.0
    for zj in z:
        def f(x, zj=zj):
            g = ndtr((zj - x + epsilon) / sa) - ndtr((zj - x - epsilon) / sa)
            return np.exp(-0.5 * (x / sb) ** 2) / (sb * math.sqrt(2 * math.pi)) * g * g
        total *= float(integrate(f, np.array([-10 * sb]), np.array([10 * sb]))[0])
    return total


# -- single subset --------------------------------------------------------------------


def estimate_single_subset_prob(d: int, subset_size: int, epsilon: float, z, trials: int, seed: int, workers: int = 1) -> TrialSummary:
    """Frequency with which N(0, subset_size I_d) lands in B_inf(z, eps)."""
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    z = _target(z, d)
    s = math.sqrt(subset_size)

    def run(job):
        i, size = job
        x = s * rng_from_seed(derive_seed(seed, i)).standard_normal((size, d))
        return int(np.count_nonzero(_in_box(x, z, epsilon)))

    hits = sum(_pmap(run, _chunks(trials), workers))
    lower, upper = bounds.log_cube_prob_bounds(d, subset_size, epsilon)
    params = {"d": d, "subset_size": subset_size, "epsilon": epsilon, "z": z.tolist()}
    return _frequency_summary("single_subset", params, hits, trials, lower, upper)


# -- moments of Y -----------------------------------------------------------------------


def sample_hit_indicators(params: ProblemParams, family: SubsetFamily, z, trials: int, seed: int, workers: int = 1) -> np.ndarray:
    """trials x |C| 0/1 matrix of Y_S over fresh standard normal matrices."""
    if family.n != params.n:
        raise ValueError("family and params disagree on n")
    d, n = params.d, params.n
    z = _target(z, d)
    inc_t = family.incidence().T  # |C| x n
    chunk = max(1, min(CHUNK, (1 << 22) // (n * d)))

    def run(job):
        i, size = job
        X = rng_from_seed(derive_seed(seed, i)).standard_normal((size, n, d))
        sums = inc_t @ X  # size x |C| x d
        return _in_box(sums, z, params.epsilon)

    return np.concatenate(_pmap(run, _chunks(trials, chunk), workers), axis=0)


def estimate_moments(params: ProblemParams, family: SubsetFamily, z, trials: int, seed: int, workers: int = 1) -> tuple:
    """(mean, variance) summaries of Y = number of family members hitting B_inf(z, eps)."""
    if trials < 1000:
        raise ValueError("trials must be at least 1000")
    report = validate_family(family)
    if not report.ok:
        raise ValueError(f"family fails validation: {report.problems or report.offending_pair}")
    Y = sample_hit_indicators(params, family, z, trials, seed, workers).sum(axis=1).astype(float)
    L = family.log2_size
    mean = float(Y.mean())
    se_mean = float(Y.std(ddof=1) / math.sqrt(trials))
    lo, up = bounds.log_expectation_bounds(params, L)
    base = dict(params.as_dict(), family_size=len(family), z=_target(z, params.d).tolist())
    mean_s = _moment_summary("moments_mean", base, trials, mean, se_mean, lo, up)

    var = float(Y.var(ddof=1))
    m4 = float(np.mean((Y - mean) ** 4))
    se_var = math.sqrt(max(m4 - var * var, 0.0) / trials)
    vu = bounds.log_variance_upper(params, L)
    hyp = bounds.variance_hypotheses(params)
    extras = {"variance_hypotheses": hyp.as_dict()}
    var_s = _moment_summary("moments_variance", base, trials, var, se_var, None, vu, hypotheses_ok=hyp.satisfied, extras=extras)
    return mean_s, var_s


# -- joint probability -----------------------------------------------------------------


def estimate_joint_prob(d: int, n: int, alpha: float, epsilon: float, intersection: int, z, trials: int, seed: int, workers: int = 1) -> TrialSummary:
    """Frequency that two subsets sharing ``intersection`` elements both hit.

    Samples the disjoint parts A, C ~ N(0, (m - k) I_d) and the shared part
    B ~ N(0, k I_d) directly instead of whole matrices.
    """
    params = ProblemParams(d, n, epsilon, alpha)
    m, k = params.subset_size, intersection
    if not 0 <= k <= m or 2 * m - k > n:
        raise ValueError(f"no two {m}-subsets of range({n}) share exactly {k} elements")
    z = _target(z, d)
    sa, sb = math.sqrt(m - k), math.sqrt(k)

    def run(job):
        i, size = job
        g = rng_from_seed(derive_seed(seed, i)).standard_normal((3, size, d))
        a, c, b = sa * g[0], sa * g[1], sb * g[2]
        return int(np.count_nonzero(_in_box(a + b, z, epsilon) & _in_box(c + b, z, epsilon)))

    hits = sum(_pmap(run, _chunks(trials), workers))
    # a bound is compared only at its own intersection size and only when its
    # hypotheses hold; small n can make the two sizes coincide
    lower = upper = None
    extras = {}
    if k == params.intersection_cap:
        flag = bounds.joint_upper_hypotheses(params)
        extras["joint_upper_hypotheses"] = flag.as_dict()
        if flag.satisfied:
            upper = bounds.log_joint_upper(params)
    if k == params.tightness_intersection:
        flag = bounds.joint_lower_hypotheses(params)
        extras["joint_lower_hypotheses"] = flag.as_dict()
        if flag.satisfied:
            lower = bounds.log_joint_lower(params)
    p = dict(params.as_dict(), intersection=k, z=z.tolist())
    return _frequency_summary("joint", p, hits, trials, lower, upper, extras=extras)


# -- coverage ------------------------------------------------------------------------------


def estimate_coverage_prob(params: ProblemParams, family_or_engine="auto", trials: int = 100, seed: int = 0, range_halfwidth: float = 1.0, budget: int = 100_000, workers: int = 1) -> TrialSummary:
    """Frequency with which a fresh matrix covers every grid center of [-h, h]^d.

    Compared against 1 - failure probability only where the second-moment
    hypotheses hold; otherwise the verdict is ``hypotheses_unmet``.
    """
    d, n, eps = params.d, params.n, params.epsilon

    def run(t):
        m = sample_standard_normal(n, d, derive_seed(seed, t))
        rep = cover_grid(m, eps, family_or_engine, range_halfwidth, budget)
        return rep.full, rep.exact

    out = _pmap(run, list(range(trials)), workers)
    hits = sum(1 for full, _ in out if full)
    exact = all(e for _, e in out)
    L = params.alpha**2 * n / 6
    if isinstance(family_or_engine, SubsetFamily):
        L = family_or_engine.log2_size
    cheb = bounds.chebyshev_check(params, L)
    lower = None
    if cheb.guaranteed:
        lf = bounds.failure_prob(n, d, params.alpha, eps)
        lower = -math.expm1(lf * math.log(2)) if lf < 0 else 0.0
    engine = family_or_engine if isinstance(family_or_engine, str) else "family"
    p = dict(params.as_dict(), engine=engine, range_halfwidth=range_halfwidth)
    extras = {"exact_search": exact}
    return _frequency_summary("coverage", p, hits, trials, lower, None, scale="linear", hypotheses_ok=cheb.guaranteed, extras=extras)


def monotone_within_ci(summaries, multiplier: float = CI_MULTIPLIER) -> bool:
    """True when no estimate drops below its predecessor by more than the joint CI."""
    for a, b in zip(summaries, summaries[1:]):
        if b.estimate + multiplier * math.hypot(a.stderr, b.stderr) < a.estimate:
            return False
    return True


# -- sweeps --------------------------------------------------------------------------------

SWEEP_AXES = ("n", "epsilon", "alpha", "d")


def sweep(axis: str, grid, base: ProblemParams, trials: int, seed: int, experiment: str = "coverage", engine="auto", workers: int = 1) -> list:
    """Run one experiment per grid value (sorted), point i seeded by derive_seed(seed, i)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = sorted(grid)
    if not values:
        raise ValueError("sweep grid is empty")
    out = []
    for i, v in enumerate(values):
        params = replace(base, **{axis: v})
        s = derive_seed(seed, i)
        if experiment == "coverage":
            out.append(estimate_coverage_prob(params, engine, trials, s, workers=workers))
        elif experiment == "single_subset":
            out.append(estimate_single_subset_prob(params.d, params.subset_size, params.epsilon, None, trials, s, workers))
        else:
            raise ValueError(f"unknown experiment {experiment!r}")
    return out


# -- quadrature ------------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _gl(f, a, b, panels):
    # composite Gauss-Legendre on rows of [a, b]
    width = (b - a) / panels
    left = a[:, None] + width[:, None] * np.arange(panels)[None, :]
    x = left[:, :, None] + (width[:, None, None] / 2) * (_GL_X + 1)
    vals = f(x.reshape(len(a), -1))
    vals = vals.reshape(len(a), panels, len(_GL_X))
    return (vals * _GL_W).sum(axis=(1, 2)) * width / 2


def integrate(f, a, b, panels: int = 16, abs_tol: float = 1e-12, rel_tol: float = 1e-14, max_panels: int = 1 << 12, rows=None):
    """Integrate ``f`` over each row's interval [a_i, b_i].

    ``f`` maps an (r, k) array of abscissae to values; ``rows`` (optional)
    lets ``f`` see which rows it is evaluating.  Panels double until
    successive estimates agree to ``abs_tol + rel_tol * |I|``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    idx = np.arange(len(a))
    out = np.empty(len(a))

    def call(sel, p):
        g = (lambda x: f(x, idx[sel])) if rows else f
        return _gl(g, a[sel], b[sel], p)

    sel = idx
    p = panels
    prev = call(sel, p)
    while True:
        p2 = 2 * p
        cur = call(sel, p2)
        done = np.abs(cur - prev) <= abs_tol + rel_tol * np.abs(cur)
        out[sel[done]] = cur[done]
        sel = sel[~done]
        if len(sel) == 0:
            return out
        if p2 >= max_panels:
            out[sel] = cur[~done]
            return out
        prev = cur[~done]
        p = p2


# -- auxiliary inequality checks -------------------------------------------------------------

CLAIM_IDS = ("ub_cov_term", "ub_var_term", "int_ub_max", "int_ub_convex", "lb_exp_int")
CLAIM_RTOL = 1e-9


@dataclass(frozen=True)
class ClaimCheckReport:
    claim_id: str
    draws: int
    violations: int
    worst_margin: float  # min over draws of (rhs - lhs) / |rhs|; negative means violated
    parameter_ranges: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "draws": self.draws,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "parameter_ranges": dict(self.parameter_ranges),
        }


def _report(claim, small, big, ranges) -> ClaimCheckReport:
    """Count draws with small > big beyond the relative tolerance."""
    margin = (big - small) / np.maximum(np.abs(big), 1e-300)
    viol = int(np.count_nonzero(margin < -CLAIM_RTOL))
    return ClaimCheckReport(claim, len(small), viol, float(margin.min()), ranges)


def _ranges(**cols) -> dict:
    return {k: [float(np.min(v)), float(np.max(v))] for k, v in cols.items()}


def check_cov_term(draws: int, rng) -> ClaimCheckReport:
    """exp(4d/(alpha n)) (1 - 4 alpha^2)^(-d/2) <= 9/8 for n >= 68 d/alpha, alpha <= 1/(6 sqrt d)."""
    d = rng.integers(1, 65, draws).astype(float)
    alpha = rng.uniform(0, 1, draws) * (1 / (6 * np.sqrt(d)))
    alpha = np.maximum(alpha, 1e-6)
    n = 68 * d / alpha * (1 + rng.exponential(1.0, draws) * (rng.random(draws) < 0.8))
    lhs = np.exp(4 * d / (alpha * n)) * (1 - 4 * alpha**2) ** (-d / 2)
    return _report("ub_cov_term", lhs, np.full(draws, 9 / 8), _ranges(d=d, alpha=alpha, n=n))


def check_var_term(draws: int, rng) -> ClaimCheckReport:
    """4 e^{4d/(alpha n)} 2^{-alpha^2 n/6} (pi alpha n/(2 eps^2))^{d/2} <= eps under the sample-size condition."""
    d = rng.integers(1, 65, draws).astype(float)
    alpha = np.maximum(rng.uniform(0, 1, draws) * np.minimum(1 / 6, 1 / (6 * np.sqrt(d))), 1e-4)
    eps = rng.uniform(1e-4, 1, draws)
    L = np.log2(1 / eps) + np.log2(d) + np.log2(1 / alpha)
    n = 144 * d / alpha**2 * L * (1 + rng.exponential(1.0, draws) * (rng.random(draws) < 0.8))
    # compare in log2 to avoid underflow
    lhs = 2 + 4 * d / (alpha * n) * math.log2(math.e) - alpha**2 * n / 6 + (d / 2) * np.log2(np.pi * alpha * n / (2 * eps**2))
    rhs = np.log2(eps)
    small, big = 2.0 ** (lhs - rhs), np.ones(draws)
    return _report("ub_var_term", small, big, _ranges(d=d, alpha=alpha, epsilon=eps, n=n))


def check_int_ub_max(draws: int, rng, quadrature_points: int = 16, zgrid: int = 8) -> ClaimCheckReport:
    """H(z) = int phi_B(x) P(A in (z-x-eps, z-x+eps))^2 dx is largest at z = 0."""
    sa = rng.uniform(0.3, 20, draws)
    sb = rng.uniform(0.3, 20, draws)
    eps = rng.uniform(1e-3, 1, draws)
    scale = np.sqrt(sa**2 + sb**2)
    zs = np.concatenate([np.zeros((draws, 1)), scale[:, None] * rng.uniform(0, 3, (draws, zgrid))], axis=1)
    R = zs.shape[1]
    SA, SB, E, Z = np.repeat(sa, R), np.repeat(sb, R), np.repeat(eps, R), zs.ravel()

    def f(x, rows):
        g = ndtr((Z[rows, None] - x + E[rows, None]) / SA[rows, None]) - ndtr((Z[rows, None] - x - E[rows, None]) / SA[rows, None])
        return np.exp(-0.5 * (x / SB[rows, None]) ** 2) / (SB[rows, None] * math.sqrt(2 * math.pi)) * g * g

    H = integrate(f, -10 * SB, 10 * SB, panels=quadrature_points, rows=True).reshape(draws, R)
    small = H[:, 1:].max(axis=1)
    return _report("int_ub_max", small, H[:, 0], _ranges(sigma_a=sa, sigma_b=sb, epsilon=eps))


def check_int_ub_convex(draws: int, rng, quadrature_points: int = 16) -> ClaimCheckReport:
    """(int_{-eps}^{eps} e^{-c(x+s)^2} ds)^2 <= (2 eps e^{c eps^2} (e^{-c(x+eps)^2} + e^{-c(x-eps)^2})/2)^2."""
    c = rng.uniform(0, 1, draws) / 162
    c = np.maximum(c, 1e-12)
    eps = rng.uniform(1e-4, 1, draws)
    x = rng.uniform(-1, 1, draws) * 6 / np.sqrt(c) * rng.random(draws)
    x[: max(1, draws // 20)] = 0.0

    def f(s, rows):
        return np.exp(-c[rows, None] * (x[rows, None] + s) ** 2)

    lhs = integrate(f, -eps, eps, panels=quadrature_points, rows=True) ** 2
    rhs = (2 * eps * np.exp(c * eps**2) * (np.exp(-c * (x + eps) ** 2) + np.exp(-c * (x - eps) ** 2)) / 2) ** 2
    return _report("int_ub_convex", lhs, rhs, _ranges(c=c, epsilon=eps, x=x))


def check_lb_exp_int(draws: int, rng, quadrature_points: int = 16) -> ClaimCheckReport:
    """(int_{x-eps}^{x+eps} e^{-c y^2} dy)^2 >= (2 eps)^2 e^{-c(x-eps)^2} e^{-c(x+eps)^2}."""
    c = np.maximum(rng.uniform(0, 1, draws) / 10, 1e-12)
    eps = rng.uniform(1e-4, 1, draws)
    x = rng.uniform(-1, 1, draws) * 6 / np.sqrt(c) * rng.random(draws)

    def f(y, rows):
        return np.exp(-c[rows, None] * y**2)

    lhs = integrate(f, x - eps, x + eps, panels=quadrature_points, rows=True) ** 2
    rhs = (2 * eps) ** 2 * np.exp(-c * (x - eps) ** 2) * np.exp(-c * (x + eps) ** 2)
    return _report("lb_exp_int", rhs, lhs, _ranges(c=c, epsilon=eps, x=x))


_CHECKS = {
    "ub_cov_term": check_cov_term,
    "ub_var_term": check_var_term,
    "int_ub_max": check_int_ub_max,
    "int_ub_convex": check_int_ub_convex,
    "lb_exp_int": check_lb_exp_int,
}


def verify_appendix_claims(draws: int, seed: int, quadrature_points: int = 16, claims=CLAIM_IDS, workers: int = 1) -> list:
    """Check each inequality on ``draws`` random parameter sets satisfying its hypotheses."""
    if draws < 1:
        raise ValueError("draws must be at least 1")
    claims = list(claims)
    for c in claims:
        if c not in _CHECKS:
            raise ValueError(f"unknown claim {c!r}")

    def run(cid):
        rng = rng_from_seed(derive_seed(seed, CLAIM_IDS.index(cid)))
        fn = _CHECKS[cid]
        if cid in ("ub_cov_term", "ub_var_term"):
            return fn(draws, rng)
        return fn(draws, rng, quadrature_points)

    return _pmap(run, claims, workers)
