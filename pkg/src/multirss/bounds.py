"""Closed-form bounds for the multidimensional random subset sum, in log2 space.

Throughout, the subset size ``alpha*n`` is evaluated as ``params.subset_size``
(the floored integer actually used by the constructions), and ``log`` means
the binary logarithm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ProblemParams, snap_ceil

LOG2E = 1.0 / math.log(2.0)

#: sample-size constant pinned down by the amplification argument, 144 / log2(3/2)
DEFAULT_C = 144.0 / math.log2(1.5)
#: constants of the extended-range theorem: C = 17 * 144 and delta = 288 / log2(3/2)
GENERALIZED_C = 17.0 * 144.0
GENERALIZED_DELTA = 288.0 / math.log2(1.5)

_TOL = 1e-12


@dataclass(frozen=True)
class HypothesisFlag:
    satisfied: bool
    margin: float
    failed_conditions: tuple = ()

    def as_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "margin": self.margin,
            "failed_conditions": list(self.failed_conditions),
        }


def _flag(conditions) -> HypothesisFlag:
    """Combine ``(name, lhs, rhs)`` conditions meaning ``lhs <= rhs``.

    The margin is the smallest relative slack ``(rhs - lhs) / max(|rhs|, 1)``.
    """
    failed = []
    margin = math.inf
    for name, lhs, rhs in conditions:
        slack = (rhs - lhs) / max(abs(rhs), 1.0)
        margin = min(margin, slack)
        if lhs > rhs * (1 + _TOL) + _TOL:
            failed.append(name)
    return HypothesisFlag(not failed, margin, tuple(failed))


def _log2_sum_exp2(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log2(1.0 + 2.0 ** (lo - hi))


def log_factor(d: int, alpha: float, epsilon: float) -> float:
    """log(1/eps) + log d + log(1/alpha)."""
    return math.log2(1.0 / epsilon) + math.log2(d) + math.log2(1.0 / alpha)


# -- single subset and first moment -----------------------------------------


def log_cube_prob_bounds(d: int, sigma2: float, epsilon: float) -> tuple:
    """log2 bounds on P(X in B_inf(z, eps)) for X ~ N(0, sigma2 I_d), any z in [-1, 1]^d."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    upper = d * math.log2(2 * epsilon) - (d / 2) * math.log2(2 * math.pi * sigma2)
    lower = upper - (2 * d / sigma2) * LOG2E
    return lower, upper


def log_expectation_bounds(params: ProblemParams, log2_family_size: float, range_halfwidth: Optional[float] = None) -> tuple:
    """log2 sandwich on E[Y] for a family of ``2**log2_family_size`` subsets.

    With ``range_halfwidth`` (targets in [-h, h]^d, h = lambda*sqrt(n)) the
    lower correction becomes exp(-2 lambda^2 d / alpha).
    """
    m = params.subset_size
    lower, upper = log_cube_prob_bounds(params.d, m, params.epsilon)
    if range_halfwidth is not None:
        lam2 = range_halfwidth**2 / params.n
        lower = upper - (2 * lam2 * params.d / params.alpha) * LOG2E
    return lower + log2_family_size, upper + log2_family_size


# -- joint probabilities -----------------------------------------------------


def joint_upper_hypotheses(params: ProblemParams) -> HypothesisFlag:
    a, n = params.alpha, params.n
    return _flag(
        [
            ("alpha <= 1/6", a, 1 / 6),
            ("n >= 81/(alpha(1-2alpha))", 81 / (a * (1 - 2 * a)), n),
        ]
    )


def log_joint_upper(params: ProblemParams) -> float:
    """log2 upper bound on P(Y_S = 1, Y_T = 1) when |S & T| = floor(2 alpha^2 n)."""
    d, a, eps = params.d, params.alpha, params.epsilon
    m = params.subset_size
    return (
        2 * d * math.log2(2 * eps)
        - d * math.log2(2 * math.pi * m)
        - (d / 2) * math.log2(1 - 4 * a * a)
    )


def joint_lower_hypotheses(params: ProblemParams, range_halfwidth: Optional[float] = None) -> HypothesisFlag:
    a, n = params.alpha, params.n
    conds = [("n >= 10/(alpha(2-alpha))", 10 / (a * (2 - a)), n)]
    if range_halfwidth is not None:
        conds.append(("range_halfwidth > 1", 1.0, range_halfwidth))
    return _flag(conds)


def log_joint_lower(params: ProblemParams, range_halfwidth: Optional[float] = None) -> float:
    """log2 lower bound on P(Y_S = 1, Y_T = 1) when |S & T| = ceil(alpha^2 n / 2).

    For targets in [-h, h]^d with h = lambda*sqrt(n) the exponential
    correction exp(-3d/(alpha n)) is replaced by exp(-3 lambda^2 d / alpha).
    """
    d, a, eps = params.d, params.alpha, params.epsilon
    m = params.subset_size
    base = (
        2 * d * math.log2(2 * eps)
        - d * math.log2(2 * math.pi * m)
        - (d / 2) * math.log2(1 - a * a / 4)
    )
    if range_halfwidth is None:
        return base - (3 * d / m) * LOG2E
    lam2 = range_halfwidth**2 / params.n
    return base - (3 * lam2 * d / a) * LOG2E


def joint_upper_from_sizes(d: int, m: int, k: int, epsilon: float) -> float:
    """log2 of the same upper bound written with the realized sizes.

    With sigma_A^2 = m - k and sigma_B^2 = k the per-coordinate bound is
    (2 eps)^2 / (2 pi sqrt(m^2 - k^2)); valid when 3k <= m.
    """
    return d * (2 * math.log2(2 * epsilon) - math.log2(2 * math.pi) - 0.5 * math.log2(m * m - k * k))


# -- second moment and Chebyshev ----------------------------------------------


def variance_bracket(params: ProblemParams) -> float:
    """(1 - 4 alpha^2)^(-d/2) - exp(-4d/(alpha n)), computed without cancellation."""
    d, a, m = params.d, params.alpha, params.subset_size
    x = -(d / 2) * math.log1p(-4 * a * a)
    y = -4 * d / m
    return math.exp(y) * math.expm1(x - y)


def log_variance_upper(params: ProblemParams, log2_family_size: float) -> float:
    """log2 upper bound on Var[Y].

    The covariance term is summed over the |C|(|C|-1) ordered pairs S != T,
    so a single subset leaves only the Bernoulli term.  Returns ``-inf``
    when the bracket is not positive (see :func:`variance_degenerate`).
    """
    d, eps, m = params.d, params.epsilon, params.subset_size
    L = log2_family_size
    single = d * math.log2(2 * eps) - (d / 2) * math.log2(2 * math.pi * m)
    second = single + L
    bracket = variance_bracket(params)
    if L <= 0:
        return second
    if bracket <= 0:
        return -math.inf
    log_pairs = 2 * L + math.log2(-math.expm1(-L * math.log(2)))
    cross = 2 * single + log_pairs + math.log2(bracket)
    return _log2_sum_exp2(cross, second)


def variance_degenerate(params: ProblemParams) -> bool:
    return variance_bracket(params) <= 0


def variance_hypotheses(params: ProblemParams) -> HypothesisFlag:
    return joint_upper_hypotheses(params)


def required_n_single(d: int, alpha: float, epsilon: float) -> int:
    """Smallest n with n >= 144 d / alpha^2 * (log 1/eps + log d + log 1/alpha)."""
    return snap_ceil(144 * d / alpha**2 * log_factor(d, alpha, epsilon))


@dataclass(frozen=True)
class ChebyshevCheck:
    guaranteed: bool
    flags: HypothesisFlag
    required_n: int
    required_log2_family_size: float


def chebyshev_check(params: ProblemParams, log2_family_size: float) -> ChebyshevCheck:
    """Whether P(Y >= 1) >= 1/3 is guaranteed for these parameters.

    The intersection cap floor(2 alpha^2 n) is assumed to hold for the family.
    """
    d, n, a, eps = params.d, params.n, params.alpha, params.epsilon
    need_n = 144 * d / a**2 * log_factor(d, a, eps)
    need_L = a * a * n / 6
    flags = _flag(
        [
            ("alpha <= 1/6", a, 1 / 6),
            ("alpha <= 1/(6 sqrt d)", a, 1 / (6 * math.sqrt(d))),
            ("log2|C| >= alpha^2 n / 6", need_L, log2_family_size),
            ("n >= 144 d/alpha^2 (log 1/eps + log d + log 1/alpha)", need_n, n),
        ]
    )
    return ChebyshevCheck(flags.satisfied, flags, snap_ceil(need_n), need_L)


def chebyshev_ratio_upper(params: ProblemParams, log2_family_size: float) -> float:
    """Upper bound on 4 Var[Y] / E[Y]^2 from the first and second moment bounds."""
    lo, _ = log_expectation_bounds(params, log2_family_size)
    v = log_variance_upper(params, log2_family_size)
    if v == -math.inf:
        return 0.0
    return 4.0 * 2.0 ** (v - 2 * lo)


# -- sample-size requirements and failure probabilities ----------------------


def required_n_full(d: int, alpha: float, epsilon: float, C_const: float = DEFAULT_C) -> int:
    """ceil(C d^2/alpha^2 log(1/eps) (log 1/eps + log d + log 1/alpha))."""
    if not C_const > 0:
        raise ValueError("C_const must be positive")
    return snap_ceil(C_const * d * d / alpha**2 * math.log2(1 / epsilon) * log_factor(d, alpha, epsilon))


def failure_prob(n: int, d: int, alpha: float, epsilon: float, C_const: float = DEFAULT_C) -> float:
    """log2 of the probability that some target in [-1, 1]^d is missed."""
    if not C_const > 0:
        raise ValueError("C_const must be positive")
    k = n / (C_const * d / alpha**2 * log_factor(d, alpha, epsilon))
    return -(k - d * math.log2(1 / epsilon))


@dataclass(frozen=True)
class MainRequirement:
    n: int
    alpha: float
    subset_size: int
    leading_factor: float  # C * 36 * d^3


def main_requirement(d: int, epsilon: float, C_const: float = DEFAULT_C) -> MainRequirement:
    alpha = 1 / (6 * math.sqrt(d))
    n = required_n_full(d, alpha, epsilon, C_const)
    return MainRequirement(n, alpha, math.floor(n / (6 * math.sqrt(d))), C_const * 36 * d**3)


def required_n_main(d: int, epsilon: float, C_const: float = DEFAULT_C) -> int:
    """Sample size for subsets of size n/(6 sqrt d): the alpha = 1/(6 sqrt d) instance."""
    return main_requirement(d, epsilon, C_const).n


def required_n_generalized(d: int, alpha: float, epsilon: float, sigma: float = 1.0, C_const: float = GENERALIZED_C) -> int:
    """ceil(C d^2/alpha^2 (log sigma/eps + log d + log 1/alpha)^2) for the extended range."""
    L = math.log2(sigma / epsilon) + math.log2(d) + math.log2(1 / alpha)
    return snap_ceil(C_const * d * d / alpha**2 * L * L)


def failure_prob_generalized(n: float, d: int, alpha: float, epsilon: float, sigma: float = 1.0, delta: float = GENERALIZED_DELTA) -> float:
    """log2 failure probability over the extended range (affine Gaussian inputs)."""
    L = math.log2(sigma / epsilon) + math.log2(d) + math.log2(1 / alpha)
    return -(n / (delta * d / alpha**2 * L) - d * math.log2(sigma / epsilon))


def failure_prob_containment(n: int, p: float, d: int, alpha: float, epsilon: float, sigma: float = 1.0, delta: float = GENERALIZED_DELTA) -> float:
    """log2 of 2 exp[-ln2 (p n / (2 delta ...) - d log sigma/eps)] for containment inputs."""
    return 1.0 + failure_prob_generalized(p * n / 2, d, alpha, epsilon, sigma, delta)


# -- target ranges and discretization ----------------------------------------


@dataclass(frozen=True)
class TargetRange:
    lam: float
    halfwidth: float
    center_shift: tuple
    subset_size: int
    effective_n: float


def extended_lambda(d: int, alpha: float) -> float:
    return 0.5 * math.sqrt(alpha / (17 * d))


def generalized_range(params: ProblemParams, sigma: float = 1.0, v=None) -> TargetRange:
    """Box [-sigma lambda sqrt n, sigma lambda sqrt n]^d + alpha n v of reachable targets."""
    return _range(params.d, params.n, params.alpha, sigma, v, params.n)


def containment_range(params: ProblemParams, p: float, sigma: float = 1.0, v=None) -> TargetRange:
    """Same box with n replaced by p n / 2, the guaranteed number of Gaussian draws."""
    if not (0.0 < p <= 1.0):
        raise ValueError("p must lie in (0, 1]")
    return _range(params.d, params.n, params.alpha, sigma, v, p * params.n / 2)


def _range(d, n, alpha, sigma, v, n_eff) -> TargetRange:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    lam = extended_lambda(d, alpha)
    size = math.floor(alpha * n_eff + 1e-9)
    v = np.zeros(d) if v is None else np.asarray(v, dtype=float)
    if v.shape != (d,):
        raise ValueError(f"v must have length {d}")
    shift = tuple(float(x) for x in size * v)
    return TargetRange(lam, sigma * lam * math.sqrt(n_eff), shift, size, float(n_eff))


def generalized_range_hypotheses(params: ProblemParams) -> HypothesisFlag:
    a, d = params.alpha, params.d
    return _flag([("alpha <= 1/(6 sqrt d)", a, 1 / (6 * math.sqrt(d)))])


def discrete_error_bound(n: int, epsilon: float) -> float:
    """2 eps (n + 1): error after truncating inputs at delta = 2 eps."""
    return 2 * epsilon * (n + 1)


# -- report ------------------------------------------------------------------


@dataclass(frozen=True)
class BoundEntry:
    value: float
    scale: str  # "log2" or "linear"

    def as_dict(self) -> dict:
        v = self.value
        return {"value": v if math.isfinite(v) else str(v), "scale": self.scale}


@dataclass(frozen=True)
class BoundReport:
    params: ProblemParams
    log2_family_size: float
    entries: dict = field(default_factory=dict)
    hypothesis_flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "log2_family_size": self.log2_family_size,
            "entries": {k: e.as_dict() for k, e in self.entries.items()},
            "hypothesis_flags": {k: f.as_dict() for k, f in self.hypothesis_flags.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


def bound_report(params: ProblemParams, log2_family_size: Optional[float] = None, C_const: float = DEFAULT_C) -> BoundReport:
    """Evaluate every bound for ``params``; the family size defaults to the
    guaranteed 2^(alpha^2 n / 6)."""
    d, n, a, eps = params.d, params.n, params.alpha, params.epsilon
    L = a * a * n / 6 if log2_family_size is None else float(log2_family_size)
    lg, ln = "log2", "linear"
    entries = {}
    lo, up = log_cube_prob_bounds(d, params.subset_size, eps)
    entries["single_prob_lower"] = BoundEntry(lo, lg)
    entries["single_prob_upper"] = BoundEntry(up, lg)
    lo, up = log_expectation_bounds(params, L)
    entries["expectation_lower"] = BoundEntry(lo, lg)
    entries["expectation_upper"] = BoundEntry(up, lg)
    entries["joint_upper"] = BoundEntry(log_joint_upper(params), lg)
    entries["joint_lower"] = BoundEntry(log_joint_lower(params), lg)
    entries["variance_upper"] = BoundEntry(log_variance_upper(params, L), lg)
    entries["chebyshev_ratio_upper"] = BoundEntry(chebyshev_ratio_upper(params, L), ln)
    cheb = chebyshev_check(params, L)
    entries["required_n_single"] = BoundEntry(float(required_n_single(d, a, eps)), ln)
    entries["required_n_full"] = BoundEntry(float(required_n_full(d, a, eps, C_const)), ln)
    entries["failure_prob"] = BoundEntry(failure_prob(n, d, a, eps, C_const), lg)
    entries["required_n_main"] = BoundEntry(float(required_n_main(d, eps, C_const)), ln)
    rng_ = generalized_range(params)
    entries["extended_lambda"] = BoundEntry(rng_.lam, ln)
    entries["extended_halfwidth"] = BoundEntry(rng_.halfwidth, ln)
    entries["discrete_error_bound"] = BoundEntry(discrete_error_bound(n, eps), ln)
    entries["intersection_cap"] = BoundEntry(float(params.intersection_cap), ln)
    entries["tightness_intersection"] = BoundEntry(float(params.tightness_intersection), ln)
    flags = {
        "joint_upper": joint_upper_hypotheses(params),
        "joint_lower": joint_lower_hypotheses(params),
        "variance": variance_hypotheses(params),
        "variance_bracket_positive": HypothesisFlag(
            not variance_degenerate(params), variance_bracket(params),
            () if not variance_degenerate(params) else ("bracket > 0",),
        ),
        "chebyshev": cheb.flags,
        "extended_range": generalized_range_hypotheses(params),
    }
    return BoundReport(params, L, entries, flags)
