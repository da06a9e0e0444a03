"""Multidimensional random subset sum: samplers, bounds, exact search and experiments."""

from .core import InvalidParams, ProblemParams, Target, derive_seed, linf_distance
from .family import SubsetFamily, build_family, validate_family
from .sampler import SampleMatrix, quantize, sample_affine_normal, sample_containment, sample_standard_normal
from .search import SearchResult, count_hits, cover_grid, enumerate_exhaustive, meet_in_middle

__version__ = "0.1.0"

__all__ = [
    "InvalidParams", "ProblemParams", "Target", "derive_seed", "linf_distance",
    "SubsetFamily", "build_family", "validate_family",
    "SampleMatrix", "quantize", "sample_affine_normal", "sample_containment", "sample_standard_normal",
    "SearchResult", "count_hits", "cover_grid", "enumerate_exhaustive", "meet_in_middle",
]
