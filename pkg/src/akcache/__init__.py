"""Approximate-key caching for ML inference results, with auto-refresh error control."""

from .approxfn import ApproxFn, parse as parse_approx
from .cachecore import ApproxKeyCache, BackoffSchedule, CacheConfig, LookupOutcome, phi, verification_indices
from .errors import CacheInvariantError, ConfigurationError, NumericalError, TraceFormatError
from .model import (
    ModelReport, lru_autorefresh_numeric, prop1_ideal, refresh_and_error_ideal, sequence_model, solve_tc,
)
from .simcache import SimilarityCache, SimilarityConfig
from .workload import Trace, WorkloadSpec, generate, ingest

__version__ = "0.1.0"

__all__ = [
    "ApproxFn", "parse_approx", "ApproxKeyCache", "BackoffSchedule", "CacheConfig", "LookupOutcome", "phi",
    "verification_indices", "CacheInvariantError", "ConfigurationError", "NumericalError", "TraceFormatError",
    "ModelReport", "lru_autorefresh_numeric", "prop1_ideal", "refresh_and_error_ideal", "sequence_model",
    "solve_tc", "SimilarityCache", "SimilarityConfig", "Trace", "WorkloadSpec", "generate", "ingest",
]
