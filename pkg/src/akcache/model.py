"""Analytical performance models for approximate-key caching under IRM.

Notation follows the usual cache-modelling conventions: ``q[i]`` is the
popularity of approximate key ``i``, ``p[i]`` its class mixture, ``K`` the cache
capacity and ``beta`` the auto-refresh back-off base. Per-key quantities are
``h`` (hit probability), ``r`` (fraction of arrivals running an inference) and
``e`` (fraction of arrivals answered with a wrong class).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, NumericalError

RENORMALIZE_TOL = 1e-9
DEFAULT_SERIES_TOL = 1e-10
DEFAULT_TRUNC = 1e-9
_MAX_SERIES_TERMS = 20_000_000
_EXPLICIT_BLOCK = 1 << 16


# ---------------------------------------------------------------------------
# inputs


def zipf_popularity(n: int, alpha: float) -> np.ndarray:
    """Normalized Zipf law ``q_i ~ i**-alpha`` over ``n`` keys."""
    if n < 1 or alpha < 0:
        raise ConfigurationError("zipf needs n >= 1 and alpha >= 0")
    w = np.arange(1, n + 1, dtype=float) ** -float(alpha)
    return w / w.sum()


def _normalized(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ConfigurationError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ConfigurationError(f"{what} must be finite and non-negative")
    s = v.sum()
    if abs(s - 1.0) > RENORMALIZE_TOL:
        raise ConfigurationError(f"{what} sums to {s!r}, not 1")
    return v / s


def validate_popularity(q) -> np.ndarray:
    """Check that ``q`` is a probability vector in non-increasing order."""
    q = _normalized(q, "popularity")
    if np.any(np.diff(q) > 1e-15):
        raise ConfigurationError("popularity must be sorted in non-increasing order")
    return q


def validate_mixture(p) -> np.ndarray:
    return _normalized(p, "class mixture")


def _mixtures(p_list, n: int) -> list[np.ndarray]:
    if len(p_list) != n:
        raise ConfigurationError(f"{len(p_list)} mixtures for {n} keys")
    return [validate_mixture(p) for p in p_list]


# ---------------------------------------------------------------------------
# hit rates


@dataclass(frozen=True)
class CharacteristicTime:
    t_c: float
    residual: float


def _occupancy(q: np.ndarray, t: float) -> float:
    return float(-np.expm1(-q * t).sum())


def solve_tc(q, K: int, tol: float = 1e-6) -> CharacteristicTime:
    """Solve ``sum_i (1 - exp(-q_i t)) = K`` for the LRU characteristic time."""
    q = np.asarray(q, dtype=float)
    nonzero = int(np.count_nonzero(q))
    if not 1 <= K < nonzero:
        raise ConfigurationError(f"no characteristic time for K={K} with {nonzero} keys")

    def f(t):
        return _occupancy(q, t) - K

    hi = K / q.max()
    while f(hi) < 0:
        hi *= 2.0
    t = brentq(f, 0.0, hi, xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish: brentq stops on the bracket width, not on the residual
    for _ in range(20):
        res = f(t)
        if abs(res) <= tol * 1e-3:
            break
        slope = float((q * np.exp(-q * t)).sum())
        if slope <= 0:
            break
        t -= res / slope
    res = f(t)
    if abs(res) > tol:
        raise NumericalError("characteristic time residual too large", t_c=t, residual=res)
    return CharacteristicTime(t, res)


def lru_hit_rates(q, t_c: float) -> tuple[np.ndarray, float]:
    q = np.asarray(q, dtype=float)
    h = -np.expm1(-q * t_c)
    return h, float(np.dot(q, h))


def ideal_hit_rate(q, K: int) -> float:
    """Total popularity of the ``K`` most popular keys."""
    q = np.asarray(q, dtype=float)
    if K >= q.size:
        return float(q.sum())
    return float(np.sort(q)[::-1][:K].sum())


def _ideal_mask(q: np.ndarray, K: int) -> np.ndarray:
    mask = np.zeros(q.size, dtype=bool)
    mask[np.argsort(-q, kind="stable")[:K]] = True
    return mask


# ---------------------------------------------------------------------------
# errors without control


def nocontrol_key_error(p) -> float:
    p = validate_mixture(p)
    return float(1.0 - np.dot(p, p))


def nocontrol_error(q, p_list, K: int, mode: str = "ideal", t_c: float | None = None):
    """Per-key error ``1 - sum_j p_ij**2`` and the aggregate no-control error.

    For ``mode="lru"`` the characteristic time is solved unless given.
    """
    q = np.asarray(q, dtype=float)
    p_list = _mixtures(p_list, q.size)
    e = np.array([1.0 - float(np.dot(p, p)) for p in p_list])
    if mode == "ideal":
        weight = np.where(_ideal_mask(q, K), q, 0.0)
    elif mode == "lru":
        if t_c is None:
            t_c = solve_tc(q, K).t_c
        h, _ = lru_hit_rates(q, t_c)
        weight = q * h
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return e, float(np.dot(weight, e))


# ---------------------------------------------------------------------------
# ideal cache with auto-refresh


def _phi_logs(n: np.ndarray, beta: float):
    """log(phi_n - 1) and log(phi_n - n) for an array of n >= 2."""
    with np.errstate(over="ignore"):
        bpow = np.power(beta, n - 1.0)
    big = ~(bpow < 2.0**52)
    phi = np.maximum(n, np.floor(np.where(big, 0.0, bpow)))
    with np.errstate(divide="ignore"):
        log_m1 = np.where(big, (n - 1.0) * math.log(beta), np.log(phi - 1.0))
        log_mn = np.where(big, (n - 1.0) * math.log(beta), np.log(phi - n))
    return log_m1, log_mn


def _series_sums(p: np.ndarray, beta: float, tol: float):
    """Return (D, E) with

    D = sum_j sum_{n>=2} (phi_n - 1) (1-p_j)^2 p_j^(n-1)
    E = sum_j sum_{n>=2} (phi_n - n) (1-p_j)^3 p_j^(n-1)
    """
    p = p[(p > 0) & (p < 1)]
    with np.errstate(divide="ignore"):
        log_p = np.log(p)[:, None]
        log_q = np.log1p(-p)[:, None]
    D = E = 0.0
    quiet = 0
    start, chunk = 2, 64
    while start < _MAX_SERIES_TERMS:
        n = np.arange(start, start + chunk, dtype=float)
        log_m1, log_mn = _phi_logs(n, beta)
        base = (n - 1.0) * log_p
        d_terms = np.exp(log_m1 + 2 * log_q + base).sum(axis=0)
        e_terms = np.exp(log_mn + 3 * log_q + base).sum(axis=0)
        cum_d = D + np.cumsum(d_terms)
        cum_e = E + np.cumsum(e_terms)
        small = (d_terms < tol * cum_d) & (e_terms < tol * cum_e)
        for i, s in enumerate(small):
            quiet = quiet + 1 if s else 0
            if quiet == 3:
                return float(cum_d[i]), float(cum_e[i])
        D, E = float(cum_d[-1]), float(cum_e[-1])
        start += chunk
        chunk = min(chunk * 2, 1 << 20)
    raise NumericalError("series did not converge", beta=beta, p_max=float(p.max()), terms=start)


def prop1_ideal(p, beta: float, tol: float = DEFAULT_SERIES_TOL) -> tuple[float, float]:
    """Closed-form (r, e) of one permanently cached key under auto-refresh.

    When some class has probability at least ``1/beta`` the verification
    intervals outgrow the mismatch rate: ``r`` is 0 and ``e`` is
    ``1 - max_j p_j``. Otherwise both are ratios of convergent series.
    """
    if not beta > 1:
        raise ConfigurationError(f"back-off base must exceed 1, got {beta!r}")
    p = validate_mixture(p)
    p_max = float(p.max())
    if p_max >= 1.0 / beta:
        return 0.0, 1.0 - p_max
    D, E = _series_sums(p, beta, tol)
    return 1.0 / D, E / D


def is_boundary(p, beta: float, rel: float = 1e-12) -> bool:
    """True when the dominant class sits exactly at ``1/beta``."""
    return abs(float(np.max(p)) * beta - 1.0) <= rel


@dataclass
class ModelReport:
    """Per-key and aggregate model predictions.

    Per-key ``r``, ``e`` and ``e_nc`` are fractions of that key's arrivals:
    ``r`` counts every classifier inference (misses included), so the
    aggregate refresh rate is ``R = sum q (r - (1 - h))``.
    """

    replacement: str
    K: int
    beta: float | None
    q: np.ndarray
    h: np.ndarray
    r: np.ndarray
    e: np.ndarray
    e_nc: np.ndarray
    H: float
    R: float
    E: float
    E_nc: float
    t_c: float | None = None
    boundary_keys: list = field(default_factory=list)

    @property
    def inference_fraction(self) -> float:
        return self.R + (1.0 - self.H)

    def aggregates(self) -> dict:
        return {
            "replacement": self.replacement,
            "K": self.K,
            "beta": self.beta,
            "H": self.H,
            "R": self.R,
            "E": self.E,
            "E_nc": self.E_nc,
            "inference_fraction": self.inference_fraction,
            "t_c": self.t_c,
            "boundary_keys": list(self.boundary_keys),
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "q", "h", "r", "e", "e_nc"])
            for i in range(self.q.size):
                w.writerow([i, repr(float(self.q[i])), repr(float(self.h[i])), repr(float(self.r[i])),
                            repr(float(self.e[i])), repr(float(self.e_nc[i]))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.aggregates(), fh, indent=2)


def refresh_and_error_ideal(q, p_list, K: int, beta: float | None,
                            tol: float = DEFAULT_SERIES_TOL) -> ModelReport:
    """Ideal-cache model: refresh rate R and error E over the top-K keys.

    ``beta=None`` models a cache without error control.
    """
    q = np.asarray(q, dtype=float)
    p_list = _mixtures(p_list, q.size)
    cached = _ideal_mask(q, K)
    h = cached.astype(float)
    e_nc = np.array([1.0 - float(np.dot(p, p)) for p in p_list])
    # per-key r is the inference fraction: uncached keys always miss
    r = np.where(cached, 0.0, 1.0)
    e = np.zeros(q.size)
    boundary = []
    for i in np.flatnonzero(cached):
        if beta is None:
            e[i] = e_nc[i]
            continue
        r[i], e[i] = prop1_ideal(p_list[i], beta, tol)
        if is_boundary(p_list[i], beta):
            boundary.append(int(i))
    w = q * h
    return ModelReport(
        replacement="ideal", K=K, beta=beta, q=q, h=h, r=r, e=e, e_nc=h * e_nc,
        H=float(w.sum()), R=float(np.dot(w, r)), E=float(np.dot(q, e)), E_nc=float(np.dot(w, e_nc)),
        boundary_keys=boundary,
    )


# ---------------------------------------------------------------------------
# LRU cache with auto-refresh (numerical)


def _geom_block(h: float, A: int, B: int) -> tuple[float, float]:
    """(sum h^a, sum a h^a) for a in [A, B)."""
    L = B - A
    if L <= 0:
        return 0.0, 0.0
    if L <= _EXPLICIT_BLOCK:
        a = np.arange(A, B, dtype=float)
        w = np.exp(a * math.log(h))
        return float(w.sum()), float(np.dot(a, w))
    lh = math.log(h)
    hA = math.exp(A * lh)
    if hA == 0.0:
        return 0.0, 0.0
    g = 1.0 - h
    hL = math.exp(L * lh)
    s0 = -math.expm1(L * lh) / g
    # sum_{t<L} t h^t
    st = h * (1.0 - L * math.exp((L - 1) * lh) + (L - 1) * hL) / (g * g)
    return hA * s0, hA * (A * s0 + st)


@dataclass
class SequenceTotals:
    """Per-class sums over sequence lengths ``a`` of the sequence-length laws."""

    mm: np.ndarray     # sum_a P^mm_j(a)
    lru: np.ndarray    # sum_a P^lru_j(a)
    a_sum: np.ndarray  # sum_a a (P^mm_j + P^lru_j)
    n_sum: np.ndarray  # sum_a n(a) (P^mm_j + P^lru_j)
    a_max: int


def sequence_totals(h: float, p: np.ndarray, beta: float, trunc: float = DEFAULT_TRUNC,
                    max_blocks: int = 200_000) -> SequenceTotals:
    """Accumulate the mismatch- and eviction-terminated sequence laws.

    Lengths are grouped in blocks ``phi_n <= a < phi_(n+1)`` on which the
    number of inferences ``n(a) = n`` is constant, so geometric sums apply.
    """
    from .cachecore import phi

    m = p.size
    mm = np.zeros(m)
    lru = np.zeros(m)
    a_sum = np.zeros(m)
    n_sum = np.zeros(m)
    q1 = 1.0 - p
    lh = math.log(h)
    quiet = 0
    phi_n = 1
    for n in range(1, max_blocks + 1):
        phi_next = phi(n + 1, beta)
        s0, s1 = _geom_block(h, phi_n, phi_next)
        pw = p ** (n - 1)
        b_lru = (1.0 - h) * pw * s0
        b_lru_a = (1.0 - h) * pw * s1
        # mismatch on inference n + 1 at arrival phi_next, sequence length phi_next - 1
        hm = math.exp(phi_next * lh) if phi_next * -lh < 745 else 0.0
        b_mm = hm * pw * q1
        b_mm_a = (phi_next - 1) * b_mm
        block_mass = float((b_lru + b_mm).sum())
        block_a = float((b_lru_a + b_mm_a).sum())
        mm += b_mm
        lru += b_lru
        a_sum += b_lru_a + b_mm_a
        n_sum += n * (b_lru + b_mm)
        if block_mass < trunc * float((mm + lru).sum()) and block_a < trunc * float(a_sum.sum()):
            quiet += 1
            if quiet == 3:
                return SequenceTotals(mm, lru, a_sum, n_sum, phi_next - 1)
        else:
            quiet = 0
        phi_n = phi_next
    raise NumericalError("sequence-length series did not converge", h=h, beta=beta, blocks=max_blocks)


def solve_sequence_mix(totals: SequenceTotals, p: np.ndarray, tol: float = 1e-10,
                       damping: float = 0.5, max_iter: int = 100_000) -> np.ndarray:
    """Stationary probabilities that a sequence starts with each class.

    Solves the balance equations by damped fixed-point iteration with
    normalization after every step.
    """
    m = p.size
    switch = np.zeros(m)
    ok = p < 1.0
    switch[ok] = totals.mm[ok] / (1.0 - p[ok])
    # M[j, k]: weight of a k-sequence being followed by a j-sequence
    M = np.outer(p, switch) * (1.0 - np.eye(m)) + np.outer(p, totals.lru)
    pi = p.copy()
    resid = math.inf
    for it in range(max_iter):
        nxt = M @ pi
        s = nxt.sum()
        if not s > 0:
            raise NumericalError("degenerate sequence balance equations", iteration=it)
        nxt = damping * pi + (1.0 - damping) * nxt / s
        resid = float(np.abs(nxt - pi).max())
        pi = nxt
        if resid <= tol:
            return pi / pi.sum()
    raise NumericalError("sequence balance equations did not converge", iterations=max_iter, residual=resid)


def sequence_model(h: float, p, beta: float, trunc: float = DEFAULT_TRUNC) -> tuple[float, float]:
    """(r, e) of one key whose arrivals hit the cache independently with probability ``h``."""
    if not beta > 1:
        raise ConfigurationError(f"back-off base must exceed 1, got {beta!r}")
    p = validate_mixture(p)
    if not 0.0 <= h <= 1.0:
        raise ConfigurationError(f"hit probability {h!r} outside [0, 1]")
    if h == 0.0:
        return 1.0, 0.0
    if h == 1.0:
        return prop1_ideal(p, beta)
    totals = sequence_totals(h, p, beta, trunc)
    pi = solve_sequence_mix(totals, p)
    denom = float(np.dot(pi, totals.a_sum))
    r = float(np.dot(pi, totals.n_sum)) / denom
    e = float(np.dot(pi * (1.0 - p), totals.a_sum - totals.n_sum)) / denom
    return r, e


def lru_autorefresh_numeric(q, p_list, K: int, beta: float, trunc: float = DEFAULT_TRUNC,
                            t_c: float | None = None) -> ModelReport:
    """LRU model with auto-refresh; per-key ``r`` counts misses and refreshes."""
    q = np.asarray(q, dtype=float)
    p_list = _mixtures(p_list, q.size)
    if t_c is None:
        t_c = solve_tc(q, K).t_c
    h, H = lru_hit_rates(q, t_c)
    e_nc = h * np.array([1.0 - float(np.dot(p, p)) for p in p_list])
    r = np.empty(q.size)
    e = np.empty(q.size)
    for i in range(q.size):
        r[i], e[i] = sequence_model(float(h[i]), p_list[i], beta, trunc)
    inference = float(np.dot(q, r))
    return ModelReport(
        replacement="lru", K=K, beta=beta, q=q, h=h, r=r, e=e, e_nc=e_nc,
        H=H, R=inference - (1.0 - H), E=float(np.dot(q, e)), E_nc=float(np.dot(q, e_nc)), t_c=t_c,
    )


def lru_nocontrol(q, p_list, K: int, t_c: float | None = None) -> ModelReport:
    q = np.asarray(q, dtype=float)
    p_list = _mixtures(p_list, q.size)
    if t_c is None:
        t_c = solve_tc(q, K).t_c
    h, H = lru_hit_rates(q, t_c)
    e_nc = h * np.array([1.0 - float(np.dot(p, p)) for p in p_list])
    E_nc = float(np.dot(q, e_nc))
    return ModelReport(
        replacement="lru", K=K, beta=None, q=q, h=h, r=1.0 - h, e=e_nc, e_nc=e_nc,
        H=H, R=0.0, E=E_nc, E_nc=E_nc, t_c=t_c,
    )


def phi_table(beta: float, count: int) -> list[int]:
    from .cachecore import phi

    return [phi(n, beta) for n in range(1, count + 1)]


__all__ = [
    "CharacteristicTime", "ModelReport", "SequenceTotals", "zipf_popularity", "validate_popularity",
    "validate_mixture", "solve_tc", "lru_hit_rates", "ideal_hit_rate", "nocontrol_error",
    "nocontrol_key_error", "prop1_ideal", "refresh_and_error_ideal", "sequence_totals",
    "solve_sequence_mix", "sequence_model", "lru_autorefresh_numeric", "lru_nocontrol", "is_boundary",
]
