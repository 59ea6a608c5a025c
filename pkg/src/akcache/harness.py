"""Trace replay, metrics, model validation and lookup benchmarks."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import approxfn, model
from .cachecore import (
    AUTO_REFRESH, HIT_SERVED, HIT_VERIFIED_MATCH, HIT_VERIFIED_MISMATCH, IDEAL, LRU, MISS_BYPASSED,
    MISS_INSERTED, NO_CONTROL, ApproxKeyCache, CacheConfig,
)
from .errors import ConfigurationError
from .simcache import LINEAR_SCAN, PARTITION_TREE, SimilarityCache, SimilarityConfig
from .workload import Trace, WorkloadSpec, generate, ingest

log = logging.getLogger(__name__)

EXACT = "exact"
APPROX_KEY = "approx_key"
SIMILARITY = "similarity"
PARADIGMS = (EXACT, APPROX_KEY, SIMILARITY)

METRICS_COLUMNS = ["paradigm", "approx", "K", "beta", "mode", "H", "R", "E", "E_nc", "inference_fraction", "seed"]

# per-arrival outcome codes
CODES = {MISS_INSERTED: 0, MISS_BYPASSED: 1, HIT_SERVED: 2, HIT_VERIFIED_MATCH: 3, HIT_VERIFIED_MISMATCH: 4}
_CHUNK = 1 << 16


@dataclass(frozen=True)
class CacheSpec:
    """One cache to replay: a paradigm plus its configuration."""

    paradigm: str
    config: CacheConfig | SimilarityConfig
    name: str = ""

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ConfigurationError(f"unknown paradigm {self.paradigm!r}")
        want = SimilarityConfig if self.paradigm == SIMILARITY else CacheConfig
        if not isinstance(self.config, want):
            raise ConfigurationError(f"{self.paradigm} needs a {want.__name__}")
        if self.paradigm == EXACT and self.config.approx.kind != "identity":
            raise ConfigurationError("exact caching uses the identity key")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        c = self.config
        if self.paradigm == SIMILARITY:
            return f"similarity[{c.index},eps={c.epsilon:g},K={c.capacity}]"
        ctl = f"beta={c.beta:g},{c.schedule_mode}" if c.auto_refresh else "nc"
        return f"{self.paradigm}[{c.approx},{c.replacement},K={c.capacity},{ctl}]"

    @classmethod
    def from_dict(cls, d: dict) -> "CacheSpec":
        d = dict(d)
        paradigm = d.pop("paradigm", APPROX_KEY)
        name = d.pop("name", "")
        if paradigm == SIMILARITY:
            return cls(paradigm, SimilarityConfig(**d), name)
        if "approx" in d:
            d["approx"] = approxfn.parse(str(d["approx"]))
        if paradigm == EXACT:
            d.setdefault("error_control", NO_CONTROL)
        return cls(paradigm, CacheConfig(**d), name)

    def to_dict(self) -> dict:
        d = asdict(self.config)
        if "approx" in d:
            d["approx"] = str(self.config.approx)
        return {"paradigm": self.paradigm, "name": self.name, **d}


@dataclass
class ArrivalLog:
    """Per-arrival outcome codes, error flags and dense key ids."""

    codes: np.ndarray
    errors: np.ndarray
    key_ids: np.ndarray
    key_index: np.ndarray   # representative trace key_index per key id


@dataclass
class MetricsReport:
    paradigm: str
    name: str
    approx: str
    K: int
    beta: float | None
    mode: str | None
    replacement: str | None
    seed: int | None
    arrivals: int
    hits: int
    misses: int
    refreshes: int
    errors: int
    oracle_calls: int
    H: float
    R: float
    E: float
    E_nc: float | None
    inference_fraction: float
    per_key: dict = field(default_factory=dict)
    sequence_lengths: dict = field(default_factory=dict)
    latency_ns: dict | None = None
    log: ArrivalLog | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "paradigm": self.paradigm, "approx": self.approx, "K": self.K,
            "beta": "" if self.beta is None else self.beta, "mode": self.mode or "",
            "H": self.H, "R": self.R, "E": self.E, "E_nc": "" if self.E_nc is None else self.E_nc,
            "inference_fraction": self.inference_fraction, "seed": "" if self.seed is None else self.seed,
        }

    def summary(self) -> dict:
        out = {"H": self.H, "R": self.R, "E": self.E, "inference_fraction": self.inference_fraction}
        if self.E_nc is not None:
            out["E_nc"] = self.E_nc
        return out

    def key_rates(self) -> dict:
        """{key_index: (r, e)} with r the inference fraction of that key's arrivals."""
        pk = self.per_key
        out = {}
        for ki, n, inf, err in zip(pk["key_index"], pk["arrivals"], pk["inferences"], pk["errors"]):
            if n:
                out[int(ki)] = (float(inf / n), float(err / n))
        return out

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("log", "per_key")}
        d["per_key"] = {k: np.asarray(v).tolist() for k, v in self.per_key.items()}
        d["sequence_lengths"] = {str(k): v for k, v in sorted(self.sequence_lengths.items())}
        return d

    def window(self, lo: float, hi: float) -> dict:
        """Aggregate and per-key rates over arrivals in ``[lo*T, hi*T)`` of the full trace."""
        if self.log is None:
            raise ConfigurationError("report was produced without an arrival log")
        T = self.log.codes.size
        a, b = int(lo * T), int(hi * T)
        return _rates(self.log.codes[a:b], self.log.errors[a:b], self.log.key_ids[a:b], self.log.key_index)


def _rates(codes: np.ndarray, errors: np.ndarray, key_ids: np.ndarray, key_index: np.ndarray) -> dict:
    n = codes.size
    hit = codes >= 2
    refresh = codes >= 3
    infer = ~hit | refresh
    nk = key_index.size
    per_arr = np.bincount(key_ids, minlength=nk)
    seen = per_arr > 0
    per_key = {
        "key_index": key_index[seen],
        "arrivals": per_arr[seen],
        "hits": np.bincount(key_ids, weights=hit, minlength=nk)[seen].astype(np.int64),
        "refreshes": np.bincount(key_ids, weights=refresh, minlength=nk)[seen].astype(np.int64),
        "inferences": np.bincount(key_ids, weights=infer, minlength=nk)[seen].astype(np.int64),
        "errors": np.bincount(key_ids, weights=errors, minlength=nk)[seen].astype(np.int64),
    }
    counts = {
        "arrivals": n,
        "hits": int(hit.sum()),
        "refreshes": int(refresh.sum()),
        "oracle_calls": int(infer.sum()),
        "errors": int(errors.sum()),
    }
    counts["misses"] = n - counts["hits"]
    d = max(n, 1)
    rates = {"H": counts["hits"] / d, "R": counts["refreshes"] / d, "E": counts["errors"] / d,
             "inference_fraction": counts["oracle_calls"] / d}
    return {**counts, **rates, "per_key": per_key}


# ---------------------------------------------------------------------------
# replay


def approx_key_ids(trace: Trace, approx) -> tuple[np.ndarray, list]:
    """Dense id of every arrival's approximate key, and the keys by id."""
    ids: dict = {}
    out = np.empty(len(trace), dtype=np.int64)
    setdefault = ids.setdefault
    pos = 0
    for chunk_start in range(0, len(trace), _CHUNK):
        chunk = [approx(x) for x in trace.iter_inputs(chunk_start, min(chunk_start + _CHUNK, len(trace)))]
        out[pos:pos + len(chunk)] = [setdefault(k, len(ids)) for k in chunk]
        pos += len(chunk)
    return out, list(ids)


def popularity_ranks(key_ids: np.ndarray, n_keys: int) -> np.ndarray:
    """1-based rank of each key id by empirical frequency; ties keep first-seen order."""
    counts = np.bincount(key_ids, minlength=n_keys)
    order = np.argsort(-counts, kind="stable")
    rank = np.empty(n_keys, dtype=np.int64)
    rank[order] = np.arange(1, n_keys + 1)
    return rank


def _representative_index(trace: Trace, key_ids: np.ndarray, n_keys: int) -> np.ndarray:
    _, first = np.unique(key_ids, return_index=True)
    return trace.key_index[first] if first.size == n_keys else np.full(n_keys, -1)


def simulate_trace(trace: Trace, spec: CacheSpec, warmup_fraction: float = 0.1, seed: int | None = None,
                   keep_log: bool = True, time_lookups: bool = False) -> MetricsReport:
    """Replay ``trace`` through one cache and measure hit, refresh and error rates.

    An unverified hit whose served label differs from the record's true label
    counts as one error. Rates are computed after dropping the first
    ``warmup_fraction`` of the arrivals.
    """
    if not 0 <= warmup_fraction < 1:
        raise ConfigurationError("warmup_fraction must be in [0, 1)")
    if len(trace) == 0:
        raise ConfigurationError("cannot simulate an empty trace")
    if spec.paradigm == SIMILARITY:
        codes, served, ids, keys, seq, lat = _replay_similarity(trace, spec.config, time_lookups)
        cfg = spec.config
        beta = mode = replacement = None
        approx_name = "none"
        control = False
    else:
        codes, served, ids, keys, seq, lat = _replay_approx(trace, spec.config, time_lookups)
        cfg = spec.config
        control = cfg.auto_refresh
        beta = cfg.beta if control else None
        mode = cfg.schedule_mode if control else None
        replacement = cfg.replacement
        approx_name = str(cfg.approx)
    truth = trace.labels
    errors = (codes == CODES[HIT_SERVED]) & (served != truth)
    key_index = _representative_index(trace, ids, len(keys))
    w0 = int(warmup_fraction * len(trace))
    r = _rates(codes[w0:], errors[w0:], ids[w0:], key_index)
    return MetricsReport(
        paradigm=spec.paradigm, name=spec.label, approx=approx_name, K=cfg.capacity, beta=beta, mode=mode,
        replacement=replacement, seed=seed, arrivals=r["arrivals"], hits=r["hits"], misses=r["misses"],
        refreshes=r["refreshes"], errors=r["errors"], oracle_calls=r["oracle_calls"],
        H=r["H"], R=r["R"], E=r["E"], E_nc=None if control else r["E"],
        inference_fraction=r["inference_fraction"], per_key=r["per_key"], sequence_lengths=dict(seq),
        latency_ns=lat, log=ArrivalLog(codes, errors, ids, key_index) if keep_log else None,
    )


def _quantiles(samples: list) -> dict:
    a = np.asarray(samples, dtype=float)
    return {"median": float(np.median(a)), "p99": float(np.percentile(a, 99)), "mean": float(a.mean())}


def _replay_approx(trace: Trace, cfg: CacheConfig, time_lookups: bool):
    ids, keys = approx_key_ids(trace, cfg.approx)
    rank = None
    if cfg.replacement == IDEAL:
        ranks = popularity_ranks(ids, len(keys)).tolist()
        rank = dict(zip(keys, ranks))
    cache = ApproxKeyCache(cfg, popularity_rank=rank, track_sequences=True)
    T = len(trace)
    codes = np.empty(T, dtype=np.int8)
    served = np.empty(T, dtype=np.int64)
    labels = trace.labels.tolist()
    classify = labels.__getitem__
    lookup = cache.lookup_key
    code_of = CODES.__getitem__
    samples = []
    for s in range(0, T, _CHUNK):
        e = min(s + _CHUNK, T)
        chunk_keys = [keys[i] for i in ids[s:e].tolist()]
        if time_lookups:
            # time the full lookup including key approximation
            inputs = list(trace.iter_inputs(s, e))
            approx = cfg.approx
            outs = []
            clock = time.perf_counter_ns
            for t, x in zip(range(s, e), inputs):
                t0 = clock()
                o = cache.lookup_key(approx(x), t, classify)
                samples.append(clock() - t0)
                outs.append(o)
        else:
            outs = [lookup(k, t, classify) for t, k in zip(range(s, e), chunk_keys)]
        codes[s:e] = [code_of(o[1]) for o in outs]
        served[s:e] = [o[0] for o in outs]
    cache.close_sequences()
    return codes, served, ids, keys, cache.sequence_lengths, _quantiles(samples) if samples else None


def _replay_similarity(trace: Trace, cfg: SimilarityConfig, time_lookups: bool):
    if trace.packets.shape[1] > cfg.dim:
        raise ConfigurationError(f"trace inputs of length {trace.packets.shape[1]} exceed dimension {cfg.dim}")
    cache = SimilarityCache(cfg)
    T = len(trace)
    codes = np.empty(T, dtype=np.int8)
    served = np.empty(T, dtype=np.int64)
    labels = trace.labels.tolist()
    samples = []
    clock = time.perf_counter_ns
    for t, x in enumerate(trace.iter_inputs()):
        t0 = clock()
        o = cache.lookup(x, lambda _x, t=t: labels[t])
        if time_lookups:
            samples.append(clock() - t0)
        codes[t] = CODES[o.kind]
        served[t] = o.label
    ids = np.arange(T, dtype=np.int64)
    return codes, served, ids, [None] * T, {}, _quantiles(samples) if samples else None


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    caches: list
    workload: WorkloadSpec | None = None
    trace_path: str | None = None
    model_validation: bool = False
    warmup_fraction: float = 0.1
    output_dir: str = "results"
    seeds: tuple = (0, 1, 2, 3, 4)
    tolerance: float = 0.02
    workers: int = 1

    def __post_init__(self):
        if not self.caches:
            raise ConfigurationError("an experiment needs at least one cache")
        if (self.workload is None) == (self.trace_path is None):
            raise ConfigurationError("give exactly one of workload or trace_path")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigurationError("warmup_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        caches = [c if isinstance(c, CacheSpec) else CacheSpec.from_dict(c) for c in d.pop("caches", [])]
        wl = d.pop("workload", None)
        if isinstance(wl, dict):
            wl = WorkloadSpec.from_dict(wl)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        d.pop("seed", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown experiment fields {sorted(unknown)}")
        return cls(caches=caches, workload=wl, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        import yaml

        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})


def _load_trace(cfg: ExperimentConfig, seed: int) -> Trace:
    if cfg.workload is not None:
        return generate(cfg.workload.with_seed(seed))
    return ingest(cfg.trace_path)


def _run_job(args):
    cfg, spec, seed = args
    trace = _load_trace(cfg, seed)
    return simulate_trace(trace, spec, cfg.warmup_fraction, seed=seed, keep_log=False)


def simulate(cfg: ExperimentConfig) -> list[MetricsReport]:
    """Replay the workload once per (cache, seed); independent runs may execute in parallel."""
    seeds = cfg.seeds if cfg.workload is not None else cfg.seeds[:1]
    jobs = [(cfg, spec, seed) for spec in cfg.caches for seed in seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


@dataclass
class AveragedReport:
    """Mean and sample standard deviation of several runs of one cache."""

    name: str
    runs: list
    mean: dict
    std: dict
    key_mean: dict

    def summary(self) -> dict:
        return dict(self.mean)

    def key_rates(self) -> dict:
        return dict(self.key_mean)


def average_reports(reports: Sequence[MetricsReport]) -> AveragedReport:
    if not reports:
        raise ConfigurationError("nothing to average")
    keys = set(reports[0].summary())
    for r in reports[1:]:
        keys &= set(r.summary())
    mean, std = {}, {}
    for k in sorted(keys):
        v = np.array([r.summary()[k] for r in reports])
        mean[k] = float(v.mean())
        std[k] = float(v.std(ddof=1)) if v.size > 1 else 0.0
    per_key: dict = {}
    for r in reports:
        for ki, (kr, ke) in r.key_rates().items():
            per_key.setdefault(ki, []).append((kr, ke))
    key_mean = {ki: tuple(np.mean(v, axis=0).tolist()) for ki, v in per_key.items()}
    return AveragedReport(reports[0].name, list(reports), mean, std, key_mean)


def group_reports(reports: Iterable[MetricsReport]) -> dict:
    groups: dict = {}
    for r in reports:
        groups.setdefault(r.name, []).append(r)
    return {name: average_reports(rs) for name, rs in groups.items()}


def model_for(workload: WorkloadSpec, spec: CacheSpec) -> model.ModelReport:
    """Model prediction for a synthetic workload replayed through ``spec``.

    The model is indexed by synthetic key index, so it is only comparable with
    simulations whose approximation keeps key identity (e.g. identity with no
    noise, or ``prefix:4``).
    """
    if spec.paradigm == SIMILARITY:
        raise ConfigurationError("no analytical model for similarity caching")
    cfg = spec.config
    q = workload.popularity_vector()
    p = workload.mixture_list()
    beta = cfg.beta if cfg.auto_refresh else None
    if cfg.replacement == IDEAL:
        return model.refresh_and_error_ideal(q, p, cfg.capacity, beta)
    if beta is None:
        return model.lru_nocontrol(q, p, cfg.capacity)
    return model.lru_autorefresh_numeric(q, p, cfg.capacity, beta)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationRow:
    metric: str
    simulated: float
    model: float
    diff: float
    passed: bool


@dataclass
class ValidationResult:
    rows: list
    tol_abs: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "simulated", "model", "abs_diff", "pass"])
            for r in self.rows:
                w.writerow([r.metric, repr(r.simulated), repr(r.model), repr(r.diff), "pass" if r.passed else "FAIL"])

    def format(self) -> str:
        lines = [f"{'metric':<24}{'simulated':>12}{'model':>12}{'diff':>10}  result"]
        for r in self.rows:
            lines.append(f"{r.metric:<24}{r.simulated:>12.5f}{r.model:>12.5f}{r.diff:>10.5f}  "
                         f"{'pass' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def _model_key_rates(m: model.ModelReport) -> dict:
    return {i: (float(m.r[i]), float(m.e[i])) for i in range(m.q.size)}


def _summary(x) -> dict:
    if isinstance(x, model.ModelReport):
        return {"H": x.H, "R": x.R, "E": x.E, "inference_fraction": x.inference_fraction}
    return x.summary()


def _key_rates(x) -> dict:
    if isinstance(x, model.ModelReport):
        return _model_key_rates(x)
    return x.key_rates()


def validate(sim, reference, tol_abs: float = 0.02, keys: Sequence[int] | None = None) -> ValidationResult:
    """Compare aggregate (and optionally per-key) rates against a reference.

    ``sim`` and ``reference`` may each be a :class:`MetricsReport`, an
    :class:`AveragedReport` or a :class:`model.ModelReport`. ``keys`` selects
    key indices whose per-key ``r`` and ``e`` are compared as well.
    """
    a, b = _summary(sim), _summary(reference)
    rows = []
    for k in [m for m in ("H", "R", "E", "inference_fraction", "E_nc") if m in a and m in b]:
        d = abs(a[k] - b[k])
        rows.append(ValidationRow(k, a[k], b[k], d, d <= tol_abs))
    if keys is not None:
        ka, kb = _key_rates(sim), _key_rates(reference)
        missing = [k for k in keys if k not in ka or k not in kb]
        if missing:
            raise ConfigurationError(f"keys {missing[:5]} missing from one side of the comparison")
        for k in keys:
            for j, metric in enumerate(("r", "e")):
                d = abs(ka[k][j] - kb[k][j])
                rows.append(ValidationRow(f"{metric}[{k}]", ka[k][j], kb[k][j], d, d <= tol_abs))
    elif isinstance(sim, model.ModelReport) != isinstance(reference, model.ModelReport):
        m = sim if isinstance(sim, model.ModelReport) else reference
        s = reference if m is sim else sim
        extra = set(_key_rates(s)) - set(range(m.q.size))
        if extra:
            raise ConfigurationError(f"simulation has keys {sorted(extra)[:5]} unknown to the model")
    return ValidationResult(rows, tol_abs)


# ---------------------------------------------------------------------------
# lookup benchmark


@dataclass
class BenchRow:
    paradigm: str
    K: int
    median_ns: float
    p99_ns: float
    ratio_to_exact: float | None = None


def _bench_population(K: int, dim: int, rng) -> list:
    # distinct flows with realistic packet sizes
    rows = rng.integers(-1500, 1501, size=(K, dim)).tolist()
    return [tuple(r) for r in rows]


def bench_lookup(K_values: Sequence[int], paradigms: Sequence[str] = (EXACT, APPROX_KEY, "similarity_linear"),
                 queries: int = 2000, seed: int = 0, approx: str = "prefix:10", dim: int = 100,
                 k_neighbors: int = 10) -> list[BenchRow]:
    """Median and p99 per-lookup wall-clock time over warm lookups.

    Caches are filled with ``K`` distinct flows and queried with inputs drawn
    from that population. ``paradigms`` accepts ``exact``, ``approx_key``,
    ``similarity_linear`` and ``similarity_tree``.
    """
    rng = np.random.default_rng(seed)
    fn = approxfn.parse(approx)
    out = []
    for K in K_values:
        population = _bench_population(K, dim, rng)
        labels = rng.integers(0, 200, size=K).tolist()
        label_of = dict(zip(population, labels))
        picks = rng.integers(0, K, size=queries).tolist()
        qs = [population[i] for i in picks]
        classify = label_of.__getitem__
        rows = {}
        for paradigm in paradigms:
            lookup = _bench_cache(paradigm, K, population, labels, fn, dim, k_neighbors, classify)
            for x in qs[: min(200, len(qs))]:
                lookup(x)
            samples = []
            clock = time.perf_counter_ns
            for x in qs:
                t0 = clock()
                lookup(x)
                samples.append(clock() - t0)
            q = _quantiles(samples)
            rows[paradigm] = BenchRow(paradigm, K, q["median"], q["p99"])
        base = rows.get(EXACT)
        for r in rows.values():
            r.ratio_to_exact = r.median_ns / base.median_ns if base else None
            out.append(r)
    return out


def _bench_cache(paradigm, K, population, labels, fn, dim, k, classify):
    if paradigm in (EXACT, APPROX_KEY):
        approx = approxfn.IDENTITY if paradigm == EXACT else fn
        cfg = CacheConfig(K, LRU, approx, AUTO_REFRESH if paradigm == APPROX_KEY else NO_CONTROL, beta=2.0)
        cache = ApproxKeyCache(cfg)
        for x in population:
            cache.lookup(x, classify)
        return lambda x: cache.lookup(x, classify)
    if paradigm in ("similarity_linear", "similarity_tree"):
        index = LINEAR_SCAN if paradigm == "similarity_linear" else PARTITION_TREE
        cache = SimilarityCache(SimilarityConfig(K, min(k, K), 0.0, index, dim))
        for x, y in zip(population, labels):
            cache.insert(x, y)
        if index == PARTITION_TREE:
            cache._rebuild()
        return lambda x: cache.lookup(x, classify)
    raise ConfigurationError(f"unknown benchmark paradigm {paradigm!r}")


def write_bench(rows: Sequence[BenchRow], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["paradigm", "K", "median_ns", "p99_ns", "ratio_to_exact"])
        for r in rows:
            w.writerow([r.paradigm, r.K, r.median_ns, r.p99_ns, "" if r.ratio_to_exact is None else r.ratio_to_exact])


# ---------------------------------------------------------------------------
# accuracy comparison


@dataclass
class AccuracyRow:
    name: str
    paradigm: str
    hit_rate: float
    correct_hits: float
    error_hits: float
    misses: float

    @property
    def error_share_of_hits(self) -> float:
        return self.error_hits / self.hit_rate if self.hit_rate > 0 else 0.0


def compare_accuracy(trace: Trace, approx_specs: Sequence[CacheSpec], sim_cfgs: Sequence[SimilarityConfig],
                     warmup_fraction: float = 0.0) -> list[AccuracyRow]:
    """Split each cache's answers into correct hits, erroneous hits and misses.

    Errors are counted on every hit whose answer differs from the true label,
    including verified hits (which are always correct by construction).
    """
    specs = list(approx_specs) + [CacheSpec(SIMILARITY, c) for c in sim_cfgs]
    rows = []
    for spec in specs:
        rep = simulate_trace(trace, spec, warmup_fraction, keep_log=False)
        n = max(rep.arrivals, 1)
        err = rep.errors / n
        rows.append(AccuracyRow(spec.label, spec.paradigm, rep.H, rep.H - err, err, rep.misses / n))
    return rows


def write_accuracy(rows: Sequence[AccuracyRow], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "paradigm", "hit_rate", "correct_hits", "error_hits", "misses", "error_share_of_hits"])
        for r in rows:
            w.writerow([r.name, r.paradigm, r.hit_rate, r.correct_hits, r.error_hits, r.misses, r.error_share_of_hits])


# ---------------------------------------------------------------------------
# output


def write_metrics(reports: Sequence[MetricsReport], output_dir, stem: str = "metrics"):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, f"{stem}.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    groups = group_reports(reports)
    with open(os.path.join(output_dir, f"{stem}.json"), "w") as fh:
        json.dump({
            "runs": [r.to_json() for r in reports],
            "summary": {name: {"mean": g.mean, "std": g.std, "runs": len(g.runs)} for name, g in groups.items()},
        }, fh, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o))


def load_metrics_summary(path) -> dict:
    """Read the per-cache mean summary written by :func:`write_metrics`."""
    with open(path) as fh:
        data = json.load(fh)
    return {name: s["mean"] for name, s in data["summary"].items()}
