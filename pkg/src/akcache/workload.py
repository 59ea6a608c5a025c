"""Synthetic IRM traces, trace files, and per-key trace statistics."""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .approxfn import MAX_ABS_ELEMENT, MAX_INPUT_LEN, ApproxFn
from .errors import ConfigurationError, TraceFormatError
from .model import zipf_popularity

log = logging.getLogger(__name__)

KEY_DIGITS = 4
MALFORMED_LIMIT = 0.01
CSV_HEADER = ["flow_id", "key_index", "label", "len"] + [f"p{i}" for i in range(1, MAX_INPUT_LEN + 1)]


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of a synthetic IRM workload.

    Popularity is ``zipf`` (with ``alpha``), ``uniform`` or ``explicit``
    (``weights``). The class mixture of each key is one of ``single_class``,
    ``dominant`` (``p_max`` on one class, the rest split evenly over
    ``classes_per_key - 1`` classes), ``uniform_classes`` or ``explicit``
    (``mixtures``, one probability vector per key). Class ``j`` of key ``i``
    has global id ``(i + j) % class_count``.
    """

    key_count: int
    popularity: str = "zipf"
    alpha: float = 1.0
    weights: tuple = ()
    mixture: str = "single_class"
    p_max: float = 1.0
    classes_per_key: int = 1
    mixtures: tuple = ()
    class_count: int = 200
    arrivals: int = 100_000
    seed: int = 0
    noise_len: int = 0
    noise_max: int = 1500

    def __post_init__(self):
        if self.key_count < 1:
            raise ConfigurationError("key_count must be positive")
        if self.key_count > 256**KEY_DIGITS:
            raise ConfigurationError("key_count exceeds the 4-digit key encoding")
        if self.arrivals < 1:
            raise ConfigurationError("arrivals must be at least 1")
        if self.popularity not in ("zipf", "uniform", "explicit"):
            raise ConfigurationError(f"unknown popularity law {self.popularity!r}")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.popularity == "explicit" and len(self.weights) != self.key_count:
            raise ConfigurationError("explicit popularity needs one weight per key")
        if self.mixture not in ("single_class", "dominant", "uniform_classes", "explicit"):
            raise ConfigurationError(f"unknown mixture model {self.mixture!r}")
        m = self.classes_per_key
        if m < 1 or m > self.class_count:
            raise ConfigurationError("classes_per_key must be in [1, class_count]")
        if self.mixture == "dominant" and not (1.0 / m < self.p_max <= 1.0 or (m == 1 and self.p_max == 1.0)):
            raise ConfigurationError(f"p_max must lie in (1/m, 1], got {self.p_max}")
        if self.mixture == "explicit":
            if len(self.mixtures) != self.key_count:
                raise ConfigurationError("explicit mixtures need one vector per key")
            for p in self.mixtures:
                p = np.asarray(p, dtype=float)
                if p.size > self.class_count or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                    raise ConfigurationError(f"invalid class mixture {tuple(p)}")
        if not 0 <= self.noise_len <= MAX_INPUT_LEN - KEY_DIGITS:
            raise ConfigurationError("noise_len out of range")
        if not 0 <= self.noise_max <= MAX_ABS_ELEMENT:
            raise ConfigurationError("noise_max out of range")

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        d = dict(d)
        for k in ("weights", "mixtures"):
            if k in d:
                d[k] = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown workload fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "WorkloadSpec":
        return WorkloadSpec(**{**asdict(self), "seed": seed})

    def popularity_vector(self) -> np.ndarray:
        if self.popularity == "uniform":
            return np.full(self.key_count, 1.0 / self.key_count)
        if self.popularity == "zipf":
            return zipf_popularity(self.key_count, self.alpha)
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()

    def mixture_of(self, i: int) -> np.ndarray:
        m = self.classes_per_key
        if self.mixture == "single_class":
            return np.ones(1)
        if self.mixture == "uniform_classes":
            return np.full(m, 1.0 / m)
        if self.mixture == "dominant":
            if m == 1:
                return np.ones(1)
            return np.array([self.p_max] + [(1.0 - self.p_max) / (m - 1)] * (m - 1))
        p = np.asarray(self.mixtures[i], dtype=float)
        return p / p.sum()

    def mixture_list(self) -> list[np.ndarray]:
        if self.mixture == "explicit":
            return [self.mixture_of(i) for i in range(self.key_count)]
        p = self.mixture_of(0)
        return [p] * self.key_count

    def class_id(self, i: int, j: int) -> int:
        return (i + j) % self.class_count


class TraceRecord(NamedTuple):
    flow_id: int
    key_index: int
    input: tuple
    true_label: int


@dataclass
class IngestSummary:
    rows: int = 0
    malformed: int = 0
    reasons: Counter = field(default_factory=Counter)


@dataclass
class Trace:
    """A materialized trace; ``packets`` is zero-padded to the longest input."""

    flow_id: np.ndarray
    key_index: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray
    packets: np.ndarray
    label_names: list
    summary: IngestSummary | None = None

    def __len__(self):
        return int(self.labels.size)

    def input(self, t: int) -> tuple:
        return tuple(self.packets[t, :self.lengths[t]].tolist())

    def iter_inputs(self, start: int = 0, stop: int | None = None, chunk: int = 65536) -> Iterator[list]:
        """Yield input vectors as lists, converting the packet matrix chunk by chunk."""
        stop = len(self) if stop is None else stop
        width = self.packets.shape[1]
        uniform = bool(np.all(self.lengths == width))
        for s in range(start, stop, chunk):
            e = min(s + chunk, stop)
            rows = self.packets[s:e].tolist()
            if uniform:
                yield from rows
            else:
                for row, n in zip(rows, self.lengths[s:e].tolist()):
                    yield row[:n]

    def records(self) -> Iterator[TraceRecord]:
        fids = self.flow_id.tolist()
        keys = self.key_index.tolist()
        labels = self.labels.tolist()
        for t, x in enumerate(self.iter_inputs()):
            yield TraceRecord(fids[t], keys[t], tuple(x), labels[t])

    def label_name(self, label: int) -> str:
        return self.label_names[label]

    def label_map(self) -> dict:
        return {name: i for i, name in enumerate(self.label_names)}

    @classmethod
    def from_records(cls, records: Iterable[TraceRecord], label_names: list) -> "Trace":
        recs = list(records)
        T = len(recs)
        width = max((len(r.input) for r in recs), default=1)
        packets = np.zeros((T, width), dtype=np.int32)
        lengths = np.zeros(T, dtype=np.int32)
        for t, r in enumerate(recs):
            packets[t, :len(r.input)] = r.input
            lengths[t] = len(r.input)
        return cls(
            flow_id=np.array([r.flow_id for r in recs], dtype=np.int64),
            key_index=np.array([r.key_index for r in recs], dtype=np.int64),
            labels=np.array([r.true_label for r in recs], dtype=np.int64),
            lengths=lengths,
            packets=packets,
            label_names=list(label_names),
        )


def encode_key(i: int) -> list[int]:
    """Fixed 4-digit base-256 encoding of a key index (most significant first)."""
    return [(i >> (8 * (KEY_DIGITS - 1 - d))) & 0xFF for d in range(KEY_DIGITS)]


def generate(spec: WorkloadSpec) -> Trace:
    """Draw ``spec.arrivals`` i.i.d. records: key from the popularity law, label from its mixture."""
    rng = np.random.default_rng(spec.seed)
    T, N = spec.arrivals, spec.key_count
    cdf = np.cumsum(spec.popularity_vector())
    keys = np.minimum(np.searchsorted(cdf, rng.random(T) * cdf[-1], side="right"), N - 1)

    mixtures = spec.mixture_list()
    u = rng.random(T)
    if spec.mixture == "explicit":
        m_max = max(p.size for p in mixtures)
        cdfs = np.ones((N, m_max))
        for i, p in enumerate(mixtures):
            c = np.cumsum(p)
            cdfs[i, :c.size] = c / c[-1]
        j = (u[:, None] * 1.0 >= cdfs[keys]).sum(axis=1)
        j = np.minimum(j, np.array([p.size for p in mixtures])[keys] - 1)
    else:
        c = np.cumsum(mixtures[0])
        j = np.minimum(np.searchsorted(c / c[-1], u, side="right"), c.size - 1)
    labels = (keys + j) % spec.class_count

    width = KEY_DIGITS + spec.noise_len
    packets = np.empty((T, width), dtype=np.int32)
    for d in range(KEY_DIGITS):
        packets[:, d] = (keys >> (8 * (KEY_DIGITS - 1 - d))) & 0xFF
    if spec.noise_len:
        packets[:, KEY_DIGITS:] = rng.integers(-spec.noise_max, spec.noise_max + 1,
                                               size=(T, spec.noise_len), dtype=np.int32)
    return Trace(
        flow_id=np.arange(T, dtype=np.int64),
        key_index=keys.astype(np.int64),
        labels=labels.astype(np.int64),
        lengths=np.full(T, width, dtype=np.int32),
        packets=packets,
        label_names=[str(c) for c in range(spec.class_count)],
    )


# ---------------------------------------------------------------------------
# trace files


def _sidecar(path) -> str:
    return os.fspath(path) + ".labels.json"


def write_trace(trace: Trace, path, fmt: str | None = None):
    """Write ``trace`` as CSV or JSON lines plus a label-map sidecar."""
    fmt = fmt or _guess_format(path)
    names = trace.label_names
    with open(path, "w", newline="") as fh:
        if fmt == "csv":
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in trace.records():
                pk = list(r.input) + [""] * (MAX_INPUT_LEN - len(r.input))
                w.writerow([r.flow_id, r.key_index if r.key_index >= 0 else "", names[r.true_label],
                            len(r.input)] + pk)
        elif fmt == "jsonl":
            for r in trace.records():
                fh.write(json.dumps({
                    "flow_id": r.flow_id,
                    "key_index": r.key_index if r.key_index >= 0 else None,
                    "label": names[r.true_label],
                    "len": len(r.input),
                    "packets": list(r.input),
                }) + "\n")
        else:
            raise ConfigurationError(f"unknown trace format {fmt!r}")
    with open(_sidecar(path), "w") as fh:
        json.dump({name: i for i, name in enumerate(names)}, fh)


def _guess_format(path) -> str:
    p = os.fspath(path).lower()
    if p.endswith((".jsonl", ".json", ".ndjson")):
        return "jsonl"
    return "csv"


def _parse_int(v) -> int:
    if isinstance(v, bool):
        raise ValueError("boolean")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        if v != int(v):
            raise ValueError("fractional")
        return int(v)
    return int(str(v).strip())


def _check_packets(packets: list, declared) -> tuple:
    if not 1 <= len(packets) <= MAX_INPUT_LEN:
        raise ValueError("length")
    if declared not in (None, "") and _parse_int(declared) != len(packets):
        raise ValueError("len mismatch")
    out = tuple(_parse_int(v) for v in packets)
    if any(abs(v) > MAX_ABS_ELEMENT for v in out):
        raise ValueError("packet size bound")
    return out


def _csv_rows(fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return
    if header[:4] != CSV_HEADER[:4]:
        raise ConfigurationError(f"unexpected CSV header {header[:4]}")
    for row in reader:
        if not row:
            continue
        try:
            fid, kidx, label, n = row[:4]
            values = row[4:]
            while values and values[-1] == "":
                values.pop()
            if "" in values:
                raise ValueError("gap in packets")
            yield fid, kidx, label, n, values, None
        except ValueError as exc:
            yield None, None, None, None, None, str(exc) or "row shape"


def _jsonl_rows(fh):
    for line in fh:
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict) or not isinstance(d.get("packets"), list):
                raise ValueError("shape")
            yield d.get("flow_id"), d.get("key_index"), d.get("label"), d.get("len"), d["packets"], None
        except ValueError as exc:
            yield None, None, None, None, None, str(exc) or "json"


def iter_records(path, fmt: str | None = None, label_map: dict | None = None,
                 summary: IngestSummary | None = None) -> Iterator[TraceRecord]:
    """Stream records from a trace file, skipping malformed rows.

    Label strings are mapped to dense ids in first-seen order unless
    ``label_map`` (or a ``.labels.json`` sidecar) fixes the mapping; new
    labels are appended to ``label_map`` in place.
    """
    fmt = fmt or _guess_format(path)
    if fmt not in ("csv", "jsonl"):
        raise ConfigurationError(f"unknown trace format {fmt!r}")
    summary = summary if summary is not None else IngestSummary()
    if label_map is None:
        label_map = {}
        if os.path.exists(_sidecar(path)):
            with open(_sidecar(path)) as fh:
                label_map.update(json.load(fh))
    with open(path, newline="") as fh:
        rows = _csv_rows(fh) if fmt == "csv" else _jsonl_rows(fh)
        for fid, kidx, label, n, packets, err in rows:
            summary.rows += 1
            try:
                if err is not None:
                    raise ValueError(err)
                x = _check_packets(packets, n)
                flow_id = _parse_int(fid)
                key_index = -1 if kidx in (None, "") else _parse_int(kidx)
                if label in (None, ""):
                    raise ValueError("missing label")
                label = str(label)
            except (ValueError, TypeError) as exc:
                summary.malformed += 1
                summary.reasons[str(exc)] += 1
                continue
            if label not in label_map:
                label_map[label] = len(label_map)
            yield TraceRecord(flow_id, key_index, x, label_map[label])
    if summary.rows and summary.malformed > MALFORMED_LIMIT * summary.rows:
        raise TraceFormatError(f"{summary.malformed} of {summary.rows} rows malformed in {path}")
    if summary.malformed:
        log.warning("skipped %d malformed rows of %d in %s", summary.malformed, summary.rows, path)


def ingest(path, fmt: str | None = None, label_map: dict | None = None) -> Trace:
    summary = IngestSummary()
    label_map = None if label_map is None else dict(label_map)
    if label_map is None:
        label_map = {}
        if os.path.exists(_sidecar(path)):
            with open(_sidecar(path)) as fh:
                label_map.update(json.load(fh))
    records = list(iter_records(path, fmt, label_map, summary))
    names = [None] * len(label_map)
    for name, i in label_map.items():
        names[i] = name
    trace = Trace.from_records(records, names)
    trace.summary = summary
    return trace


# ---------------------------------------------------------------------------
# statistics


@dataclass
class KeyHistogram:
    """Mergeable per-(approximate key, label) counts."""

    counts: Counter = field(default_factory=Counter)
    first_seen: dict = field(default_factory=dict)

    def update(self, keys: Iterable, labels: Iterable[int]):
        counts, first = self.counts, self.first_seen
        for k, y in zip(keys, labels):
            if k not in first:
                first[k] = len(first)
            counts[k, y] += 1

    def merge(self, other: "KeyHistogram") -> "KeyHistogram":
        out = KeyHistogram(Counter(self.counts), dict(self.first_seen))
        for k in sorted(other.first_seen, key=other.first_seen.get):
            if k not in out.first_seen:
                out.first_seen[k] = len(out.first_seen)
        out.counts.update(other.counts)
        return out


@dataclass
class TraceStats:
    keys: list              # approximate keys, most popular first
    counts: np.ndarray      # arrivals per key, same order
    label_hist: list        # per key: {label: count}
    top_M: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def q_hat(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def distinct_keys(self) -> int:
        return len(self.keys)

    def dominant(self) -> np.ndarray:
        """max_j p_ij over the ``top_M`` most popular keys."""
        out = []
        for hist, c in zip(self.label_hist[:self.top_M], self.counts[:self.top_M]):
            out.append(max(hist.values()) / c)
        return np.array(out)

    def prevalence_histogram(self, bins: int = 20):
        return np.histogram(self.dominant(), bins=bins, range=(0.0, 1.0))

    def write_rank_frequency(self, path):
        q = self.q_hat
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "count", "q_hat", "max_p_hat", "classes"])
            for i, (c, hist) in enumerate(zip(self.counts.tolist(), self.label_hist)):
                w.writerow([i + 1, c, repr(float(q[i])), repr(max(hist.values()) / c), len(hist)])

    def write_prevalence(self, path, bins: int = 20):
        hist, edges = self.prevalence_histogram(bins)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "keys", "fraction"])
            total = max(int(hist.sum()), 1)
            for lo, hi, n in zip(edges[:-1], edges[1:], hist):
                w.writerow([f"{lo:.2f}", f"{hi:.2f}", int(n), repr(int(n) / total)])


def key_histogram(trace: Trace, approx: ApproxFn) -> KeyHistogram:
    kh = KeyHistogram()
    kh.update((approx(x) for x in trace.iter_inputs()), trace.labels.tolist())
    return kh


def stats_from_histogram(kh: KeyHistogram, top_M: int = 10_000) -> TraceStats:
    per_key: dict = {}
    for (k, y), c in kh.counts.items():
        per_key.setdefault(k, {})[y] = c
    if not per_key:
        raise ConfigurationError("statistics need a non-empty trace")
    order = sorted(per_key, key=lambda k: (-sum(per_key[k].values()), kh.first_seen[k]))
    counts = np.array([sum(per_key[k].values()) for k in order], dtype=np.int64)
    return TraceStats(order, counts, [per_key[k] for k in order], top_M)


def stats(trace: Trace, approx: ApproxFn, top_M: int = 10_000) -> TraceStats:
    if len(trace) == 0:
        raise ConfigurationError("statistics need a non-empty trace")
    return stats_from_histogram(key_histogram(trace, approx), top_M)
