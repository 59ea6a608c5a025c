"""Command-line driver.

Every subcommand reads one YAML experiment file (``--config``) and accepts
``--seed`` and ``--output-dir``. Example config::

    workload:
      key_count: 1000
      popularity: zipf
      alpha: 0.8
      mixture: dominant
      p_max: 0.8
      classes_per_key: 3
      arrivals: 1000000
    caches:
      - {paradigm: approx_key, capacity: 100, replacement: ideal, beta: 1.5, schedule_mode: phi_sequence}
      - {paradigm: exact, capacity: 100, replacement: lru}
    seeds: [0, 1, 2, 3, 4]
    warmup_fraction: 0.1
    tolerance: 0.02
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import yaml

from . import approxfn, harness, workload
from .errors import ConfigurationError, NumericalError, TraceFormatError
from .simcache import SimilarityConfig

log = logging.getLogger("akcache")


def _load(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return data


def _experiment(raw: dict, args) -> harness.ExperimentConfig:
    raw = dict(raw)
    for k in ("bench", "compare", "stats", "format"):
        raw.pop(k, None)
    if args.output_dir:
        raw["output_dir"] = args.output_dir
    if getattr(args, "trace", None):
        raw.pop("workload", None)
        raw["trace_path"] = args.trace
    if "trace" in raw:
        raw["trace_path"] = raw.pop("trace")
    cfg = harness.ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seeds = tuple(args.seed + i for i in range(len(cfg.seeds)))
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _workload(raw: dict, args) -> workload.WorkloadSpec:
    if "workload" not in raw:
        raise ConfigurationError("config has no workload section")
    spec = workload.WorkloadSpec.from_dict(raw["workload"])
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def _outdir(raw: dict, args) -> str:
    d = args.output_dir or raw.get("output_dir") or "results"
    os.makedirs(d, exist_ok=True)
    return d


def cmd_generate(args, raw) -> int:
    spec = _workload(raw, args)
    fmt = args.format or raw.get("format", "csv")
    path = os.path.join(_outdir(raw, args), f"trace.{fmt}")
    workload.write_trace(workload.generate(spec), path, fmt)
    print(path)
    return 0


def cmd_stats(args, raw) -> int:
    opts = raw.get("stats", {})
    trace_path = args.trace or raw.get("trace")
    if trace_path:
        trace = workload.ingest(trace_path)
        s = trace.summary
        if s is not None and s.malformed:
            log.warning("skipped %d malformed rows of %d", s.malformed, s.rows)
    else:
        trace = workload.generate(_workload(raw, args))
    fn = approxfn.parse(args.approx or opts.get("approx", "identity"))
    st = workload.stats(trace, fn, int(args.top_m or opts.get("top_M", 10_000)))
    out = _outdir(raw, args)
    st.write_rank_frequency(os.path.join(out, "rank_frequency.csv"))
    st.write_prevalence(os.path.join(out, "prevalence.csv"), int(opts.get("bins", 20)))
    print(f"{st.total} arrivals, {st.distinct_keys} distinct keys under {fn}")
    return 0


def cmd_simulate(args, raw) -> int:
    cfg = _experiment(raw, args)
    reports = harness.simulate(cfg)
    harness.write_metrics(reports, cfg.output_dir)
    for name, g in harness.group_reports(reports).items():
        stats = "  ".join(f"{k}={g.mean[k]:.4f}±{g.std[k]:.4f}" for k in g.mean)
        print(f"{name}: {stats}")
    return 0


def _model_specs(cfg: harness.ExperimentConfig):
    return [(i, s) for i, s in enumerate(cfg.caches) if s.paradigm != harness.SIMILARITY]


def cmd_model(args, raw) -> int:
    cfg = _experiment(raw, args)
    if cfg.workload is None:
        raise ConfigurationError("the model needs a synthetic workload, not a trace file")
    for i, spec in _model_specs(cfg):
        m = harness.model_for(cfg.workload, spec)
        m.write_csv(os.path.join(cfg.output_dir, f"model_{i}.csv"))
        m.write_json(os.path.join(cfg.output_dir, f"model_{i}.json"))
        print(f"{spec.label}: H={m.H:.4f} R={m.R:.4f} E={m.E:.4f} E_nc={m.E_nc:.4f}")
    return 0


def cmd_validate(args, raw) -> int:
    cfg = _experiment(raw, args)
    if cfg.workload is None:
        raise ConfigurationError("validation needs a synthetic workload")
    tol = args.tol if args.tol is not None else cfg.tolerance
    reports = harness.simulate(replace_caches(cfg, [s for _, s in _model_specs(cfg)]))
    harness.write_metrics(reports, cfg.output_dir)
    groups = harness.group_reports(reports)
    ok = True
    for i, spec in _model_specs(cfg):
        m = harness.model_for(cfg.workload, spec)
        res = harness.validate(groups[spec.label], m, tol)
        res.write_csv(os.path.join(cfg.output_dir, f"validation_{i}.csv"))
        print(spec.label)
        print(res.format())
        ok &= res.passed
    return 0 if ok else 1


def replace_caches(cfg: harness.ExperimentConfig, caches) -> harness.ExperimentConfig:
    return replace(cfg, caches=list(caches))


def cmd_bench(args, raw) -> int:
    opts = raw.get("bench", {})
    Ks = args.K or opts.get("K_values", [1000, 10000])
    paradigms = args.paradigms or opts.get("paradigms", ["exact", "approx_key", "similarity_linear"])
    rows = harness.bench_lookup(
        [int(k) for k in Ks], paradigms, int(args.queries or opts.get("queries", 2000)),
        seed=args.seed if args.seed is not None else int(opts.get("seed", 0)),
        approx=opts.get("approx", "prefix:10"),
    )
    path = os.path.join(_outdir(raw, args), "bench.csv")
    harness.write_bench(rows, path)
    for r in rows:
        print(f"{r.paradigm:<20}K={r.K:<8} median={r.median_ns / 1e3:9.2f}us  p99={r.p99_ns / 1e3:9.2f}us"
              f"  x{r.ratio_to_exact:.1f}")
    return 0


def cmd_compare(args, raw) -> int:
    opts = raw.get("compare", {})
    trace_path = args.trace or raw.get("trace")
    trace = workload.ingest(trace_path) if trace_path else workload.generate(_workload(raw, args))
    approx_specs = [harness.CacheSpec.from_dict(c) for c in opts.get("approx_key", [])]
    sim_cfgs = [SimilarityConfig(**c) for c in opts.get("similarity", [])]
    if not approx_specs and not sim_cfgs:
        raise ConfigurationError("compare section lists no caches")
    rows = harness.compare_accuracy(trace, approx_specs, sim_cfgs, float(opts.get("warmup_fraction", 0.0)))
    path = os.path.join(_outdir(raw, args), "accuracy.csv")
    harness.write_accuracy(rows, path)
    for r in rows:
        print(f"{r.name}: correct={r.correct_hits:.4f} errors={r.error_hits:.4f} misses={r.misses:.4f}")
    return 0


COMMANDS = {
    "generate": cmd_generate, "stats": cmd_stats, "simulate": cmd_simulate, "model": cmd_model,
    "validate": cmd_validate, "bench": cmd_bench, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="akcache", description="Approximate-key caching experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c")
        s.add_argument("--seed", type=int)
        s.add_argument("--output-dir", "-o")
        if name in ("stats", "simulate", "compare"):
            s.add_argument("--trace")
        if name == "generate":
            s.add_argument("--format", choices=["csv", "jsonl"])
        if name == "stats":
            s.add_argument("--approx")
            s.add_argument("--top-m", type=int)
        if name in ("simulate", "validate"):
            s.add_argument("--workers", type=int)
        if name == "validate":
            s.add_argument("--tol", type=float)
        if name == "bench":
            s.add_argument("--K", type=int, nargs="+")
            s.add_argument("--paradigms", nargs="+")
            s.add_argument("--queries", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = _load(args.config)
        return COMMANDS[args.command](args, raw)
    except (ConfigurationError, TraceFormatError, NumericalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
