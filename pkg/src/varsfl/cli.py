"""Command-line front end: ``varsfl {run,complexity,partition-dump,delta}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from .config import ExperimentConfig, load_config, serialize_config
from .errors import ConfigError, DivergenceError
from .metrics import ZERO_SUPPORT_CONVENTION
from .federation import (RunResult, load_dataset, prepare_data, run_single,
                         summarize_runs)
from .reporting import (JsonlWriter, complexity_report, dumps, read_jsonl, round_deltas, write_rows_csv,
                        write_summary_csv)

OUTPUT_ENV = "VARSFL_OUTPUT_DIR"

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("varsfl")


def output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.experiment.output_dir)


def _run_job(cfg: ExperimentConfig, policy: str, seed: int, out: Path) -> RunResult:
    with JsonlWriter(out / policy / str(seed) / "rounds.jsonl") as sink:
        return run_single(cfg, policy, seed, on_round=sink.write)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(cfg, args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    meta = {"version": __version__, "metric_conventions": [ZERO_SUPPORT_CONVENTION, "0/0 ratios are 0",
                                                           "precision_macro is the headline precision"],
            "rounds_to_threshold": "first round whose test accuracy reaches the threshold; summary means "
                                   "average only the seeds that reached it, n counts them"}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    jobs = [(p, s) for s in cfg.experiment.seeds for p in cfg.selector.policies]
    results: list[RunResult] = []
    failure: BaseException | None = None
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_job, cfg, p, s, out) for p, s in jobs]
            for fut in futures:
                try:
                    results.append(fut.result())
                except DivergenceError as exc:
                    failure = failure or exc
    else:
        for p, s in jobs:
            log.info("running %s seed=%d", p, s)
            try:
                results.append(_run_job(cfg, p, s, out))
            except DivergenceError as exc:
                failure = exc
                break
    if results:
        write_summary_csv(out / "summary.csv", summarize_runs(results))
    if failure is not None:
        print(f"error: training diverged: {failure}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{len(results)} runs written to {out}")
    return 0


def scoring_set_size(cfg: ExperimentConfig) -> int:
    """Size of the server scoring set implied by the config, without generating features."""
    d, v = cfg.dataset, cfg.validation
    if v.mode == "uniform":
        val = v.per_class * d.num_classes
    else:
        if d.source == "synthetic":
            counts = np.array(d.samples_per_class, dtype=np.int64)
            names = tuple(f"class_{c:02d}" for c in range(d.num_classes))
            if d.cap_fraction:
                c = names.index(d.majority_class) if d.majority_class in names else int(d.majority_class)
                counts[c] = min(counts[c], D.majority_cap_size(int(counts.sum() - counts[c]), d.cap_fraction))
        else:
            counts = load_dataset(cfg).class_counts()
        if d.stratified:
            val = sum(D.largest_remainder(int(n), d.split)[1] for n in counts)
        else:
            val = D.largest_remainder(int(counts.sum()), d.split)[1]
    frac = cfg.training.score_subsample
    return val if frac >= 1.0 else max(1, round(frac * val))


def cmd_complexity(args) -> int:
    cfg = load_config(args.config)
    n_clients = cfg.partition.num_clients
    m = cfg.selector_config(cfg.selector.policies[0]).resolve_m(n_clients)
    val_size = args.val_size if args.val_size is not None else scoring_set_size(cfg)
    report = complexity_report(cfg.architecture(), m, val_size, n_clients, cfg.selector.window)
    print(report.table())
    payload = dumps(report.to_dict())
    if args.json:
        Path(args.json).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return 0


def cmd_partition_dump(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.experiment.seeds[0]
    prepared = prepare_data(cfg, seed)
    out = Path(args.out) if args.out else output_dir(cfg) / f"partition_seed{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    D.write_partition_csv(out, prepared.shards, prepared.train.class_names)
    p = cfg.partition
    stats = {
        "seed": seed,
        "achieved": D.partition_stats(prepared.shards),
        "targets": {"min_samples": p.min_samples, "max_samples": p.max_samples,
                    "min_classes": p.min_classes,
                    "max_classes": p.max_classes if p.max_classes is not None else prepared.train.num_classes},
    }
    stats_path = out.with_name(out.stem + "_stats.json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    a = stats["achieved"]
    print(f"{a['num_clients']} clients: samples {a['samples_min']}..{a['samples_max']} "
          f"(mean {a['samples_mean']:.1f}), classes {a['classes_min']}..{a['classes_max']} "
          f"(mean {a['classes_mean']:.2f})")
    print(f"wrote {out} and {stats_path}")
    return 0


def cmd_delta(args) -> int:
    rows = round_deltas(read_jsonl(args.a), read_jsonl(args.b))
    if args.out:
        write_rows_csv(args.out, rows)
    else:
        write_rows_csv(sys.stdout, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varsfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every (policy, seed) in the config")
    p.add_argument("config")
    p.add_argument("--output-dir", help=f"overrides experiment.output_dir and ${OUTPUT_ENV}")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("complexity", help="parameter, MAC and uplink accounting for the config")
    p.add_argument("config")
    p.add_argument("--val-size", type=int, help="scoring set size (default: implied by the config)")
    p.add_argument("--json", help="write the machine-readable report here instead of stdout")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("partition-dump", help="client sizes, class counts and class-presence matrix")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_partition_dump)

    p = sub.add_parser("delta", help="per-round test-metric differences between two rounds.jsonl files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_delta)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
