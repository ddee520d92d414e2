"""Command-line front end: generate -> extract -> run -> report.

Exit status is 0 on success, 1 on runtime or IO errors and 2 on invalid
configuration.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .dataset import DataError, EventClass, fmt_float, read_events, read_features, read_results, write_events, write_features
from .experiment import SplitError, aggregate, run_experiment, summary_table, write_aggregate
from .modal import ModalError, extract_dataset
from .synth import generate_dataset

log = logging.getLogger("eventssl")


class RuntimeFailure(RuntimeError):
    """Runtime or IO failure; exit status 1."""


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out)
    cfg.write(out / "generate.config.json")
    records = generate_dataset(cfg.counts, cfg.generator, cfg.signatures, master_seed=cfg.seed)
    manifest = write_events(records, out / "events")
    labels = np.array([r.label for r in records])
    for c in EventClass:
        if np.any(labels == c):
            print(f"{c.name}: {int(np.sum(labels == c))}")
    print(f"total: {len(records)} events -> {manifest}")
    return 0


def cmd_extract(args, cfg: RunConfig) -> int:
    records = read_events(args.events)
    for rec in records:
        if rec.m < cfg.extraction.m_prime:
            raise ConfigError(f"event {rec.event_id} has m={rec.m} PMUs, fewer than m_prime={cfg.extraction.m_prime}")
    out = _out_dir(args.out)
    cfg.write(out / "extract.config.json")
    ds, diags = extract_dataset(records, cfg.extraction)
    path = write_features(ds, out / "features.csv")
    with open(out / "reconstruction.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(diags[0])
        w.writerow(cols)
        for d in diags:
            w.writerow([fmt_float(d[c]) if isinstance(d[c], float) else d[c] for c in cols])
    print(f"{ds.n} events x {ds.d} features -> {path}")
    return 0


def cmd_run(args, cfg: RunConfig) -> int:
    ds = read_features(args.features)
    plan = cfg.plan
    n_D = ds.n
    try:
        plan.validate_for(n_D)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"n_D={n_D} n_T={plan.n_T(n_D)} n_V={plan.n_V(n_D)} n_U={plan.n_U(n_D)} "
          f"n_S={plan.n_S(n_D)} cells={plan.total_cells(n_D)}")
    if args.dry_run:
        return 0
    out = _out_dir(args.out)
    cfg.write(out / "run.config.json")
    results = out / "results.csv"
    existing = read_results(results) if results.exists() else []
    if existing:
        print(f"resuming: {len(existing)} cells already in {results}")

    def progress(i, n):
        log.info("work unit %d/%d done", i, n)

    records = run_experiment(ds, plan, results, existing, jobs=args.jobs, progress=progress)
    n_failed = sum(r.failed for r in records)
    print(f"{len(records)} cells ({n_failed} failed) -> {results}")
    return 0


def cmd_report(args, cfg: "RunConfig | None") -> int:
    records = read_results(args.results)
    rows = aggregate(records)
    if not rows:
        raise RuntimeFailure(f"{args.results}: no successful cells to report")
    out = _out_dir(args.out)
    path = write_aggregate(rows, out / "aggregate.csv")
    text, _ = summary_table(rows)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    print(f"aggregate -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventssl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured master seed")

    p = sub.add_parser("generate", help="synthesize labeled PMU events")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="modal features from an events manifest")
    common(p)
    p.add_argument("--events", required=True, help="events manifest.json")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run", help="run the semi-supervised benchmark grid")
    common(p)
    p.add_argument("--features", required=True, help="features CSV")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--dry-run", action="store_true", help="print protocol sizes and exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate results into percentiles")
    common(p, config_required=False)
    p.add_argument("--results", required=True, help="results CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.command, args.seed) if args.config else None
        return args.func(args, cfg)
    except (ConfigError, SplitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeFailure, DataError, ModalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
