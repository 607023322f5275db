"""Seeded multi-run experiment execution and file emission.

One experiment entry trains once per seed; a diverged seed is recorded as a
failed run instead of aborting the sweep. Sweep entries are independent and
may run in parallel worker processes; each entry owns its output directory,
so concurrency never interleaves bytes, and the merged summary is written
after all entries complete.
"""

import concurrent.futures
import logging
import time
from pathlib import Path

from . import __version__
from .config import expand_sweep
from .federation import DivergenceError, run_training
from .report import (CSV_HEADER, ExperimentReport, csv_rows, dump_json,
                     jsonl_rows, summary_table)

log = logging.getLogger(__name__)


def _entry_num_sets(config):
    sets = config.sets_per_client
    return sets if isinstance(sets, int) else max(sets)


def run_experiment(config, entry_id=None, out_dir=None, timing=False,
                   formats=("csv", "json")):
    """Train once per seed and aggregate. With ``out_dir`` set, round logs
    are appended after every finished seed so partial progress survives."""
    entry_id = entry_id or "run-00"
    report = ExperimentReport(
        entry_id=entry_id, method=config.method,
        num_sets=_entry_num_sets(config), rounds=config.rounds,
        config=config.echo(), seeds=list(config.seeds), version=__version__)

    csv_path = jsonl_path = entry_dir = None
    if out_dir is not None:
        entry_dir = Path(out_dir) / entry_id
        entry_dir.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            csv_path = entry_dir / "rounds.csv"
            csv_path.write_text(CSV_HEADER + "\n", encoding="utf-8")
        if "json" in formats:
            jsonl_path = entry_dir / "rounds.jsonl"
            jsonl_path.write_text("", encoding="utf-8")

    started = time.perf_counter()
    for seed in config.seeds:
        try:
            result = run_training(config, seed)
        except DivergenceError as exc:
            log.warning("entry %s seed %s failed: %s", entry_id, seed, exc)
            report.failures[seed] = str(exc)
            report.final_errors[seed] = None
            continue
        report.final_errors[seed] = result.final_error
        report.curves[seed] = [m.test_error for m in result.metrics]
        report.train_curves[seed] = [m.train_loss for m in result.metrics]
        report.client_info[seed] = result.client_info
        if csv_path is not None:
            with open(csv_path, "a", encoding="utf-8") as f:
                f.write("\n".join(csv_rows(config.method, seed, result.metrics,
                                           timing)) + "\n")
        if jsonl_path is not None:
            with open(jsonl_path, "a", encoding="utf-8") as f:
                f.write("\n".join(jsonl_rows(config.method, seed, result.metrics,
                                             timing)) + "\n")
    if timing:
        report.total_wall_ms = (time.perf_counter() - started) * 1e3

    if entry_dir is not None and "json" in formats:
        (entry_dir / "report.json").write_text(
            dump_json(report.to_json_obj()) + "\n", encoding="utf-8")
    return report


def _run_entry(args):
    entry_id, config, out_dir, timing, formats = args
    return run_experiment(config, entry_id=entry_id, out_dir=out_dir,
                          timing=timing, formats=formats)


def run_sweep(config, out_dir, formats=("csv", "json", "table"), workers=1,
              timing=False):
    """Execute every sweep entry, emit per-entry files plus the merged
    summary table; returns (reports, exit_code)."""
    entries = expand_sweep(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(entry_id, sub, out_dir, timing, tuple(formats))
            for entry_id, sub in entries]
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_entry, jobs))
    else:
        reports = [_run_entry(job) for job in jobs]

    if "table" in formats:
        (out / "summary.txt").write_text(summary_table(reports), encoding="utf-8")
    failed = sum(len(r.failures) for r in reports)
    return reports, (2 if failed else 0)
