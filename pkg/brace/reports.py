"""
Report files. Every writer is deterministic: equal inputs give byte-identical
files (fixed column order, sorted summary keys, no timestamps).
"""

import csv

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .harness import RoundRecord, RunResult, SeedRuns
from .ring import dump_trace

ROUND_COLUMNS = ('round', 'loss', 'grad_norm', 'test_error', 'bits_total')


def _plain(value: Any) -> Any:
    """Builtin equivalents of numpy scalars and containers, for safe_dump."""
    match value:
        case Mapping():
            return {str(k): _plain(v) for k, v in value.items()}
        case list() | tuple():
            return [_plain(v) for v in value]
        case np.ndarray():
            return _plain(value.tolist())
        case np.generic():
            return value.item()
        case Path():
            return str(value)
    return value


def write_rounds_csv(records: Sequence[RoundRecord], path: Path, every: int = 1):
    """One row per `every` rounds, plus the last round."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(ROUND_COLUMNS)
        for i, record in enumerate(records):
            if i % every == 0 or i == len(records) - 1:
                writer.writerow([getattr(record, column) for column in ROUND_COLUMNS])


def write_summary(summary: Mapping[str, Any], path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as fp:
        yaml.safe_dump(_plain(summary), fp, sort_keys=True, default_flow_style=False)


def write_table(rows: Iterable[Any], path: Path):
    """Long-format CSV of dataclass rows, columns in field order."""
    rows = list(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        if not rows:
            return
        if not is_dataclass(rows[0]):
            raise TypeError(f"table rows must be dataclasses, got {type(rows[0]).__name__}")
        columns = [f.name for f in fields(rows[0])]
        writer.writerow(columns)
        for row in rows:
            values = asdict(row)
            writer.writerow(['' if values[c] is None else values[c] for c in columns])


def write_trace(result: RunResult, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as fp:
        dump_trace(result.trace, fp)


def write_run(runs: SeedRuns, output: Path, extra: Mapping[str, Any] | None = None) -> Path:
    """Per-seed round CSVs (and traces), then one summary.yaml; returns the summary path."""
    config = runs.config
    for result in runs.results:
        seed_dir = output / f"seed_{result.seed}"
        write_rounds_csv(result.records, seed_dir / 'rounds.csv', config.record_every)
        if config.trace:
            write_trace(result, seed_dir / 'trace.jsonl')

    summary = {**runs.summary(), **(extra or {})}
    summary['config'] = config.document
    path = output / 'summary.yaml'
    write_summary(summary, path)
    return path
