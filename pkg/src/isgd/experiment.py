"""Running configured experiments and reading/writing metrics CSVs."""
import csv
import logging
import re
from pathlib import Path

from .analysis import variance_report
from .config import Cell
from .data import load_idx, synth_dataset
from .errors import TrainingDiverged
from .trainer import METRIC_FIELDS, MetricsRecord, train

log = logging.getLogger(__name__)

CSV_HEADER = (
    "iteration", "epoch", "wall_ms", "batch_loss", "ema_loss",
    "var_trace", "max_loss", "tracking_a", "tracking_b", "smoothing_c",
)
SUMMARY_HEADER = (
    "label", "runs", "iterations", "loss_mean", "loss_std", "var_trace_mean",
    "var_trace_std", "iters_to_threshold_median", "iters_to_threshold_reached",
)
_RUN_NAME = re.compile(r"^run_(?P<label>.+)_seed(?P<seed>-?\d+)\.csv$")

assert CSV_HEADER == METRIC_FIELDS


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


class MetricsWriter:
    """Streams records to CSV, flushing after every row."""

    def __init__(self, path):
        self.path = Path(path)
        self._file = open(self.path, "w", newline="")
        self._file.write(",".join(CSV_HEADER) + "\n")

    def __call__(self, record):
        self._file.write(",".join(format_value(getattr(record, f)) for f in CSV_HEADER) + "\n")
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics(records, path):
    with MetricsWriter(path) as w:
        for r in records:
            w(r)


def read_metrics(path):
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        records = []
        for row in reader:
            values = {}
            for name, text in zip(CSV_HEADER, row):
                if text == "":
                    values[name] = None
                elif name == "iteration":
                    values[name] = int(text)
                else:
                    values[name] = float(text)
            records.append(MetricsRecord(**values))
    return records


def run_filename(cell, seed):
    return f"run_{cell.label}_seed{seed}.csv"


def load_dataset(spec):
    ds = spec.dataset
    if ds.source == "idx":
        return load_idx(ds.images, ds.labels)
    return synth_dataset(ds.synth, ds.seed)


def write_summary(report, path):
    with open(path, "w", newline="") as f:
        f.write(",".join(SUMMARY_HEADER) + "\n")
        for row in report.rows:
            f.write(",".join(
                row.label if name == "label" else format_value(getattr(row, name))
                for name in SUMMARY_HEADER
            ) + "\n")


def run_experiment(spec):
    """Train every (cell, seed) pair, write one CSV per run and a summary.

    Returns ``(exit_status, written_paths)``; the status is nonzero iff some
    run diverged.
    """
    out = Path(spec.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    dataset = load_dataset(spec)
    written = []
    logs = {}
    failed = 0
    for cell in spec.cells:
        for seed in spec.seeds:
            path = out / run_filename(cell, seed)
            log.info("training %s seed %d -> %s", cell.label, seed, path)
            try:
                with MetricsWriter(path) as writer:
                    result = train(spec.run_config(cell, seed), dataset, sink=writer)
            except OSError as exc:
                raise OSError(f"writing {path}: {exc}") from exc
            except TrainingDiverged as exc:
                log.error("%s seed %d diverged at iteration %d: %s", cell.label, seed, exc.iteration, exc.cause)
                failed += 1
                written.append(path)
                continue
            written.append(path)
            logs.setdefault(cell.label, []).append(result.records)
    if logs:
        summary = out / "summary.csv"
        report = variance_report(logs, spec.analysis_window, spec.analysis_threshold)
        write_summary(report, summary)
        written.append(summary)
    return (1 if failed else 0), written


def collect_runs(directory):
    """Group the run CSVs of a directory by cell label."""
    groups = {}
    for path in sorted(Path(directory).glob("run_*.csv")):
        m = _RUN_NAME.match(path.name)
        if m:
            groups.setdefault(m.group("label"), []).append(read_metrics(path))
    return groups


__all__ = [
    "Cell", "CSV_HEADER", "MetricsWriter", "collect_runs", "read_metrics",
    "run_experiment", "write_metrics", "write_summary",
]
