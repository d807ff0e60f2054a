"""
CSV and JSON writers for precision tables, per-sample records and curves.

Every writer is deterministic: fixed column order, floats with 17 significant
digits, '\n' line endings, sorted JSON keys and no timestamps. Re-running a
command with the same inputs and seeds produces byte-identical files.
"""

import csv
import json
import logging
import math
from pathlib import Path

from django.core.exceptions import ValidationError

import posebench
from .aggregation import PrecisionReport

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'summary.csv'
PRECISION_FILE = 'precision.csv'
RECORDS_FILE = 'records.csv'
BEST_WORST_FILE = 'best_worst.csv'
METADATA_FILE = 'report.json'

RECORD_COLUMNS = (
    'sample_id', 'category', 'hypothesis', 'failed', 'rotation_error_deg', 'translation_error_m',
    'iou', 'iou_plus', 'fscore', 'fscore_delta_m', 'chamfer_m',
)


def format_value(value) -> str:
    """Cell text: '' for missing values, 'nan' for NaN, 17 significant digits for floats."""
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return 'nan'
        return format(value, '.17g')
    return str(value)


def write_csv(path, header, rows) -> Path:
    """
    Write one CSV file, creating parent directories.

    Raises:
        ValidationError: the path cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', newline='', encoding='utf-8') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(value) for value in row])
    except OSError as e:
        raise ValidationError(f"cannot write {path}: {e}") from None
    logger.info(f"wrote {path}")
    return path


def write_json(path, document) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as e:
        raise ValidationError(f"cannot write {path}: {e}") from None
    logger.info(f"wrote {path}")
    return path


# =============================================================================
# PRECISION TABLES
# =============================================================================

def write_summary_table(path, reports) -> Path:
    """One row per threshold spec, one precision column per method (Table-1 layout)."""
    reports = list(reports)
    header = ['spec'] + [report.method for report in reports]
    spec_names = [row.spec.name for row in reports[0].rows]
    rows = [[name] + [report.row(name).overall for report in reports] for name in spec_names]
    return write_csv(path, header, rows)


def write_category_table(path, report: PrecisionReport) -> Path:
    """One row per threshold spec with overall and per-category precision (Table-2 layout)."""
    header = ['spec', 'overall'] + list(report.categories) + ['correct', 'n', 'failures']
    rows = [
        [row.spec.name, row.overall] + [row.per_category[name] for name in report.categories]
        + [row.correct, report.n, len(report.failures)]
        for row in report.rows
    ]
    return write_csv(path, header, rows)


def record_row(record) -> list:
    return [
        record.sample_id, record.category.name, record.hypothesis, record.failed,
        record.rotation_error, record.translation_error, record.iou, record.iou_plus,
        record.fscore, record.fscore_delta if record.fscore is not None else None, record.chamfer,
    ]


def write_records(path, records) -> Path:
    """Per-sample metric values, ordered by sample id then hypothesis index."""
    ordered = sorted(records, key=lambda record: (record.sample_id, record.hypothesis))
    return write_csv(path, RECORD_COLUMNS, [record_row(record) for record in ordered])


def write_best_worst(path, rows) -> Path:
    """Rows of (spec name, best-of-N, first hypothesis, worst-of-N)."""
    return write_csv(path, ('spec', 'best', 'first', 'worst'), rows)


# =============================================================================
# CURVES
# =============================================================================

def write_curve(path, axis: str, curves: dict) -> Path:
    """
    Precision against threshold, one column per method.

    Args:
        axis: sweep axis name, used as the first column header
        curves: method name -> list of SweepPoint, all on the same grid
    """
    methods = list(curves)
    grid = [point.threshold for point in curves[methods[0]]] if methods else []
    rows = [[value] + [curves[method][index].precision for method in methods] for index, value in enumerate(grid)]
    return write_csv(path, [axis] + methods, rows)


AXIS_DISTRIBUTION_COLUMNS = (
    'category', 'elevation_min_deg', 'elevation_max_deg', 'azimuth_min_deg', 'azimuth_max_deg', 'count', 'fraction',
)


def write_axis_distribution(path, distribution) -> Path:
    """One row per (category, elevation bin, azimuth bin) of an AxisDistribution, 'all' last."""
    return write_csv(path, AXIS_DISTRIBUTION_COLUMNS, distribution.rows())


def write_convergence(path, rows) -> Path:
    return write_csv(path, ('n_samples', 'chamfer_m', 'fscore'),
                     [[row.n_samples, row.chamfer, row.fscore] for row in rows])


# =============================================================================
# REPORT BUNDLE
# =============================================================================

def report_summary(report: PrecisionReport) -> dict:
    return {
        'n': report.n,
        'categories': list(report.categories),
        'failures': list(report.failures),
        'nan_samples': list(report.nan_samples),
        'precision': {
            row.spec.name: {'overall': row.overall, 'correct': row.correct, 'per_category': row.per_category}
            for row in report.rows
        },
    }


def report_metadata(reports, run=None, extra: dict | None = None) -> dict:
    """Thresholds, seeds, sample counts, frame and toolkit version of a run."""
    reports = list(reports)
    metadata = {
        'toolkit': 'posebench',
        'version': posebench.__version__,
        'thresholds': [row.spec.as_dict() for row in reports[0].rows] if reports else [],
        'methods': {report.method: report_summary(report) for report in reports},
    }
    if run is not None:
        metadata['config'] = run.as_dict()
    metadata.update(extra or {})
    return metadata


def write_report(reports, out_dir, records_by_method: dict | None = None, curves: dict | None = None,
                 run=None, extra: dict | None = None) -> list[Path]:
    """
    Write the full report bundle of a run under `out_dir`.

    Files: summary.csv, <method>/precision.csv, <method>/records.csv,
    sweep_<axis>.csv for every curve set and report.json.

    Args:
        reports: one PrecisionReport per method
        records_by_method: method -> records, written as records.csv
        curves: axis -> {method -> list of SweepPoint}
        run: RunConfig echoed into report.json

    Returns:
        list: paths written, in write order
    """
    out_dir = Path(out_dir)
    reports = list(reports)
    written = []
    if reports:
        written.append(write_summary_table(out_dir / SUMMARY_FILE, reports))
    for report in reports:
        written.append(write_category_table(out_dir / report.method / PRECISION_FILE, report))
        if records_by_method and report.method in records_by_method:
            written.append(write_records(out_dir / report.method / RECORDS_FILE, records_by_method[report.method]))
    for axis, method_curves in sorted((curves or {}).items()):
        written.append(write_curve(out_dir / f"sweep_{axis}.csv", axis, method_curves))
    written.append(write_json(out_dir / METADATA_FILE, report_metadata(reports, run, extra)))
    return written
