"""
Per-sample correctness and dataset precision.

A record is correct under a ThresholdSpec when every threshold the spec sets
holds (inclusive comparisons). Precision is the fraction of correct records;
failed predictions and NaN metrics stay in the denominator as incorrect.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from django.core.exceptions import ValidationError

from posebench.exceptions import EmptyDatasetError, IncompleteRecordError, InvalidThresholdError, PoseBenchError
from geometry.core import Category

logger = logging.getLogger(__name__)

DEFAULT_FSCORE_DELTA = 0.01


def _number(value: float) -> str:
    return f"{value:g}"


# =============================================================================
# THRESHOLDS
# =============================================================================

@dataclass(frozen=True)
class ThresholdSpec:
    """
    Conjunction of thresholds on rotation (degrees), translation (meters),
    IoU and F-score. Unset thresholds are not checked; at least one is set.
    """
    name: str = ''
    max_rotation: float | None = None
    max_translation: float | None = None
    min_iou: float | None = None
    min_fscore: float | None = None
    fscore_delta: float = DEFAULT_FSCORE_DELTA

    def __post_init__(self):
        values = (self.max_rotation, self.max_translation, self.min_iou, self.min_fscore)
        if all(value is None for value in values):
            raise InvalidThresholdError("a threshold spec needs at least one threshold")
        if any(value is not None and not math.isfinite(value) for value in values):
            raise InvalidThresholdError(f"thresholds must be finite numbers, got {values}")
        if self.max_rotation is not None and not 0.0 <= self.max_rotation <= 180.0:
            raise InvalidThresholdError(f"max_rotation must be within [0, 180] degrees, got {self.max_rotation}")
        if self.max_translation is not None and self.max_translation < 0.0:
            raise InvalidThresholdError(f"max_translation must be non-negative, got {self.max_translation}")
        for label, value in (('min_iou', self.min_iou), ('min_fscore', self.min_fscore)):
            if value is not None and not 0.0 <= value <= 1.0:
                raise InvalidThresholdError(f"{label} must be within [0, 1], got {value}")
        if not self.fscore_delta > 0.0:
            raise InvalidThresholdError(f"fscore_delta must be positive, got {self.fscore_delta}")
        if not self.name:
            object.__setattr__(self, 'name', self.default_name())

    def default_name(self) -> str:
        parts = []
        if self.max_rotation is not None:
            parts.append(f"{_number(self.max_rotation)}deg")
        if self.max_translation is not None:
            parts.append(f"{_number(self.max_translation * 100.0)}cm")
        if self.min_iou is not None:
            parts.append(f"IoU{_number(self.min_iou * 100.0)}")
        if self.min_fscore is not None:
            parts.append(f"F{_number(self.min_fscore)}")
        return '_'.join(parts)

    @classmethod
    def parse(cls, text: str) -> ThresholdSpec:
        """
        Build a spec from `key=value` pairs separated by commas.

        Keys: name, rotation (degrees), translation (meters), iou, fscore,
        delta (meters). Example: "rotation=10,translation=0.02,fscore=0.6".
        """
        keys = {
            'rotation': 'max_rotation', 'translation': 'max_translation',
            'iou': 'min_iou', 'fscore': 'min_fscore', 'delta': 'fscore_delta',
        }
        arguments = {}
        for item in filter(None, (part.strip() for part in text.split(','))):
            key, separator, value = item.partition('=')
            key = key.strip()
            if not separator:
                raise ValidationError(f"threshold spec '{text}': expected key=value, got '{item}'")
            if key == 'name':
                arguments['name'] = value.strip()
                continue
            if key not in keys:
                raise ValidationError(
                    f"threshold spec '{text}': unknown key '{key}', expected one of name, {', '.join(keys)}"
                )
            try:
                arguments[keys[key]] = float(value)
            except ValueError:
                raise ValidationError(f"threshold spec '{text}': '{key}' is not a number") from None
        try:
            return cls(**arguments)
        except InvalidThresholdError as e:
            raise ValidationError(f"threshold spec '{text}': {e}") from None

    def combine(self, other: ThresholdSpec) -> ThresholdSpec:
        """The spec A∧B: every threshold of both, keeping the stricter of shared ones."""
        if self.fscore_delta != other.fscore_delta and None not in (self.min_fscore, other.min_fscore):
            raise InvalidThresholdError("cannot combine F-score thresholds taken at different deltas")

        def stricter(first, second, pick):
            if first is None:
                return second
            if second is None:
                return first
            return pick(first, second)

        delta = self.fscore_delta if self.min_fscore is not None else other.fscore_delta
        return ThresholdSpec(
            name=f"{self.name}+{other.name}",
            max_rotation=stricter(self.max_rotation, other.max_rotation, min),
            max_translation=stricter(self.max_translation, other.max_translation, min),
            min_iou=stricter(self.min_iou, other.min_iou, max),
            min_fscore=stricter(self.min_fscore, other.min_fscore, max),
            fscore_delta=delta,
        )

    def conditions(self) -> list:
        """(record field, limit, is_upper_bound) for every threshold that is set."""
        conditions = []
        if self.max_rotation is not None:
            conditions.append(('rotation_error', self.max_rotation, True))
        if self.max_translation is not None:
            conditions.append(('translation_error', self.max_translation, True))
        if self.min_iou is not None:
            conditions.append(('iou', self.min_iou, False))
        if self.min_fscore is not None:
            conditions.append(('fscore', self.min_fscore, False))
        return conditions

    def as_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    # Precision at varying position, orientation and F-score thresholds.
    'real275-suite': (
        ThresholdSpec('10deg_2cm', max_rotation=10.0, max_translation=0.02),
        ThresholdSpec('5deg_1cm', max_rotation=5.0, max_translation=0.01),
        ThresholdSpec('10deg_2cm_F0.6', max_rotation=10.0, max_translation=0.02, min_fscore=0.6),
        ThresholdSpec('5deg_1cm_F0.8', max_rotation=5.0, max_translation=0.01, min_fscore=0.8),
    ),
    'pose-size-suite': (
        ThresholdSpec('IoU25', min_iou=0.25),
        ThresholdSpec('IoU50', min_iou=0.5),
        ThresholdSpec('IoU75', min_iou=0.75),
    ),
}


def get_preset(name: str) -> tuple:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset '{name}', expected one of {', '.join(sorted(PRESETS))}") from None


# =============================================================================
# RECORDS
# =============================================================================

@dataclass(frozen=True)
class EvaluationRecord:
    """
    Metric values of one (ground truth, prediction) pair.

    `failed` marks a sample the method produced no usable prediction for; it
    is classified incorrect under every spec. `fscore_delta` is the distance
    threshold the F-score was computed at.
    """
    sample_id: str
    category: Category
    rotation_error: float | None = None
    translation_error: float | None = None
    iou: float | None = None
    fscore: float | None = None
    fscore_delta: float | None = DEFAULT_FSCORE_DELTA
    iou_plus: float | None = None
    chamfer: float | None = None
    failed: bool = False
    hypothesis: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for label in ('rotation_error', 'translation_error', 'chamfer'):
            value = getattr(self, label)
            if value is not None and value < 0.0:
                raise PoseBenchError(f"record '{self.sample_id}': {label} must be non-negative, got {value}")

    @classmethod
    def failure(cls, sample_id: str, category: Category, reason: str = 'missing prediction') -> EvaluationRecord:
        return cls(sample_id, category, failed=True, metadata={'failure': reason})

    def has_nan(self) -> bool:
        values = (self.rotation_error, self.translation_error, self.iou, self.fscore)
        return any(value is not None and math.isnan(value) for value in values)


def classify(record: EvaluationRecord, spec: ThresholdSpec) -> bool:
    """
    True iff every threshold of `spec` holds for `record`.

    Raises:
        IncompleteRecordError: the record lacks a metric the spec thresholds,
            or its F-score was taken at a different delta
    """
    if record.failed:
        return False
    conditions = spec.conditions()
    for metric, _, _ in conditions:
        if getattr(record, metric) is None:
            raise IncompleteRecordError(f"incomplete record: '{record.sample_id}' has no {metric}")
    if spec.min_fscore is not None and record.fscore_delta is not None \
            and not math.isclose(record.fscore_delta, spec.fscore_delta):
        raise IncompleteRecordError(
            f"incomplete record: '{record.sample_id}' has F-score at delta {record.fscore_delta}, "
            f"spec '{spec.name}' needs {spec.fscore_delta}"
        )
    for metric, limit, upper in conditions:
        value = getattr(record, metric)
        if math.isnan(value):
            return False
        if upper and not value <= limit:
            return False
        if not upper and not value >= limit:
            return False
    return True


# =============================================================================
# PRECISION
# =============================================================================

@dataclass(frozen=True)
class PrecisionRow:
    """Precision of one threshold spec, overall and per category."""
    spec: ThresholdSpec
    overall: float
    correct: int
    per_category: dict


@dataclass(frozen=True)
class PrecisionReport:
    """
    Precision for one or more threshold specs over the same records.

    `failures` lists the sample ids without a usable prediction and
    `nan_samples` the ones with NaN metrics; both count as incorrect.
    """
    rows: tuple
    n: int
    categories: tuple
    failures: tuple = ()
    nan_samples: tuple = ()
    method: str = ''

    @property
    def overall(self) -> float:
        return self.rows[0].overall

    @property
    def per_category(self) -> dict:
        return self.rows[0].per_category

    def row(self, spec_name: str) -> PrecisionRow:
        for row in self.rows:
            if row.spec.name == spec_name:
                return row
        raise KeyError(spec_name)


def _precision_row(records: Sequence[EvaluationRecord], spec: ThresholdSpec, categories: tuple) -> PrecisionRow:
    outcomes = [classify(record, spec) for record in records]
    totals = {name: 0 for name in categories}
    hits = {name: 0 for name in categories}
    for record, correct in zip(records, outcomes):
        totals[record.category.name] += 1
        hits[record.category.name] += int(correct)
    correct = sum(outcomes)
    return PrecisionRow(
        spec=spec,
        overall=correct / len(records),
        correct=correct,
        per_category={name: hits[name] / totals[name] for name in categories},
    )


def precision_table(records: Iterable[EvaluationRecord], specs: Sequence[ThresholdSpec],
                    method: str = '') -> PrecisionReport:
    """
    Precision of `records` under every spec in `specs`, one row per spec.

    Raises:
        EmptyDatasetError: no records
    """
    records = list(records)
    if not records:
        raise EmptyDatasetError()
    if not specs:
        raise InvalidThresholdError("at least one threshold spec is required")
    categories = tuple(sorted({record.category.name for record in records}))
    failures = tuple(sorted(record.sample_id for record in records if record.failed))
    nan_samples = tuple(sorted(record.sample_id for record in records if not record.failed and record.has_nan()))
    if failures:
        logger.warning(f"{method or 'method'}: {len(failures)} sample(s) without a prediction counted as incorrect")
    if nan_samples:
        logger.warning(f"{method or 'method'}: {len(nan_samples)} sample(s) with NaN metrics counted as incorrect")

    rows = tuple(_precision_row(records, spec, categories) for spec in specs)
    return PrecisionReport(rows, len(records), categories, failures, nan_samples, method)


def precision(records: Iterable[EvaluationRecord], spec: ThresholdSpec) -> PrecisionReport:
    """Fraction of records classified correct under `spec`, overall and per category."""
    return precision_table(records, [spec])


# =============================================================================
# THRESHOLD SWEEPS
# =============================================================================

class SweepAxis(str, Enum):
    TRANSLATION = 'translation'
    ROTATION = 'rotation'
    FSCORE = 'fscore'
    IOU = 'iou'

    @property
    def spec_field(self) -> str:
        return {
            SweepAxis.TRANSLATION: 'max_translation',
            SweepAxis.ROTATION: 'max_rotation',
            SweepAxis.FSCORE: 'min_fscore',
            SweepAxis.IOU: 'min_iou',
        }[self]

    @classmethod
    def parse(cls, value) -> SweepAxis:
        try:
            return cls(value)
        except ValueError:
            raise InvalidThresholdError(
                f"invalid sweep axis '{value}', expected one of {', '.join(axis.value for axis in cls)}"
            ) from None


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    precision: float


def sweep(records: Iterable[EvaluationRecord], axis, grid: Sequence[float],
          fscore_delta: float = DEFAULT_FSCORE_DELTA) -> list[SweepPoint]:
    """
    Precision with a single threshold on `axis` for every value of `grid`.

    Curves grow with the threshold on the translation and rotation axes and
    shrink on the F-score and IoU axes. An empty grid gives an empty curve.
    """
    axis = SweepAxis.parse(axis)
    records = list(records)
    curve = []
    for value in grid:
        spec = ThresholdSpec(**{'name': f"{axis.value}={_number(value)}", axis.spec_field: float(value),
                                'fscore_delta': fscore_delta})
        curve.append(SweepPoint(float(value), precision(records, spec).overall))
    return curve


# =============================================================================
# MULTI-HYPOTHESIS PRECISION
# =============================================================================

def best_worst_of_n(hypothesis_records, spec: ThresholdSpec) -> tuple[float, float]:
    """
    Precision counting a sample correct if any (best) or all (worst) of its hypotheses are.

    Args:
        hypothesis_records: mapping sample_id -> records, or a sequence of
            per-sample record lists
        spec: thresholds to classify each hypothesis with

    Returns:
        tuple: (best_precision, worst_precision)
    """
    groups = hypothesis_records.items() if isinstance(hypothesis_records, Mapping) else enumerate(hypothesis_records)
    groups = [(key, list(records)) for key, records in groups]
    if not groups:
        raise EmptyDatasetError()
    best = worst = 0
    for key, records in groups:
        if not records:
            raise IncompleteRecordError(f"incomplete record: sample '{key}' has no hypotheses")
        outcomes = [classify(record, spec) for record in records]
        best += any(outcomes)
        worst += all(outcomes)
    return best / len(groups), worst / len(groups)


def first_hypotheses(hypothesis_records) -> list:
    """The first hypothesis of every sample, in input order."""
    groups = hypothesis_records.values() if isinstance(hypothesis_records, Mapping) else hypothesis_records
    return [list(records)[0] for records in groups if records]
