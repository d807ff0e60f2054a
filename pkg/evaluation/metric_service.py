"""
Per-sample metric computation: turns (ground truth, prediction) pairs into EvaluationRecords.
"""

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from django.conf import settings
from django.core.exceptions import ValidationError

from posebench.exceptions import PoseBenchError
from geometry.box_metrics import iou_aabb_plus, iou_obb_symmetric
from geometry.core import PointSet, apply_transform, rotation_error_symmetric, translation_error
from geometry.shape_metrics import evaluate_reconstruction
from .aggregation import EvaluationRecord, PrecisionReport, best_worst_of_n, first_hypotheses, precision_table
from .dataset_io import load_ground_truth, load_predictions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodResult:
    """
    Everything computed for one method.

    `report` uses the first hypothesis of every sample; `best_worst` holds
    (spec name, best-of-N, first, worst-of-N) rows for multi-hypothesis runs.
    """
    method: str
    hypothesis_records: dict
    report: PrecisionReport
    best_worst: tuple = ()

    @property
    def records(self) -> list:
        return [record for records in self.hypothesis_records.values() for record in records]


class MetricService:
    """Computes pose, box and shape metrics for every prediction of a method."""

    def __init__(self, samples: int | None = None, seed: int | None = None, frame: str | None = None,
                 delta: float | None = None, iou_steps: int | None = None, workers: int | None = None):
        defaults = settings.POSEBENCH
        self.samples = defaults['SAMPLE_COUNT'] if samples is None else samples
        self.seed = defaults['SEED'] if seed is None else seed
        self.frame = defaults['FRAME'] if frame is None else frame
        self.delta = defaults['FSCORE_DELTA'] if delta is None else delta
        self.iou_steps = defaults['SYMMETRIC_IOU_STEPS'] if iou_steps is None else iou_steps
        self.workers = max(1, defaults['WORKERS'] if workers is None else workers)

    @classmethod
    def from_run_config(cls, run) -> 'MetricService':
        return cls(samples=run.samples, seed=run.seed, frame=run.frame, delta=run.delta, iou_steps=run.iou_steps)

    def sample_seed(self, sample_id: str) -> tuple:
        """Seed of one sample: the run seed plus a stable hash of the sample id."""
        return (int(self.seed), zlib.crc32(sample_id.encode('utf-8')))

    def evaluate_hypothesis(self, sample, hypothesis, index: int = 0) -> EvaluationRecord:
        """
        Metrics of one hypothesis against its ground-truth sample.

        IoU needs a box (given, or the tight box of the predicted shape) and
        F-score needs a shape; metrics without their inputs stay None.
        """
        category = sample.category
        iou = iou_plus = fscore = chamfer = None

        pred_box = hypothesis.resolved_box()
        if pred_box is not None:
            iou = iou_obb_symmetric(sample.box, sample.pose, pred_box, hypothesis.pose, category,
                                    steps=self.iou_steps)
            if hypothesis.shape is not None:
                pred_world = apply_transform(hypothesis.pose, hypothesis.shape)
            else:
                pred_world = PointSet(hypothesis.pose.apply(pred_box.corners()))
            iou_plus = iou_aabb_plus(apply_transform(sample.pose, sample.mesh), pred_world)

        seed = self.sample_seed(sample.sample_id)
        if hypothesis.shape is not None:
            score = evaluate_reconstruction(sample.mesh, sample.pose, hypothesis.shape, hypothesis.pose,
                                            delta=self.delta, frame=self.frame, n=self.samples, seed=seed)
            fscore, chamfer = score.fscore, score.chamfer

        return EvaluationRecord(
            sample_id=sample.sample_id,
            category=category,
            rotation_error=rotation_error_symmetric(sample.pose, hypothesis.pose, category),
            translation_error=translation_error(sample.pose, hypothesis.pose),
            iou=iou,
            fscore=fscore,
            fscore_delta=self.delta,
            iou_plus=iou_plus,
            chamfer=chamfer,
            hypothesis=index,
            metadata={'seed': list(seed), 'frame': self.frame, 'samples': self.samples},
        )

    def evaluate_sample(self, sample, prediction) -> list:
        """Records of every hypothesis for one sample; a single failure record when there is no prediction."""
        if prediction is None:
            return [EvaluationRecord.failure(sample.sample_id, sample.category)]
        try:
            records = [self.evaluate_hypothesis(sample, hypothesis, index)
                       for index, hypothesis in enumerate(prediction.hypotheses)]
        except PoseBenchError as e:
            raise PoseBenchError(f"sample '{sample.sample_id}': {e}") from e
        for record in records:
            if record.has_nan():
                logger.warning(f"sample '{sample.sample_id}' hypothesis {record.hypothesis}: NaN metric")
        return records

    def evaluate(self, samples, predictions) -> dict:
        """
        Records for every ground-truth sample, keyed by sample_id in sample order.

        Samples are spread over `workers` threads; results do not depend on
        the worker count.
        """
        samples = list(samples)

        def evaluate_one(sample):
            return self.evaluate_sample(sample, predictions.get(sample.sample_id))

        if self.workers > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                results = list(executor.map(evaluate_one, samples))
        else:
            results = [evaluate_one(sample) for sample in samples]
        logger.info(f"{predictions.method}: evaluated {len(samples)} samples")
        return {sample.sample_id: records for sample, records in zip(samples, results)}

    def score_method(self, samples, predictions, specs) -> MethodResult:
        """Evaluate one method and aggregate its precision under `specs`."""
        hypothesis_records = self.evaluate(samples, predictions)
        report = precision_table(first_hypotheses(hypothesis_records), specs, predictions.method)
        best_worst = ()
        if predictions.multi_hypothesis:
            best_worst = tuple(
                (row.spec.name, *_best_first_worst(hypothesis_records, row))
                for row in report.rows
            )
            logger.info(f"{predictions.method}: multi-hypothesis predictions, best/worst-of-N computed")
        return MethodResult(predictions.method, hypothesis_records, report, best_worst)


def _best_first_worst(hypothesis_records: dict, row) -> tuple:
    best, worst = best_worst_of_n(hypothesis_records, row.spec)
    return best, row.overall, worst


metric_service = MetricService()


def score_run(run) -> tuple:
    """
    Load ground truth and every predictions root of a validated RunConfig, then score each method.

    Returns:
        tuple: (ground-truth samples, list of MethodResult in --pred order)

    Raises:
        ValidationError: unreadable inputs, duplicate method names
        PoseBenchError: a metric could not be computed
    """
    samples = load_ground_truth(run.gt, run.symmetry)
    prediction_sets = [load_predictions(path, samples) for path in run.pred]
    methods = [predictions.method for predictions in prediction_sets]
    duplicates = sorted({method for method in methods if methods.count(method) > 1})
    if duplicates:
        raise ValidationError(f"duplicate method name(s): {', '.join(duplicates)}")
    invalid = [method for method in methods if not method.replace('-', '').replace('_', '').replace('.', '').isalnum()]
    if invalid:
        raise ValidationError(f"method names may only use letters, digits, '-', '_' and '.': {', '.join(invalid)}")

    service = MetricService.from_run_config(run)
    specs = run.threshold_specs()
    return samples, [service.score_method(samples, predictions, specs) for predictions in prediction_sets]
