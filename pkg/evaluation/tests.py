"""
Test suite for threshold specs, classification and precision aggregation.

This file contains automated tests to verify:
1. ThresholdSpec validation, naming, parsing, presets and A∧B combination
2. classify with inclusive thresholds, failures, NaN and incomplete records
3. Dataset precision overall and per category, including a hand-counted fixture
4. Threshold sweeps and best/worst-of-N precision over multiple hypotheses

Tests use pytest with descriptive error messages and docstrings.
Run with: pytest evaluation/tests.py -v
"""

import math
import random

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from posebench.exceptions import EmptyDatasetError, IncompleteRecordError, InvalidThresholdError
from geometry.core import Category
from evaluation.aggregation import (
    PRESETS, EvaluationRecord, SweepAxis, ThresholdSpec, best_worst_of_n, classify, first_hypotheses,
    get_preset, precision, precision_table, sweep,
)

MUG = Category('mug')
CAN = Category('can', True)
LAPTOP = Category('laptop')
TABLE1_F06 = ThresholdSpec('10deg_2cm_F0.6', max_rotation=10.0, max_translation=0.02, min_fscore=0.6)


def record(sample_id, rotation, translation, fscore=None, iou=None, category=MUG, hypothesis=0):
    return EvaluationRecord(sample_id, category, rotation, translation, iou, fscore, hypothesis=hypothesis)


def hand_counted_records():
    """20 records; exactly 7 are correct under (10°, 2 cm, F ≥ 0.6)."""
    correct = [(5, 0.01, 0.7)] * 5 + [(10.0, 0.02, 0.6), (0.0, 0.0, 1.0)]
    incorrect = [
        (10.5, 0.01, 0.9), (5, 0.0201, 0.9), (5, 0.01, 0.59), (45, 0.1, 0.1), (math.nan, 0.01, 0.9),
        (179, 0.01, 0.9), (5, 0.5, 0.9), (11, 0.03, 0.5), (5, 0.01, 0.0), (20, 0.01, 0.9), (5, 0.05, 0.95),
    ]
    categories = (MUG, CAN, LAPTOP)
    records = [
        record(f"s{index:02d}", *values, category=categories[index % 3])
        for index, values in enumerate(correct + incorrect)
    ]
    records.append(EvaluationRecord.failure('s18', MUG))
    records.append(EvaluationRecord.failure('s19', CAN))
    return records


# =============================================================================
# THRESHOLD SPEC TESTS
# =============================================================================

class ThresholdSpecTests(SimpleTestCase):
    """Test spec validation, naming and parsing."""

    def test_requires_a_threshold(self):
        """Test a spec without any threshold is rejected."""
        with self.assertRaises(InvalidThresholdError):
            ThresholdSpec()

    def test_rejects_out_of_range_values(self):
        """Test rotation outside [0, 180], negative translation and IoU/F-score outside [0, 1]."""
        for arguments in ({'max_rotation': 181.0}, {'max_rotation': -1.0}, {'max_translation': -0.01},
                          {'min_iou': 1.5}, {'min_fscore': -0.1}, {'min_fscore': 0.5, 'fscore_delta': 0.0},
                          {'max_rotation': math.nan}):
            with self.assertRaises(InvalidThresholdError, msg=f"❌ {arguments} was accepted."):
                ThresholdSpec(**arguments)

    def test_default_names(self):
        """Test generated names read like the table headings."""
        spec = ThresholdSpec(max_rotation=5.0, max_translation=0.01, min_fscore=0.8)
        self.assertEqual(spec.name, '5deg_1cm_F0.8', msg=f"❌ Unexpected generated name {spec.name}.")
        self.assertEqual(ThresholdSpec(min_iou=0.5).name, 'IoU50', msg="❌ Unexpected IoU spec name.")

    def test_parse(self):
        """Test key=value parsing and its error messages."""
        spec = ThresholdSpec.parse('rotation=10, translation=0.02, fscore=0.6, name=mine')
        self.assertEqual((spec.name, spec.max_rotation, spec.max_translation, spec.min_fscore),
                         ('mine', 10.0, 0.02, 0.6), msg="❌ Parsed spec does not match its text.")
        for text in ('rotation', 'angle=5', 'rotation=abc', 'rotation=500'):
            with self.assertRaises(ValidationError, msg=f"❌ '{text}' was accepted."):
                ThresholdSpec.parse(text)

    def test_presets(self):
        """Test the Table-1 preset holds its four specs in order."""
        suite = get_preset('real275-suite')
        self.assertEqual([spec.name for spec in suite], ['10deg_2cm', '5deg_1cm', '10deg_2cm_F0.6', '5deg_1cm_F0.8'],
            msg="❌ real275-suite does not list the four specs in order.")
        self.assertEqual(suite[3].min_fscore, 0.8, msg="❌ Last spec should need F ≥ 0.8.")
        self.assertEqual(len(PRESETS['pose-size-suite']), 3, msg="❌ pose-size-suite should hold three IoU specs.")
        with self.assertRaises(ValidationError):
            get_preset('nope')

    def test_combine_is_conjunction(self):
        """Test classify(A∧B) = classify(A) and classify(B) on random records."""
        a = ThresholdSpec(max_rotation=10.0, min_fscore=0.6)
        b = ThresholdSpec(max_rotation=5.0, max_translation=0.02)
        both = a.combine(b)
        self.assertEqual((both.max_rotation, both.max_translation, both.min_fscore), (5.0, 0.02, 0.6),
            msg="❌ Combined spec did not keep the stricter thresholds.")
        rng = np.random.default_rng(0)
        for index in range(200):
            item = record(f"r{index}", rng.uniform(0, 15), rng.uniform(0, 0.04), rng.uniform(0, 1))
            self.assertEqual(classify(item, both), classify(item, a) and classify(item, b),
                msg=f"❌ A∧B disagrees with A and B on {item}.")

    def test_combine_rejects_mismatched_deltas(self):
        """Test two F-score thresholds at different deltas cannot be combined."""
        with self.assertRaises(InvalidThresholdError):
            ThresholdSpec(min_fscore=0.5, fscore_delta=0.01).combine(ThresholdSpec(min_fscore=0.5, fscore_delta=0.02))


# =============================================================================
# CLASSIFY TESTS
# =============================================================================

class ClassifyTests(SimpleTestCase):
    """Test per-record correctness."""

    def test_inclusive_boundaries(self):
        """Test values exactly on every threshold count as correct."""
        self.assertTrue(classify(record('a', 10.0, 0.02, 0.6), TABLE1_F06), msg="❌ Boundary values must pass.")
        self.assertFalse(classify(record('b', 10.0, 0.0200001, 0.6), TABLE1_F06), msg="❌ Over-threshold passed.")

    def test_example_records(self):
        """Test the (3°, 1 cm, F=0.7) and (12°, 1 cm, F=0.9) examples."""
        self.assertTrue(classify(record('a', 3.0, 0.01, 0.7), TABLE1_F06), msg="❌ (3°, 1 cm, 0.7) should pass.")
        self.assertFalse(classify(record('b', 12.0, 0.01, 0.9), TABLE1_F06), msg="❌ (12°, 1 cm, 0.9) should fail.")

    def test_failures_and_nan_are_incorrect(self):
        """Test failed predictions and NaN metrics are never correct."""
        self.assertFalse(classify(EvaluationRecord.failure('a', MUG), TABLE1_F06), msg="❌ A failure passed.")
        self.assertFalse(classify(record('b', math.nan, 0.0, 1.0), TABLE1_F06), msg="❌ A NaN rotation passed.")

    def test_incomplete_record(self):
        """Test a spec needing a missing metric raises."""
        with self.assertRaises(IncompleteRecordError):
            classify(record('a', 1.0, 0.001), TABLE1_F06)
        with self.assertRaises(IncompleteRecordError):
            classify(record('b', 1.0, 0.001, iou=None), ThresholdSpec(min_iou=0.5))

    def test_fscore_delta_must_match(self):
        """Test an F-score taken at another delta is not compared."""
        item = EvaluationRecord('a', MUG, 1.0, 0.001, None, 0.9, fscore_delta=0.02)
        with self.assertRaises(IncompleteRecordError):
            classify(item, TABLE1_F06)


# =============================================================================
# PRECISION TESTS
# =============================================================================

class PrecisionTests(SimpleTestCase):
    """Test dataset precision overall and per category."""

    def test_hand_counted_fixture(self):
        """Test 7 correct out of 20 gives exactly 0.35, failures kept in N."""
        report = precision(hand_counted_records(), TABLE1_F06)
        self.assertEqual(report.overall, 0.35, msg=f"❌ Expected precision 0.35, got {report.overall}.")
        self.assertEqual(report.n, 20, msg="❌ Failures were dropped from N.")
        self.assertEqual(report.failures, ('s18', 's19'), msg="❌ Failures not listed.")
        self.assertEqual(report.nan_samples, ('s11',), msg="❌ NaN sample not listed.")

    def test_per_category(self):
        """Test the per-category precision matches a hand count."""
        records = hand_counted_records()
        report = precision(records, TABLE1_F06)
        for name in report.categories:
            members = [item for item in records if item.category.name == name]
            expected = sum(classify(item, TABLE1_F06) for item in members) / len(members)
            self.assertEqual(report.per_category[name], expected, msg=f"❌ Wrong precision for {name}.")
        self.assertEqual(report.categories, ('can', 'laptop', 'mug'), msg="❌ Categories not sorted.")

    def test_all_perfect_and_all_failed(self):
        """Test precision 1.0 for perfect records and 0.0 for failures."""
        perfect = [record(f"p{index}", 0.0, 0.0, 1.0) for index in range(5)]
        self.assertEqual(precision(perfect, TABLE1_F06).overall, 1.0, msg="❌ Perfect records are not 1.0.")
        failed = [EvaluationRecord.failure(f"f{index}", MUG) for index in range(5)]
        self.assertEqual(precision(failed, TABLE1_F06).overall, 0.0, msg="❌ Failed records are not 0.0.")

    def test_empty_dataset(self):
        """Test an empty record list raises."""
        with self.assertRaises(EmptyDatasetError):
            precision([], TABLE1_F06)

    def test_permutation_invariance(self):
        """Test shuffling records leaves every value unchanged."""
        records = hand_counted_records()
        shuffled = list(records)
        random.Random(4).shuffle(shuffled)
        first, second = precision(records, TABLE1_F06), precision(shuffled, TABLE1_F06)
        self.assertEqual((first.overall, first.per_category), (second.overall, second.per_category),
            msg="❌ Precision depends on record order.")

    def test_monotone_in_thresholds(self):
        """Test loosening a threshold never lowers precision."""
        records = [item for item in hand_counted_records()]
        values = [precision(records, ThresholdSpec(max_rotation=angle, max_translation=0.02, min_fscore=0.6)).overall
                  for angle in (1, 5, 10, 20, 45, 180)]
        self.assertEqual(values, sorted(values), msg=f"❌ Precision is not monotone: {values}.")

    def test_precision_table(self):
        """Test one row per spec in spec order."""
        records = [record(f"s{index}", 4.0 * index, 0.005 * index, 1.0 - 0.1 * index) for index in range(5)]
        table = precision_table(records, get_preset('real275-suite'), method='demo')
        self.assertEqual([row.spec.name for row in table.rows],
                         [spec.name for spec in get_preset('real275-suite')], msg="❌ Rows out of order.")
        self.assertEqual(table.row('10deg_2cm').correct, 3, msg="❌ Expected 3 correct at (10°, 2 cm).")
        self.assertEqual(table.row('5deg_1cm_F0.8').correct, 2, msg="❌ Expected 2 correct at (5°, 1 cm, F0.8).")
        self.assertEqual(table.method, 'demo', msg="❌ Method name not kept.")


# =============================================================================
# SWEEP TESTS
# =============================================================================

class SweepTests(SimpleTestCase):
    """Test precision curves along one threshold axis."""

    def setUp(self):
        rng = np.random.default_rng(5)
        self.records = [
            record(f"s{index}", rng.uniform(0, 30), rng.uniform(0, 0.1), rng.uniform(0, 1), rng.uniform(0, 1))
            for index in range(40)
        ]

    def test_monotone_curves(self):
        """Test curves rise on distance/angle axes and fall on quality axes."""
        grid = [index * 0.05 for index in range(21)]
        for axis, rising in (('rotation', True), ('translation', True), ('fscore', False), ('iou', False)):
            values = [point.precision for point in sweep(self.records, axis, grid if axis != 'rotation'
                                                         else [index * 1.5 for index in range(21)])]
            expected = sorted(values) if rising else sorted(values, reverse=True)
            self.assertEqual(values, expected, msg=f"❌ {axis} curve is not monotone: {values}.")

    def test_step_function(self):
        """Test a rotation sweep over errors {1, 3, 7} steps at each error."""
        records = [record(str(index), angle, 0.0) for index, angle in enumerate((1.0, 3.0, 7.0))]
        curve = sweep(records, 'rotation', [0, 1, 2, 3, 6, 7, 10])
        self.assertEqual([point.precision for point in curve], [0.0, 1 / 3, 1 / 3, 2 / 3, 2 / 3, 1.0, 1.0],
            msg="❌ Rotation sweep is not the expected step function.")

    def test_empty_grid_and_bad_axis(self):
        """Test an empty grid gives an empty curve and unknown axes raise."""
        self.assertEqual(sweep(self.records, SweepAxis.ROTATION, []), [], msg="❌ Empty grid gave points.")
        with self.assertRaises(InvalidThresholdError):
            sweep(self.records, 'scale', [1.0])


# =============================================================================
# MULTI-HYPOTHESIS TESTS
# =============================================================================

class BestWorstTests(SimpleTestCase):
    """Test best/worst-of-N precision against exhaustive enumeration."""

    def test_matches_enumeration(self):
        """Test 10 samples × 3 hypotheses against a direct count."""
        rng = np.random.default_rng(6)
        groups = {
            f"s{sample}": [record(f"s{sample}", rng.uniform(0, 20), rng.uniform(0, 0.04), rng.uniform(0.3, 1.0),
                                  hypothesis=index) for index in range(3)]
            for sample in range(10)
        }
        best, worst = best_worst_of_n(groups, TABLE1_F06)

        def correct(item):
            return item.rotation_error <= 10 and item.translation_error <= 0.02 and item.fscore >= 0.6

        expected_best = sum(any(correct(item) for item in items) for items in groups.values()) / 10
        expected_worst = sum(all(correct(item) for item in items) for items in groups.values()) / 10
        self.assertEqual((best, worst), (expected_best, expected_worst), msg="❌ Best/worst differ from enumeration.")
        first = precision(first_hypotheses(groups), TABLE1_F06).overall
        self.assertTrue(worst <= first <= best, msg=f"❌ Expected worst ≤ first ≤ best, got {worst}, {first}, {best}.")

    def test_single_hypothesis_collapses(self):
        """Test N = 1 gives best = worst = precision."""
        groups = [[item] for item in hand_counted_records()]
        best, worst = best_worst_of_n(groups, TABLE1_F06)
        self.assertEqual((best, worst), (0.35, 0.35), msg="❌ N = 1 should give best = worst = precision.")

    def test_empty_inputs(self):
        """Test empty datasets and samples without hypotheses raise."""
        with self.assertRaises(EmptyDatasetError):
            best_worst_of_n({}, TABLE1_F06)
        with self.assertRaises(IncompleteRecordError):
            best_worst_of_n({'s0': []}, TABLE1_F06)


# =============================================================================
# TEST EXECUTION NOTES
# =============================================================================
"""
To run these tests:

# Run all aggregation tests with verbose output
pytest evaluation/tests.py -v

# Run only the precision tests
pytest evaluation/tests.py::PrecisionTests -v

These tests verify:
✅ Threshold spec validation, presets and A∧B combination
✅ Inclusive per-record classification
✅ Hand-counted precision and per-category values
✅ Monotone threshold sweeps
✅ Best/worst-of-N against enumeration
"""
