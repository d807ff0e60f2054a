"""
Up-axis orientation statistics of a ground-truth dataset.

Every sample's up axis (the category symmetry axis, +y for categories
without one) is rotated by the sample pose into the camera frame and binned
by elevation and azimuth. Camera axes are +x right, +y down and +z forward:

    elevation = atan2(-u_y, |(u_x, u_z)|)   in [-90, 90] degrees
    azimuth   = atan2(u_x, -u_z)            in (-180, 180] degrees

An object standing upright in front of a level camera has elevation 90.
Azimuth 0 points at the camera and 90 to the image right; it is 0 for
vertical axes. A dataset of tabletop scenes fills only the top elevation
bins, one with free-hand orientations spreads over the whole sphere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from posebench.exceptions import EmptyDatasetError
from geometry.core import Category, RigidTransform

logger = logging.getLogger(__name__)

ALL_CATEGORIES = 'all'
ELEVATION_RANGE = (-90.0, 90.0)
AZIMUTH_RANGE = (-180.0, 180.0)
DEFAULT_ELEVATION_STEP = 30.0
DEFAULT_AZIMUTH_STEP = 45.0


def up_axis_angles(pose: RigidTransform, category: Category) -> tuple[float, float]:
    """(elevation, azimuth) in degrees of the category up axis under `pose`."""
    up = pose.rotation @ category.axis
    horizontal = math.hypot(up[0], up[2])
    elevation = math.degrees(math.atan2(-up[1], horizontal))
    if horizontal < 1e-9:
        return elevation, 0.0
    return elevation, math.degrees(math.atan2(up[0], -up[2]))


def bin_edges(value_range: tuple, step: float, label: str) -> np.ndarray:
    """
    Edges of equal bins of width `step` covering `value_range`.

    Raises:
        ValidationError: step is not positive or does not divide the range
    """
    low, high = value_range
    count = round((high - low) / step) if step > 0.0 else 0
    if count < 1 or abs(count * step - (high - low)) > 1e-9:
        raise ValidationError(f"{label} step must be positive and divide {high - low:g} degrees, got {step:g}")
    return np.linspace(low, high, count + 1)


@dataclass(frozen=True, eq=False)
class AxisDistribution:
    """
    Histogram of up-axis directions.

    `counts` maps each category name, plus 'all', to an integer array of
    shape (elevation bins, azimuth bins).
    """
    elevation_edges: np.ndarray
    azimuth_edges: np.ndarray
    counts: dict
    n: int

    def categories(self) -> list:
        return sorted(name for name in self.counts if name != ALL_CATEGORIES) + [ALL_CATEGORIES]

    def count(self, category: str, elevation: float, azimuth: float) -> int:
        """Count of the bin holding (elevation, azimuth); the top edges belong to the last bins."""
        row = min(np.searchsorted(self.elevation_edges, elevation, side='right') - 1, len(self.elevation_edges) - 2)
        column = min(np.searchsorted(self.azimuth_edges, azimuth, side='right') - 1, len(self.azimuth_edges) - 2)
        return int(self.counts[category][row, column])

    def rows(self) -> list:
        """(category, elevation bin, azimuth bin, count, fraction) rows; fractions are per category."""
        rows = []
        for name in self.categories():
            counts = self.counts[name]
            total = int(counts.sum())
            for i, j in np.ndindex(counts.shape):
                rows.append([
                    name,
                    float(self.elevation_edges[i]), float(self.elevation_edges[i + 1]),
                    float(self.azimuth_edges[j]), float(self.azimuth_edges[j + 1]),
                    int(counts[i, j]), int(counts[i, j]) / total,
                ])
        return rows


def axis_distribution(samples, elevation_step: float = DEFAULT_ELEVATION_STEP,
                      azimuth_step: float = DEFAULT_AZIMUTH_STEP) -> AxisDistribution:
    """
    Bin the up axes of ground-truth samples by elevation and azimuth.

    Args:
        samples: GroundTruthSample list (only category and pose are used)
        elevation_step: bin width in degrees, dividing 180
        azimuth_step: bin width in degrees, dividing 360

    Raises:
        EmptyDatasetError: no samples
        ValidationError: invalid bin widths
    """
    elevation_edges = bin_edges(ELEVATION_RANGE, elevation_step, 'elevation')
    azimuth_edges = bin_edges(AZIMUTH_RANGE, azimuth_step, 'azimuth')
    samples = list(samples)
    if not samples:
        raise EmptyDatasetError()

    angles = {}
    for sample in samples:
        angles.setdefault(sample.category.name, []).append(up_axis_angles(sample.pose, sample.category))
    angles[ALL_CATEGORIES] = [pair for name in sorted(angles) for pair in angles[name]]

    counts = {}
    for name, pairs in angles.items():
        values = np.array(pairs)
        histogram, _, _ = np.histogram2d(values[:, 0], values[:, 1], bins=(elevation_edges, azimuth_edges))
        counts[name] = histogram.astype(int)
    upright = int(counts[ALL_CATEGORIES][-1].sum())
    logger.info(f"up-axis distribution over {len(samples)} sample(s): {upright} in the top elevation band")
    return AxisDistribution(elevation_edges, azimuth_edges, counts, len(samples))
