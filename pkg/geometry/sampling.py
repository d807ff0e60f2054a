"""
Area-weighted surface sampling and the exact nearest-neighbour index.

Random streams: every sampling call draws from a PCG64 generator seeded with
`numpy.random.SeedSequence(entropy)`. `stream_seed(seed, *keys)` appends
integer keys to the base seed, so each mesh of an evaluation gets its own
stream (key 0 for ground truth, 1 for the prediction) and the same seed
reproduces the same points on any machine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from posebench.exceptions import DegenerateMeshError, EmptyPointSetError, PoseBenchError
from .core import PointSet, TriangleMesh, as_point_array

logger = logging.getLogger(__name__)

GROUND_TRUTH_STREAM = 0
PREDICTION_STREAM = 1


def stream_seed(seed, *keys: int) -> tuple:
    """Extend a base seed (int or tuple of ints) with stream keys."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return base + tuple(int(key) for key in keys)


def make_generator(seed) -> np.random.Generator:
    entropy = list(seed) if isinstance(seed, (tuple, list)) else int(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_surface(mesh: TriangleMesh, n: int, seed) -> PointSet:
    """
    Draw `n` points uniformly from the surface of `mesh`.

    Triangles are picked with probability proportional to their area
    (cumulative-area table + binary search), points inside a triangle
    uniformly via barycentric sampling.

    Args:
        mesh: mesh with positive total area
        n: number of points, at least 1
        seed: int or tuple of ints (see stream_seed)

    Returns:
        PointSet: exactly n points, identical for identical (mesh, n, seed)
    """
    if n < 1:
        raise PoseBenchError(f"sample count must be positive, got {n}")
    areas = mesh.triangle_areas() if len(mesh) else np.empty(0)
    cumulative = np.cumsum(areas)
    if not len(cumulative) or cumulative[-1] <= 0.0:
        raise DegenerateMeshError()

    rng = make_generator(seed)
    picks = rng.random(n) * cumulative[-1]
    triangles = np.minimum(np.searchsorted(cumulative, picks, side='right'), len(cumulative) - 1)

    root = np.sqrt(rng.random(n))[:, None]
    weight = rng.random(n)[:, None]
    corners = mesh.vertices[mesh.faces[triangles]]
    points = ((1.0 - root) * corners[:, 0]
              + root * (1.0 - weight) * corners[:, 1]
              + root * weight * corners[:, 2])
    return PointSet(points)


class SpatialIndex:
    """
    Exact nearest-neighbour index over a frozen point set (KD-tree, no approximation).

    Immutable after construction and safe to share between concurrent queries.
    """

    def __init__(self, points):
        self.points = PointSet(as_point_array(points))
        self._tree = cKDTree(self.points.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return (distances, indices) of the nearest indexed point for every query row."""
        if self._tree is None:
            raise EmptyPointSetError()
        queries = as_point_array(queries)
        if not len(queries):
            return np.empty(0), np.empty(0, dtype=np.int64)
        distances, indices = self._tree.query(queries, k=1, eps=0.0)
        return np.asarray(distances, dtype=float), np.asarray(indices, dtype=np.int64)


def nearest_distance(index: SpatialIndex, query) -> float:
    """Exact Euclidean distance from `query` (a 3-vector) to its nearest indexed point."""
    distances, _ = index.query(np.asarray(query, dtype=float).reshape(1, 3))
    return float(distances[0])


# =============================================================================
# CONVERGENCE STUDY
# =============================================================================

@dataclass(frozen=True)
class ConvergenceRow:
    """One point of the sample-count convergence curve."""
    n_samples: int
    chamfer: float
    fscore: float


def convergence_study(gt_mesh: TriangleMesh, pred_mesh: TriangleMesh, n_list: Sequence[int],
                      delta: float, seed) -> list[ConvergenceRow]:
    """
    Chamfer distance and F-score of two meshes for every sample count in `n_list`.

    Both surfaces are resampled with n points for each row (separate streams
    per mesh and per row), so the curves show how much of each metric is
    sampling noise rather than geometry. Rows keep the order of `n_list`.
    """
    # Import here to avoid circular imports
    from .shape_metrics import chamfer_distance, reconstruction_fscore

    if not len(n_list):
        raise PoseBenchError("sample count list must not be empty")

    rows = []
    for position, n in enumerate(n_list):
        gt_points = sample_surface(gt_mesh, int(n), stream_seed(seed, position, GROUND_TRUTH_STREAM))
        pred_points = sample_surface(pred_mesh, int(n), stream_seed(seed, position, PREDICTION_STREAM))
        chamfer = chamfer_distance(gt_points, pred_points)
        score = reconstruction_fscore(gt_points, pred_points, delta)
        logger.debug(f"convergence n={n}: chamfer={chamfer:.6g} fscore={score.fscore:.4f}")
        rows.append(ConvergenceRow(int(n), chamfer, score.fscore))
    return rows
