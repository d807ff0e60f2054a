"""
Voxel carving of an annotated box and mesh extraction from the carved grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from trimesh.smoothing import filter_laplacian
from skimage import measure

from posebench.exceptions import EmptyOccupancyError, PoseBenchError
from geometry.box_metrics import aabb_of
from geometry.core import Box3, RigidTransform, TriangleMesh
from geometry.primitives import from_trimesh, to_trimesh
from .pipeline import _check_pairs, project

logger = logging.getLogger(__name__)

ISO_LEVEL = 0.5


# =============================================================================
# OCCUPANCY GRID
# =============================================================================

def grid_dimensions(box: Box3, resolution: float) -> tuple:
    # The epsilon keeps 0.1 / 0.005 at 20 cells instead of 21.
    return tuple(max(1, math.ceil(extent / resolution - 1e-9)) for extent in box.extents)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """
    Dense boolean voxel lattice laid over a box in its object frame.

    Voxel (i, j, k) covers min_corner + [i, i+1) * resolution along each axis;
    `pose` places the object frame (identity unless the caller knows better).
    """
    box: Box3
    resolution: float
    occupancy: np.ndarray
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.resolution > 0.0:
            raise PoseBenchError(f"voxel resolution must be positive, got {self.resolution}")
        occupancy = np.array(self.occupancy, dtype=bool, copy=True)
        expected = grid_dimensions(self.box, self.resolution)
        if occupancy.shape != expected:
            raise PoseBenchError(f"occupancy shape {occupancy.shape} does not match the box lattice {expected}")
        object.__setattr__(self, 'occupancy', occupancy)

    @classmethod
    def full(cls, box: Box3, resolution: float) -> OccupancyGrid:
        if not resolution > 0.0:
            raise PoseBenchError(f"voxel resolution must be positive, got {resolution}")
        return cls(box, resolution, np.ones(grid_dimensions(box, resolution), dtype=bool))

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    @property
    def origin(self) -> np.ndarray:
        return self.box.min_corner

    def voxel_centers(self) -> np.ndarray:
        """Centers of all voxels, (prod(dims), 3), in C order of the lattice."""
        axes = [self.origin[axis] + (np.arange(size) + 0.5) * self.resolution for axis, size in enumerate(self.dims)]
        grid = np.meshgrid(*axes, indexing='ij')
        return np.column_stack([coordinate.ravel() for coordinate in grid])

    def occupied_centers(self) -> np.ndarray:
        return self.voxel_centers()[self.occupancy.ravel()]

    @property
    def occupied_count(self) -> int:
        return int(self.occupancy.sum())

    def stats(self) -> dict:
        total = int(self.occupancy.size)
        occupied = self.occupied_count
        return {
            'dims': list(self.dims),
            'resolution_m': self.resolution,
            'voxels': total,
            'occupied': occupied,
            'free': total - occupied,
        }


# =============================================================================
# CARVING
# =============================================================================

def free_voxels(grid: OccupancyGrid, box_pose: RigidTransform, frame, margin: float) -> np.ndarray:
    """
    Voxels one frame observes as free space, as a boolean lattice.

    A voxel is free when its center projects (nearest pixel) onto a valid
    depth measurement and lies strictly more than `margin` in front of it.
    """
    centers = box_pose.apply(grid.voxel_centers())
    columns, rows, depths = project(centers, frame.intrinsics)
    height, width = frame.shape
    visible = (depths > 0.0) & (columns >= 0) & (columns < width) & (rows >= 0) & (rows < height)

    free = np.zeros(len(centers), dtype=bool)
    hits = np.flatnonzero(visible)
    measured = frame.depth[rows[hits].astype(np.int64), columns[hits].astype(np.int64)]
    free[hits] = (measured > 0.0) & (depths[hits] < measured - margin)
    return free.reshape(grid.dims)


def voxel_carve(box: Box3, box_poses, frames, resolution: float, margin: float) -> OccupancyGrid:
    """
    Carve the box lattice with every frame.

    Starts fully occupied and frees the union of the per-frame free sets, so
    the result is independent of frame order and adding a frame can only
    shrink the occupied set.
    """
    _check_pairs(frames, box_poses)
    if margin < 0.0:
        raise PoseBenchError(f"carving margin must be non-negative, got {margin}")
    grid = OccupancyGrid.full(box, resolution)
    occupancy = grid.occupancy.copy()
    for frame, pose in zip(frames, box_poses):
        free = free_voxels(grid, pose, frame, margin)
        occupancy &= ~free
        logger.debug(f"frame '{frame.frame_id}' frees {int(free.sum())} voxels")
    carved = OccupancyGrid(box, resolution, occupancy, grid.pose)
    logger.info(f"carved {carved.occupancy.size - carved.occupied_count} of {carved.occupancy.size} voxels "
                f"with {len(frames)} frame(s)")
    return carved


# =============================================================================
# MESH EXTRACTION
# =============================================================================

def isosurface(grid: OccupancyGrid) -> TriangleMesh:
    """
    Marching cubes of the occupancy field (occupied = 1, free = 0) at level 0.5.

    The lattice is padded with one free layer so the surface closes at the box
    boundary; vertices come out in the object frame.
    """
    if not grid.occupancy.any():
        raise EmptyOccupancyError()
    field_values = np.pad(grid.occupancy.astype(float), 1, mode='constant', constant_values=0.0)
    spacing = (grid.resolution,) * 3
    vertices, faces, _, _ = measure.marching_cubes(field_values, level=ISO_LEVEL, spacing=spacing)
    # Padded index p sits at voxel center p - 1, i.e. origin + (p - 0.5) * resolution.
    vertices = np.asarray(vertices, dtype=float) + grid.origin - 0.5 * grid.resolution
    faces = np.asarray(faces, dtype=np.int64)
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return TriangleMesh(vertices, faces[keep])


def smooth_mesh(mesh: TriangleMesh, iterations: int, lamb: float) -> TriangleMesh:
    """
    Uniform-weight Laplacian smoothing: v <- v + lamb * (mean of neighbours - v).

    Faces are untouched, so vertex and face counts are preserved.
    """
    if iterations < 0:
        raise PoseBenchError(f"smoothing iterations must be non-negative, got {iterations}")
    if not 0.0 <= lamb <= 1.0:
        raise PoseBenchError(f"smoothing lambda must be in [0, 1], got {lamb}")
    if iterations == 0 or lamb == 0.0:
        return mesh
    smoothed = filter_laplacian(
        to_trimesh(mesh),
        lamb=lamb,
        iterations=iterations,
        implicit_time_integration=False,
        volume_constraint=False,
    )
    return from_trimesh(smoothed)


def extract_mesh(grid: OccupancyGrid, smoothing_iterations: int, smoothing_lambda: float) -> TriangleMesh:
    mesh = smooth_mesh(isosurface(grid), smoothing_iterations, smoothing_lambda)
    logger.info(f"extracted mesh with {len(mesh.vertices)} vertices and {len(mesh)} faces")
    return mesh


def is_watertight(mesh: TriangleMesh) -> bool:
    return bool(to_trimesh(mesh).is_watertight)


# =============================================================================
# TIGHT BOXES
# =============================================================================

def tight_bbox(mesh: TriangleMesh) -> Box3:
    """Axis-aligned box of the mesh vertices in the object frame (EmptyPointSetError when empty)."""
    return aabb_of(mesh.vertices)


def recentre(mesh: TriangleMesh) -> tuple[TriangleMesh, RigidTransform]:
    """
    Shift the mesh so its tight box is centred at the object origin.

    Returns:
        tuple: (shifted mesh, offset) where a pose P of the old object frame
        becomes P @ offset for the new one
    """
    center = tight_bbox(mesh).center
    offset = RigidTransform.from_translation(center)
    return TriangleMesh(mesh.vertices - center, mesh.faces), offset
