"""
Point-level stages of the annotation pipeline.

Conventions:
    - `DepthFrame.camera_pose` maps world coordinates into the camera frame
      (x_cam = camera_pose.apply(x_world)); the camera looks along +z with +y
      pointing down the image.
    - A box pose maps the object frame of the annotated box into the camera
      frame of one depth frame, so a box pose per frame fully places the box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from posebench.exceptions import (
    DegenerateCorrespondencesError, EmptyPointSetError, NoOverlapError, NoPointsInBoxError, PoseBenchError,
)
from geometry.core import Box3, Category, PointSet, RigidTransform, as_point_array
from geometry.sampling import SpatialIndex

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-8


# =============================================================================
# DEPTH FRAMES
# =============================================================================

@dataclass(frozen=True, eq=False)
class DepthFrame:
    """
    One depth image with its camera.

    `depth` holds meters per pixel (0 marks a missing measurement), `mask`
    optionally restricts which pixels belong to the annotated scene part.
    """
    depth: np.ndarray
    intrinsics: np.ndarray
    camera_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    mask: np.ndarray | None = None
    frame_id: str = ''

    def __post_init__(self):
        depth = np.array(self.depth, dtype=float, copy=True)
        if depth.ndim != 2:
            raise PoseBenchError(f"frame '{self.frame_id}': depth must be a 2D map, got shape {depth.shape}")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0.0):
            raise PoseBenchError(f"frame '{self.frame_id}': depth values must be finite and non-negative")
        intrinsics = np.array(self.intrinsics, dtype=float, copy=True).reshape(3, 3)
        if not np.all(np.isfinite(intrinsics)) or abs(np.linalg.det(intrinsics)) < 1e-12:
            raise PoseBenchError(f"frame '{self.frame_id}': intrinsics must be invertible")
        depth.setflags(write=False)
        intrinsics.setflags(write=False)
        object.__setattr__(self, 'depth', depth)
        object.__setattr__(self, 'intrinsics', intrinsics)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != depth.shape:
                raise PoseBenchError(
                    f"frame '{self.frame_id}': mask shape {mask.shape} differs from depth shape {depth.shape}"
                )
            mask.setflags(write=False)
            object.__setattr__(self, 'mask', mask)

    @property
    def shape(self) -> tuple:
        return self.depth.shape

    def valid_pixels(self) -> np.ndarray:
        valid = self.depth > 0.0
        if self.mask is not None:
            valid &= self.mask
        return valid


def backproject(frame: DepthFrame) -> PointSet:
    """
    Lift every valid (and masked) pixel to a 3D point in the camera frame.

    Pixel (u, v) is column u, row v; its center sits at integer coordinates.
    Points come out in row-major pixel order.
    """
    rows, columns = np.nonzero(frame.valid_pixels())
    if not len(rows):
        return PointSet.empty()
    depth = frame.depth[rows, columns]
    pixels = np.column_stack([columns, rows, np.ones(len(rows))]).astype(float)
    rays = pixels @ np.linalg.inv(frame.intrinsics).T
    return PointSet(rays * depth[:, None])


def project(points, intrinsics: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (columns, rows, depths) of camera-frame points; pixel indices are nearest-pixel rounded."""
    points = as_point_array(points)
    depths = points[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        homogeneous = points @ np.asarray(intrinsics, dtype=float).T
        columns = np.rint(homogeneous[:, 0] / depths)
        rows = np.rint(homogeneous[:, 1] / depths)
    return columns, rows, depths


# =============================================================================
# RIGID ALIGNMENT
# =============================================================================

def _is_degenerate(centered: np.ndarray) -> bool:
    singular = np.linalg.svd(centered, compute_uv=False)
    return singular[0] <= 1e-12 or singular[1] <= RANK_TOLERANCE * singular[0]


def rigid_alignment(source, target) -> RigidTransform:
    """
    Least-squares rotation and translation taking source[i] onto target[i].

    Kabsch solution: SVD of the cross-covariance of the centred pairs, with
    the sign of the last singular direction flipped when needed so the result
    is a proper rotation. No scale is estimated.

    Raises:
        DegenerateCorrespondencesError: fewer than 3 pairs, mismatched sizes,
            or collinear / coincident points on either side
    """
    source = as_point_array(source)
    target = as_point_array(target)
    if source.shape != target.shape:
        raise DegenerateCorrespondencesError(
            f"degenerate correspondences: {len(source)} source points for {len(target)} target points"
        )
    if len(source) < 3:
        raise DegenerateCorrespondencesError(f"degenerate correspondences: {len(source)} pairs, need at least 3")

    source_center = source.mean(axis=0)
    target_center = target.mean(axis=0)
    source_centered = source - source_center
    target_centered = target - target_center
    if _is_degenerate(source_centered) or _is_degenerate(target_centered):
        raise DegenerateCorrespondencesError("degenerate correspondences: points are collinear or coincident")

    covariance = source_centered.T @ target_centered
    u, _, vt = np.linalg.svd(covariance)
    sign = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidTransform(rotation, target_center - rotation @ source_center)


# =============================================================================
# ITERATIVE CLOSEST POINT
# =============================================================================

@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    reject_distance: float = 0.02
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise PoseBenchError(f"ICP needs at least one iteration, got {self.max_iterations}")
        if not self.reject_distance > 0.0 or not self.tolerance > 0.0:
            raise PoseBenchError("ICP reject distance and tolerance must be positive")

    @classmethod
    def from_settings(cls) -> IcpParams:
        defaults = settings.POSEBENCH['ANNOTATION']
        return cls(
            max_iterations=defaults['ICP_MAX_ITERATIONS'],
            reject_distance=defaults['ICP_REJECT_DISTANCE'],
            tolerance=defaults['ICP_TOLERANCE'],
        )


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    iterations: int
    initial_residual: float
    residual: float
    inliers: int
    converged: bool

    def as_dict(self) -> dict:
        return {
            'iterations': self.iterations,
            'initial_residual_m': self.initial_residual,
            'residual_m': self.residual,
            'inliers': self.inliers,
            'converged': self.converged,
        }


def _matched(moved: np.ndarray, index: SpatialIndex, reject_distance: float):
    distances, indices = index.query(moved)
    keep = distances < reject_distance
    if not np.any(keep):
        raise NoOverlapError(f"no overlap: no correspondence closer than {reject_distance} m")
    return keep, distances, indices


def icp_align(source, target_index: SpatialIndex, init: RigidTransform | None = None,
              params: IcpParams | None = None) -> IcpResult:
    """
    Point-to-point ICP of `source` onto the indexed target.

    Each iteration pairs every moved source point with its nearest target
    point, drops pairs farther than `reject_distance` and composes the
    rigid_alignment of the remaining pairs onto the current estimate. Stops
    when the Frobenius norm of the update minus identity is below
    `tolerance` or after `max_iterations`.

    Raises:
        EmptyPointSetError: empty source or target
        NoOverlapError: every correspondence was rejected
    """
    params = params or IcpParams.from_settings()
    source = as_point_array(source)
    if not len(source) or not len(target_index):
        raise EmptyPointSetError("ICP needs non-empty source and target point sets")
    target = target_index.points.points
    current = init or RigidTransform.identity()

    initial_residual = None
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = current.apply(source)
        keep, distances, indices = _matched(moved, target_index, params.reject_distance)
        if initial_residual is None:
            initial_residual = float(distances[keep].mean())
        step = rigid_alignment(moved[keep], target[indices[keep]])
        current = step @ current
        change = float(np.linalg.norm(step.as_matrix() - np.eye(4)))
        logger.debug(f"ICP iteration {iterations}: {int(keep.sum())} pairs, update {change:.3g}")
        if change < params.tolerance:
            converged = True
            break

    keep, distances, _ = _matched(current.apply(source), target_index, params.reject_distance)
    residual = float(distances[keep].mean())
    if not converged:
        logger.warning(f"ICP did not converge after {iterations} iterations (residual {residual:.4g} m)")
    return IcpResult(current, iterations, initial_residual, residual, int(keep.sum()), converged)


# =============================================================================
# ACCUMULATION
# =============================================================================

def _check_pairs(frames, box_poses):
    if len(frames) != len(box_poses):
        raise ValidationError(f"expected one box pose per frame, got {len(box_poses)} for {len(frames)} frames")


def object_points(frame: DepthFrame, box_pose: RigidTransform, box: Box3, padding: float = 0.0) -> np.ndarray:
    """Backprojected points of `frame` in the object frame, cropped to `box` grown by `padding`."""
    points = box_pose.inverse().apply(backproject(frame).points)
    return points[box.contains(points, tolerance=padding)]


def replicate_symmetric(points, category: Category, replicas: int) -> np.ndarray:
    """Append `replicas` copies rotated by multiples of 360/(replicas + 1) degrees about the symmetry axis."""
    points = as_point_array(points)
    copies = [points]
    for step in range(1, replicas + 1):
        spin = RigidTransform.from_axis_angle(category.axis, 360.0 * step / (replicas + 1))
        copies.append(spin.apply(points))
    return np.vstack(copies)


def accumulate_points(frames, box_poses, box: Box3, category: Category, sym_replicas: int = 0) -> PointSet:
    """
    Cropped points of all frames in the object frame of the box.

    Symmetric categories get `sym_replicas` extra rotated copies about their
    axis, so the output holds exactly (sym_replicas + 1) times the cropped
    points. Other categories ignore `sym_replicas`.

    Raises:
        NoPointsInBoxError: no frame has a valid pixel inside the box
    """
    _check_pairs(frames, box_poses)
    if sym_replicas < 0:
        raise PoseBenchError(f"symmetry replicas must be non-negative, got {sym_replicas}")
    cropped = [object_points(frame, pose, box) for frame, pose in zip(frames, box_poses)]
    points = np.vstack(cropped) if cropped else np.empty((0, 3))
    if not len(points):
        raise NoPointsInBoxError(f"no points in box: {len(frames)} frame(s) gave no valid pixel inside the box")
    if category.symmetric and sym_replicas:
        points = replicate_symmetric(points, category, sym_replicas)
    logger.info(f"accumulated {len(points)} points for {category.name} from {len(frames)} frame(s)")
    return PointSet(points)


# =============================================================================
# BOX POSE REFINEMENT
# =============================================================================

def refine_box_poses(frames, box_poses, box: Box3, params: IcpParams | None = None,
                     padding: float = 0.0) -> tuple[list, list]:
    """
    Leave-one-out ICP refinement of the seed box pose of every frame.

    Frame i's points (in its seed object frame, cropped to the box grown by
    `padding`) are aligned onto the points of all other frames under their
    seed poses. Every frame is refined against the seeds, so the result does
    not depend on frame order. Frames with nothing to align keep their seed.

    Returns:
        tuple: (refined box poses, per-frame IcpResult or None when skipped)
    """
    _check_pairs(frames, box_poses)
    params = params or IcpParams.from_settings()
    crops = [object_points(frame, pose, box, padding) for frame, pose in zip(frames, box_poses)]

    refined, results = [], []
    for position, (frame, seed) in enumerate(zip(frames, box_poses)):
        others = [crop for other, crop in enumerate(crops) if other != position]
        target = np.vstack(others) if others else np.empty((0, 3))
        if not len(crops[position]) or not len(target):
            logger.warning(f"frame '{frame.frame_id}': nothing to align, keeping the seed box pose")
            refined.append(seed)
            results.append(None)
            continue
        result = icp_align(crops[position], SpatialIndex(target), RigidTransform.identity(), params)
        logger.debug(f"frame '{frame.frame_id}': ICP residual {result.initial_residual:.4g} -> {result.residual:.4g} m")
        # Object-frame points move by the ICP result, so the box pose takes its inverse.
        refined.append(seed @ result.transform.inverse())
        results.append(result)
    return refined, results
