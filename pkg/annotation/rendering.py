"""
Analytic depth renderers for synthetic annotation scenes.

Depth maps hold the camera-frame z of the first surface hit per pixel ray,
with `background` where the ray misses (0 leaves the pixel invalid). Cameras
follow the DepthFrame convention: camera_pose maps world into camera
coordinates, +z forward, +y down the image.
"""

import logging
import math

import numpy as np

from posebench.exceptions import InvalidTransformError
from geometry.core import Box3, RigidTransform

logger = logging.getLogger(__name__)


def pinhole_intrinsics(focal: float, width: int, height: int) -> np.ndarray:
    """Square-pixel intrinsics with the principal point at the image center."""
    return np.array([
        [focal, 0.0, (width - 1) / 2.0],
        [0.0, focal, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """Camera pose (world to camera) of a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    if np.linalg.norm(forward) == 0.0:
        raise InvalidTransformError("camera eye and target coincide")
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, [1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return RigidTransform(rotation, -rotation @ eye)


def octant_cameras(target, distance: float) -> list:
    """Eight cameras on the diagonals (+-1, +-1, +-1) around `target`, all looking at it."""
    target = np.asarray(target, dtype=float)
    cameras = []
    for index in range(8):
        direction = np.array([1.0 if (index >> axis) & 1 else -1.0 for axis in range(3)]) / math.sqrt(3.0)
        cameras.append(look_at(target + distance * direction, target))
    return cameras


def _rays(camera_pose: RigidTransform, intrinsics: np.ndarray, shape: tuple, object_pose: RigidTransform):
    """Per-pixel ray origin and directions in the object frame; a direction has camera z = 1."""
    height, width = shape
    rows, columns = np.mgrid[0:height, 0:width]
    pixels = np.column_stack([columns.ravel(), rows.ravel(), np.ones(rows.size)]).astype(float)
    directions = pixels @ np.linalg.inv(intrinsics).T
    object_from_camera = object_pose.inverse() @ camera_pose.inverse()
    origin = object_from_camera.translation
    return origin, directions @ object_from_camera.rotation.T


def render_box_depth(box: Box3, object_pose: RigidTransform, camera_pose: RigidTransform,
                     intrinsics: np.ndarray, shape: tuple, background: float = 0.0) -> np.ndarray:
    """Depth of a solid box placed in the world by `object_pose` (slab intersection)."""
    origin, directions = _rays(camera_pose, intrinsics, shape, object_pose)
    with np.errstate(divide='ignore', invalid='ignore'):
        first = (box.min_corner - origin) / directions
        second = (box.max_corner - origin) / directions
    near = np.nanmax(np.minimum(first, second), axis=1)
    far = np.nanmin(np.maximum(first, second), axis=1)
    hit = (near <= far) & (far > 0.0)
    depth = np.full(len(directions), float(background))
    depth[hit] = np.where(near[hit] > 0.0, near[hit], far[hit])
    return depth.reshape(shape)


def render_cylinder_depth(radius: float, height: float, object_pose: RigidTransform, camera_pose: RigidTransform,
                          intrinsics: np.ndarray, shape: tuple, background: float = 0.0) -> np.ndarray:
    """Depth of a closed cylinder centred at the object origin with its axis along y."""
    origin, directions = _rays(camera_pose, intrinsics, shape, object_pose)
    half = height / 2.0
    candidates = np.full(len(directions), np.inf)

    # Side wall: (ox + t dx)^2 + (oz + t dz)^2 = r^2.
    a = directions[:, 0] ** 2 + directions[:, 2] ** 2
    b = 2.0 * (origin[0] * directions[:, 0] + origin[2] * directions[:, 2])
    c = origin[0] ** 2 + origin[2] ** 2 - radius ** 2
    discriminant = b ** 2 - 4.0 * a * c
    with np.errstate(divide='ignore', invalid='ignore'):
        root = np.sqrt(np.where(discriminant >= 0.0, discriminant, np.nan))
        for t in ((-b - root) / (2.0 * a), (-b + root) / (2.0 * a)):
            y = origin[1] + t * directions[:, 1]
            valid = (t > 0.0) & (np.abs(y) <= half)
            candidates = np.where(valid & (t < candidates), t, candidates)

        # Caps at y = +-height / 2.
        for cap in (-half, half):
            t = (cap - origin[1]) / directions[:, 1]
            x = origin[0] + t * directions[:, 0]
            z = origin[2] + t * directions[:, 2]
            valid = (t > 0.0) & (x ** 2 + z ** 2 <= radius ** 2)
            candidates = np.where(valid & (t < candidates), t, candidates)

    depth = np.where(np.isfinite(candidates), candidates, float(background))
    return depth.reshape(shape)
