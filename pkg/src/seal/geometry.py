"""Poses, the pinhole camera, point clouds and voxel-grid ray traversal.

Frames: the agent frame has +x forward, +y to the left and +z up, with the
origin on the floor under the agent. Headings are measured counter-clockwise
from world +x (east) in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


class DimensionMismatch(ValueError):
    pass


class OriginOutsideGrid(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.theta}")
        object.__setattr__(self, "theta", normalize_degrees(self.theta))

    @property
    def heading_rad(self) -> float:
        return math.radians(self.theta)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def normalize_degrees(theta: float) -> float:
    t = math.fmod(theta, 360.0)
    if t < 0:
        t += 360.0
    # fmod of a tiny negative can land exactly on 360.0
    return 0.0 if t >= 360.0 else t


@dataclass(frozen=True)
class CameraModel:
    width_px: int = 128
    height_px: int = 128
    hfov: float = 90.0
    height_m: float = 0.88
    depth_min: float = 0.25
    depth_max: float = 5.0

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("camera resolution must be positive")
        if not 0.0 < self.hfov < 180.0:
            raise ValueError("hfov must lie in (0, 180)")
        if not self.depth_min < self.depth_max:
            raise ValueError("depth_min must be below depth_max")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    @property
    def focal_px(self) -> float:
        return (self.width_px / 2.0) / math.tan(math.radians(self.hfov) / 2.0)

    @property
    def vfov(self) -> float:
        return math.degrees(2.0 * math.atan((self.height_px / 2.0) / self.focal_px))

    def ray_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Lateral (+left) and vertical (+up) slopes per pixel, shape (H, W).

        Pixel (r, c) looks along (1, lateral, vertical) in the agent frame. The
        principal ray passes through pixel (H/2, W/2), so column 0 is the
        leftmost ray.
        """
        f = self.focal_px
        cols = (self.width_px / 2.0 - np.arange(self.width_px, dtype=np.float64)) / f
        rows = (self.height_px / 2.0 - np.arange(self.height_px, dtype=np.float64)) / f
        lateral = np.broadcast_to(cols[None, :], self.shape)
        vertical = np.broadcast_to(rows[:, None], self.shape)
        return lateral, vertical

    def valid_depth(self, depth: np.ndarray) -> np.ndarray:
        # readings clamped onto either bound carry no return
        return np.isfinite(depth) & (depth > self.depth_min) & (depth < self.depth_max)

    def check_image(self, image: np.ndarray, name: str = "image") -> None:
        if tuple(image.shape[-2:]) != self.shape:
            raise DimensionMismatch(
                f"{name} has shape {image.shape}, camera expects {self.shape}")


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) in meters plus the (row, col) each one came from."""

    points: np.ndarray
    pixels: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64))


def depth_to_pointcloud(depth: np.ndarray, cam: CameraModel) -> PointCloud:
    """Back-project a z-depth image into the agent frame."""
    depth = np.asarray(depth, dtype=np.float64)
    cam.check_image(depth, "depth")
    if depth.ndim != 2:
        raise DimensionMismatch(f"depth must be 2-D, got {depth.shape}")
    valid = cam.valid_depth(depth)
    rows, cols = np.nonzero(valid)
    d = depth[rows, cols]
    lateral, vertical = cam.ray_offsets()
    pts = np.stack(
        [d, d * lateral[rows, cols], cam.height_m + d * vertical[rows, cols]], axis=1)
    return PointCloud(pts, np.stack([rows, cols], axis=1))


def project_points(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Agent-frame points (N, 3) to continuous (row, col) pixel coordinates."""
    points = np.asarray(points, dtype=np.float64)
    f = cam.focal_px
    x = points[:, 0]
    col = cam.width_px / 2.0 - f * points[:, 1] / x
    row = cam.height_px / 2.0 - f * (points[:, 2] - cam.height_m) / x
    return np.stack([row, col], axis=1)


def _rotation(theta_deg: float) -> np.ndarray:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def ego_to_geo(cloud: PointCloud, pose: Pose) -> PointCloud:
    pts = np.array(cloud.points, dtype=np.float64, copy=True)
    if len(pts):
        pts[:, :2] = pts[:, :2] @ _rotation(pose.theta).T + np.array([pose.x, pose.y])
    return PointCloud(pts, cloud.pixels)


def geo_to_ego(cloud: PointCloud, pose: Pose) -> PointCloud:
    pts = np.array(cloud.points, dtype=np.float64, copy=True)
    if len(pts):
        pts[:, :2] = (pts[:, :2] - np.array([pose.x, pose.y])) @ _rotation(pose.theta)
    return PointCloud(pts, cloud.pixels)


def camera_rays(pose: Pose, cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame camera origin, unit ray directions (H*W, 3), and the
    range/z-depth ratio per pixel (H*W,)."""
    lateral, vertical = cam.ray_offsets()
    ego = np.stack([np.ones(lateral.size), lateral.ravel(), vertical.ravel()], axis=1)
    norm = np.linalg.norm(ego, axis=1)
    ego /= norm[:, None]
    dirs = ego.copy()
    dirs[:, :2] = ego[:, :2] @ _rotation(pose.theta).T
    origin = np.array([pose.x, pose.y, cam.height_m])
    return origin, dirs, norm


# ---------------------------------------------------------------- traversal


@numba.njit(cache=True)
def _clip_to_box(o, d, extent, t0, t1):
    """Clip [t0, t1] of ray o + t d against the box [0, extent]."""
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < 0.0 or o[a] > extent[a]:
                return 1.0, 0.0
        else:
            ta = (0.0 - o[a]) / d[a]
            tb = (extent[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    return t0, t1


@numba.njit(cache=True)
def _setup(o, d, dims, vs, t):
    """Initial cell and per-axis traversal state for the point o + t d."""
    cell = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_next = np.empty(3)
    t_delta = np.empty(3)
    for a in range(3):
        p = o[a] + t * d[a]
        c = int(math.floor(p / vs))
        # a point on the far face belongs to the last cell; on an inner face
        # the cell is the one the ray is heading into
        if d[a] < 0.0 and p / vs - c == 0.0:
            c -= 1
        if c < 0:
            c = 0
        if c > dims[a] - 1:
            c = dims[a] - 1
        cell[a] = c
        if d[a] > 0.0:
            step[a] = 1
            t_next[a] = ((c + 1) * vs - o[a]) / d[a]
            t_delta[a] = vs / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            t_next[a] = (c * vs - o[a]) / d[a]
            t_delta[a] = -vs / d[a]
        else:
            step[a] = 0
            t_next[a] = np.inf
            t_delta[a] = np.inf
    return cell, step, t_next, t_delta


@numba.njit(cache=True)
def _traverse_into(o, d, dims, vs, t_max, out):
    """Write visited cells into out (N, 3); return the count."""
    extent = np.empty(3)
    for a in range(3):
        extent[a] = dims[a] * vs
    t0, t1 = _clip_to_box(o, d, extent, 0.0, t_max)
    if t1 <= t0:
        return 0
    cell, step, t_next, t_delta = _setup(o, d, dims, vs, t0)
    n = 0
    t = t0
    while t < t1 and n < out.shape[0]:
        out[n, 0] = cell[0]
        out[n, 1] = cell[1]
        out[n, 2] = cell[2]
        n += 1
        a = 0
        if t_next[1] < t_next[a]:
            a = 1
        if t_next[2] < t_next[a]:
            a = 2
        t = t_next[a]
        cell[a] += step[a]
        t_next[a] += t_delta[a]
        if cell[a] < 0 or cell[a] >= dims[a]:
            break
    return n


def traverse_ray(origin, direction, grid_dims, voxel_size: float,
                 max_dist: float = np.inf) -> np.ndarray:
    """Cells crossed by a ray, in order, as an (N, 3) int array.

    The grid spans [0, dims * voxel_size] on each axis. Traversal stops at the
    grid exit or after max_dist meters.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    dims = np.asarray(grid_dims, dtype=np.int64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    extent = dims * voxel_size
    if np.any(o < 0.0) or np.any(o > extent):
        raise OriginOutsideGrid(f"origin {o} outside grid extent {extent}")
    bound = int(np.sum(dims)) + 3
    if np.isfinite(max_dist):
        bound = min(bound, int(3 * (max_dist / voxel_size + 2)))
    out = np.empty((bound, 3), dtype=np.int64)
    n = _traverse_into(o, d, dims, float(voxel_size), float(max_dist), out)
    return out[:n].copy()


@numba.njit(cache=True)
def _clip_axis(o, d, extent, t0, t1):
    """Clip [t0, t1] of the ray o + t d against the slab [0, extent]."""
    if d == 0.0:
        if o < 0.0 or o > extent:
            return 1.0, 0.0
        return t0, t1
    ta = (0.0 - o) / d
    tb = (extent - o) / d
    if ta > tb:
        ta, tb = tb, ta
    return max(t0, ta), min(t1, tb)


@numba.njit(cache=True)
def _axis_setup(o, d, n, vs, t):
    """Cell, step, next crossing and crossing spacing along one axis."""
    p = o + t * d
    c = int(math.floor(p / vs))
    if d < 0.0 and p / vs - c == 0.0:
        c -= 1
    c = min(max(c, 0), n - 1)
    if d > 0.0:
        return c, 1, ((c + 1) * vs - o) / d, vs / d
    if d < 0.0:
        return c, -1, (c * vs - o) / d, -vs / d
    return c, 0, np.inf, np.inf


@numba.njit(cache=True)
def first_hit(grid, o, d, vs, t_start, t_end, accept_lo):
    """First cell with grid != 0 whose span along the ray reaches accept_lo
    and starts before t_end. Returns (i, j, k, t_enter) or i = -1."""
    nx, ny, nz = grid.shape
    t0, t1 = _clip_axis(o[0], d[0], nx * vs, t_start, t_end)
    t0, t1 = _clip_axis(o[1], d[1], ny * vs, t0, t1)
    t0, t1 = _clip_axis(o[2], d[2], nz * vs, t0, t1)
    if t1 <= t0:
        return -1, -1, -1, np.inf
    # scalar state: this runs once per pixel and allocation would dominate
    i, si, ti, di = _axis_setup(o[0], d[0], nx, vs, t0)
    j, sj, tj, dj = _axis_setup(o[1], d[1], ny, vs, t0)
    k, sk, tk, dk = _axis_setup(o[2], d[2], nz, vs, t0)
    t = t0
    while t <= t1:
        if ti <= tj and ti <= tk:
            t_exit = ti
            a = 0
        elif tj <= tk:
            t_exit = tj
            a = 1
        else:
            t_exit = tk
            a = 2
        if grid[i, j, k] != 0 and t_exit >= accept_lo:
            return i, j, k, t
        t = t_exit
        if a == 0:
            i += si
            ti += di
            if i < 0 or i >= nx:
                break
        elif a == 1:
            j += sj
            tj += dj
            if j < 0 or j >= ny:
                break
        else:
            k += sk
            tk += dk
            if k < 0 or k >= nz:
                break
    return -1, -1, -1, np.inf
