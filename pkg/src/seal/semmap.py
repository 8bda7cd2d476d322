"""Episodic semantic voxel map fused by channel-wise max pooling.

Channel 0 holds occupancy, channels 1..C the best score seen for each
category. Storage is a dense float32 array indexed [channel, x, y, z]; the
map's world anchor is the episode start, which sits at voxel
(L/2, W/2, 0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numba
import numpy as np

from seal.geometry import CameraModel, DimensionMismatch, Pose, depth_to_pointcloud, ego_to_geo

VOXEL_SIZE = 0.05
DEFAULT_DIMS = (7, 256, 256, 64)
MAX_CELLS = 400_000_000
MAGIC = b"SVM1"
# keeps coordinates that land a few ulps below a voxel boundary in the upper cell
_SNAP = 1e-6


class AllocationTooLarge(MemoryError):
    pass


@dataclass
class SemanticVoxelMap:
    data: np.ndarray
    voxel_size: float = VOXEL_SIZE
    start_xy: tuple[float, float] = (0.0, 0.0)
    dropped_points: int = 0
    _meta: dict = field(default_factory=dict, repr=False)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    @property
    def num_categories(self) -> int:
        return self.data.shape[0] - 1

    @property
    def occupancy(self) -> np.ndarray:
        return self.data[0]

    @property
    def scores(self) -> np.ndarray:
        return self.data[1:]

    @property
    def corner(self) -> np.ndarray:
        """World coordinates of the low corner of voxel (0, 0, 0)."""
        _, l, w, _ = self.dims
        return np.array([self.start_xy[0] - (l // 2) * self.voxel_size,
                         self.start_xy[1] - (w // 2) * self.voxel_size, 0.0])

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        rel = (np.asarray(points, dtype=np.float64) - self.corner) / self.voxel_size
        return np.floor(rel + _SNAP).astype(np.int64)

    def index_to_world(self, idx) -> np.ndarray:
        return self.corner + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def grid_meters(self, points: np.ndarray) -> np.ndarray:
        """World points expressed in grid meters (grid spans [0, dims * vs])."""
        return np.asarray(points, dtype=np.float64) - self.corner

    def copy(self) -> "SemanticVoxelMap":
        return SemanticVoxelMap(self.data.copy(), self.voxel_size, self.start_xy, self.dropped_points)


def new_map(dims=DEFAULT_DIMS, start_xy=(0.0, 0.0), voxel_size: float = VOXEL_SIZE,
            max_cells: int = MAX_CELLS) -> SemanticVoxelMap:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or any(d <= 0 for d in dims):
        raise ValueError(f"map dims must be four positive integers, got {dims}")
    if dims[0] < 2:
        raise ValueError("need occupancy plus at least one category channel")
    if int(np.prod(dims)) > max_cells:
        raise AllocationTooLarge(f"{int(np.prod(dims))} cells exceeds the cap of {max_cells}")
    return SemanticVoxelMap(np.zeros(dims, dtype=np.float32), voxel_size,
                            (float(start_xy[0]), float(start_xy[1])))


@numba.njit(cache=True)
def _fuse(data, idx, scores, s_hat):
    """Max-pool point scores into the map.

    Returns (points dropped, voxels newly occupied, voxels whose best
    category score newly exceeds s_hat).
    """
    k, l, w, h = data.shape
    dropped = 0
    new_occ = 0
    new_conf = 0
    for p in range(idx.shape[0]):
        i, j, z = idx[p, 0], idx[p, 1], idx[p, 2]
        if i < 0 or j < 0 or z < 0 or i >= l or j >= w or z >= h:
            dropped += 1
            continue
        if data[0, i, j, z] == 0.0:
            data[0, i, j, z] = 1.0
            new_occ += 1
        before = 0.0
        after = 0.0
        for c in range(1, k):
            old = data[c, i, j, z]
            if old > before:
                before = old
            v = scores[p, c - 1]
            if v > old:
                data[c, i, j, z] = v
                old = v
            if old > after:
                after = old
        if before <= s_hat and after > s_hat:
            new_conf += 1
    return dropped, new_occ, new_conf


@dataclass
class UpdateStats:
    dropped: int = 0
    newly_occupied: int = 0
    newly_confident: int = 0


def update_points(m: SemanticVoxelMap, points: np.ndarray, scores: np.ndarray,
                  s_hat: float = 0.9) -> UpdateStats:
    """Fuse world-frame points (N, 3) with per-point category scores (N, C)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    scores = np.asarray(scores, dtype=np.float32)
    scores = scores.reshape(len(points), scores.shape[-1] if scores.ndim else 0)
    if scores.shape[1] != m.num_categories:
        raise DimensionMismatch(f"scores carry {scores.shape[1]} categories, map has {m.num_categories}")
    idx = m.world_to_index(points)
    dropped, occ, conf = _fuse(m.data, idx, scores, float(s_hat))
    m.dropped_points += dropped
    return UpdateStats(dropped, occ, conf)


def update_map(m: SemanticVoxelMap, depth: np.ndarray, scores: np.ndarray, pose: Pose,
               cam: CameraModel, s_hat: float = 0.9) -> UpdateStats:
    """Back-project one frame and fuse its per-pixel scores (C, H, W) into m.

    The map is modified in place; the returned stats count dropped points and
    voxels that became occupied or confident.
    """
    scores = np.asarray(scores)
    cam.check_image(depth, "depth")
    cam.check_image(scores, "scores")
    if scores.ndim != 3 or scores.shape[0] != m.num_categories:
        raise DimensionMismatch(f"scores must be ({m.num_categories}, H, W), got {scores.shape}")
    cloud = ego_to_geo(depth_to_pointcloud(depth, cam), pose)
    rows, cols = cloud.pixels[:, 0], cloud.pixels[:, 1]
    per_point = scores[:, rows, cols].T
    return update_points(m, cloud.points, per_point, s_hat)


def gainful_curiosity_reward(m: SemanticVoxelMap, s_hat: float = 0.9) -> int:
    """Number of voxels whose best category score strictly exceeds s_hat."""
    if not 0.0 < s_hat < 1.0:
        raise ValueError("s_hat must lie in (0, 1)")
    return int(np.count_nonzero(m.scores.max(axis=0) > s_hat))


def coverage_reward(m: SemanticVoxelMap) -> int:
    return int(np.count_nonzero(m.occupancy))


def occupancy_floor_slice(m: SemanticVoxelMap, z_range=(0.10, 1.50)) -> np.ndarray:
    """2-D obstacle grid: any occupied voxel with z in [z0, z1) meters."""
    h = m.dims[3]
    z0 = int(round(z_range[0] / m.voxel_size))
    z1 = int(round(z_range[1] / m.voxel_size))
    if not 0 <= z0 < z1 <= h:
        raise ValueError(f"z range {z_range} outside map height")
    return m.occupancy[:, :, z0:z1].any(axis=2)


def explored_floor(m: SemanticVoxelMap) -> np.ndarray:
    """Columns with any observed surface (floor included)."""
    return m.occupancy.any(axis=2)


# -------------------------------------------------------------------- I/O


def write_svm(m: SemanticVoxelMap, path) -> None:
    """SVM1: magic, K L W H as uint32 LE, then float32 LE, channel-major with
    x varying fastest."""
    k, l, w, h = m.dims
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<4I", k, l, w, h))
        # [c, x, y, z] -> [c, z, y, x] so x is the fastest axis on disk
        f.write(np.ascontiguousarray(m.data.transpose(0, 3, 2, 1)).astype("<f4").tobytes())


def read_svm(path, start_xy=(0.0, 0.0), voxel_size: float = VOXEL_SIZE) -> SemanticVoxelMap:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path} is not an SVM1 file")
        k, l, w, h = struct.unpack("<4I", f.read(16))
        flat = np.frombuffer(f.read(), dtype="<f4")
    if flat.size != k * l * w * h:
        raise ValueError("truncated SVM1 payload")
    data = flat.reshape(k, h, w, l).transpose(0, 3, 2, 1).astype(np.float32)
    return SemanticVoxelMap(np.ascontiguousarray(data), voxel_size, tuple(start_xy))


def export_argmax_csv(m: SemanticVoxelMap, path) -> int:
    """One row per occupied voxel: x, y, z, argmax category (0 if no score), score."""
    occ = np.argwhere(m.occupancy > 0)
    sc = m.scores[:, occ[:, 0], occ[:, 1], occ[:, 2]]
    best = sc.max(axis=0)
    cat = np.where(best > 0, sc.argmax(axis=0) + 1, 0)
    with open(path, "w") as f:
        f.write("x,y,z,category,score\n")
        for (i, j, z), c, s in zip(occ, cat, best):
            f.write(f"{i},{j},{z},{c},{s:.6f}\n")
    return len(occ)
