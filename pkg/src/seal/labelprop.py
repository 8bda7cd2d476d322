"""Self-labeling: turn a fused semantic voxel map into object instances and
project those instances back onto the frames of the episode by ray casting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from seal.geometry import CameraModel, DimensionMismatch, Pose, camera_rays, first_hit
from seal.perception import mask_box
from seal.semmap import SemanticVoxelMap

MIN_OBJECT_VOXELS = 200  # 0.025 m^3 at 5 cm voxels
MAX_HOLE_VOXELS = 2000  # 0.25 m^3
DEPTH_GUARD = 2  # voxels
GROUP_BRIDGE = 2  # voxels of dilation when grouping surface fragments
MIN_INSTANCE_PIXELS = 10

_FACE = ndimage.generate_binary_structure(3, 1)
_FULL = ndimage.generate_binary_structure(3, 3)


@dataclass(frozen=True)
class InstanceInfo:
    id: int
    category: int
    voxels: int
    lo: tuple[int, int, int]
    hi: tuple[int, int, int]  # inclusive


@dataclass
class LabeledInstanceMap:
    instance: np.ndarray  # (L, W, H) int32, 0 = none
    table: list[InstanceInfo]
    voxel_size: float
    corner: np.ndarray  # world coords of voxel (0, 0, 0)'s low corner

    @property
    def category(self) -> np.ndarray:
        lut = np.zeros(len(self.table) + 1, dtype=np.int8)
        for info in self.table:
            lut[info.id] = info.category
        return lut[self.instance]

    def categories(self) -> np.ndarray:
        """Instance id -> category lookup (index 0 = background)."""
        lut = np.zeros(len(self.table) + 1, dtype=np.int64)
        for info in self.table:
            lut[info.id] = info.category
        return lut


def argmax_labels(scores: np.ndarray, s_hat: float) -> np.ndarray:
    """Per voxel: 1-based category of the top score if it exceeds s_hat, else 0.
    np.argmax returns the first maximum, so ties go to the lowest index."""
    best = scores.max(axis=0)
    return np.where(best > s_hat, scores.argmax(axis=0) + 1, 0).astype(np.int8)


def group_fragments(mask: np.ndarray, bridge: int = GROUP_BRIDGE) -> tuple[np.ndarray, int]:
    """Label voxels of mask as one object when they are 26-connected after
    dilating by `bridge` voxels, i.e. across gaps of up to 2 * bridge empty
    voxels. Surfaces seen from afar or at grazing angles are sampled more
    sparsely than the voxel pitch and break up otherwise. Labels live on the
    original support only; some may therefore be unused."""
    grown = ndimage.binary_dilation(mask, structure=_FULL, iterations=bridge) if bridge else mask
    labels, n = ndimage.label(grown, structure=_FULL)
    return np.where(mask, labels, 0), n


def remove_small(mask: np.ndarray, min_size: int, bridge: int = GROUP_BRIDGE) -> np.ndarray:
    """Drop objects (see group_fragments) under min_size voxels."""
    labels, n = group_fragments(mask, bridge)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def fill_enclosed(cat: np.ndarray, max_size: int) -> np.ndarray:
    """Fill background cavities smaller than max_size voxels whose whole
    face-neighborhood lies in a single connected object of one category.

    Cavities touching the grid border are never enclosed.
    """
    out = cat.copy()
    bg = cat == 0
    holes, n_holes = ndimage.label(bg, structure=_FACE)
    if n_holes == 0:
        return out
    sizes = np.bincount(holes.ravel())
    border = np.zeros(n_holes + 1, dtype=bool)
    for ax in range(3):
        for sl in (0, -1):
            border[np.unique(np.take(holes, sl, axis=ax))] = True
    cand = np.nonzero((sizes < max_size) & ~border)[0]
    cand = cand[cand > 0]
    if not len(cand):
        return out
    # objects are split per category so one component never mixes categories
    objects = _label_per_category(cat)
    slices = ndimage.find_objects(holes)
    for h in cand:
        sl = slices[h - 1]
        grown = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in sl)
        region = holes[grown] == h
        ring = ndimage.binary_dilation(region, structure=_FACE) & ~region
        owners = np.unique(objects[grown][ring])
        if len(owners) == 1 and owners[0] > 0:
            c = np.unique(cat[grown][ring])
            sub = out[grown]
            sub[region] = c[0]
    return out


def _label_per_category(cat: np.ndarray) -> np.ndarray:
    labels = np.zeros(cat.shape, dtype=np.int64)
    offset = 0
    for c in np.unique(cat[cat > 0]):
        lab, n = ndimage.label(cat == c, structure=_FACE)
        labels[lab > 0] = lab[lab > 0] + offset
        offset += n
    return labels


def label_map(m: SemanticVoxelMap, s_hat: float = 0.9, min_object: int = MIN_OBJECT_VOXELS,
              max_hole: int = MAX_HOLE_VOXELS) -> LabeledInstanceMap:
    """Disambiguate a semantic map into labeled object instances.

    Threshold the per-voxel argmax at s_hat; per category drop components
    under min_object voxels, then fill enclosed cavities under max_hole
    voxels; group nearby fragments into objects with group_fragments.
    Instance ids are dense, ordered by category then by first voxel in scan
    order.
    """
    if not 0.0 < s_hat < 1.0:
        raise ValueError("s_hat must lie in (0, 1)")
    full_shape = m.dims[1:]
    cat_full = argmax_labels(m.scores, s_hat)
    instance = np.zeros(full_shape, dtype=np.int32)
    table: list[InstanceInfo] = []
    if not cat_full.any():
        return LabeledInstanceMap(instance, table, m.voxel_size, m.corner)
    # work inside the bounding box of labeled voxels plus a background margin
    nz = np.argwhere(cat_full > 0)
    lo = np.maximum(nz.min(axis=0) - 2, 0)
    hi = np.minimum(nz.max(axis=0) + 3, full_shape)
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    cat = cat_full[box]
    kept = np.zeros_like(cat)
    for c in range(1, m.num_categories + 1):
        mask = remove_small(cat == c, min_object)
        kept[mask] = c
    cat = fill_enclosed(kept, max_hole)
    inst = np.zeros(cat.shape, dtype=np.int32)
    next_id = 1
    for c in range(1, m.num_categories + 1):
        mask = cat == c
        if not mask.any():
            continue
        lab, n = group_fragments(mask)
        # components whose original support vanished get no id; keep ids dense
        present = np.unique(lab[lab > 0])
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[present] = np.arange(next_id, next_id + len(present), dtype=np.int32)
        inst = np.where(mask, remap[lab], inst)
        for iid in range(next_id, next_id + len(present)):
            where = np.argwhere(inst == iid)
            table.append(InstanceInfo(iid, c, int(len(where)),
                                      tuple(int(v) for v in where.min(axis=0) + lo),
                                      tuple(int(v) for v in where.max(axis=0) + lo)))
        next_id += len(present)
    instance[box] = inst
    return LabeledInstanceMap(instance, table, m.voxel_size, m.corner)


# ------------------------------------------------------------ ray casting


@numba.njit(cache=True)
def _first_hits(grid, o, dirs, ranges, vs, t_start, margin):
    n = dirs.shape[0]
    out = np.full((n, 3), -1, np.int64)
    for p in range(n):
        r = ranges[p]
        if not r > 0.0:
            continue
        # cells ending before the guard window are never accepted, so the
        # march can begin just short of it
        t0 = max(t_start, r - margin - 1e-9)
        i, j, k, _ = first_hit(grid, o, dirs[p], vs, t0, r + margin, r - margin)
        out[p, 0] = i
        out[p, 1] = j
        out[p, 2] = k
    return out


def first_hits(grid: np.ndarray, corner, voxel_size: float, pose: Pose, depth: np.ndarray,
               cam: CameraModel, guard: float = DEPTH_GUARD) -> np.ndarray:
    """For every pixel, the first nonzero cell of grid along its camera ray
    whose extent overlaps [range - guard, range + guard] voxels around the
    measured range. Returns (H*W, 3) voxel indices, -1 rows where nothing
    qualifies or the depth is invalid."""
    cam.check_image(depth, "depth")
    origin, dirs, ratio = camera_rays(pose, cam)
    ranges = np.where(cam.valid_depth(depth).ravel(), depth.ravel() * ratio, -1.0)
    o = origin - np.asarray(corner, dtype=np.float64)
    return _first_hits(grid, o, dirs, ranges, float(voxel_size), float(cam.depth_min),
                       guard * voxel_size)


@dataclass
class FrameLabels:
    instance: np.ndarray  # (H, W) int32
    category: np.ndarray  # (H, W) int64

    def masks(self):
        """Per instance id present: (id, category, mask, box)."""
        out = []
        for iid in np.unique(self.instance[self.instance > 0]).tolist():
            mask = self.instance == iid
            out.append((iid, int(self.category[mask][0]), mask, mask_box(mask)))
        return out


def get_labels(labeled: LabeledInstanceMap, pose: Pose, depth: np.ndarray,
               cam: CameraModel) -> FrameLabels:
    """Per-pixel instance and category by casting each pixel's ray into the
    labeled map, accepting only hits within DEPTH_GUARD voxels of the
    measured depth."""
    if depth.shape != cam.shape:
        raise DimensionMismatch(f"depth {depth.shape} does not match camera {cam.shape}")
    hits = first_hits(labeled.instance, labeled.corner, labeled.voxel_size, pose, depth, cam)
    inst = np.zeros(len(hits), dtype=np.int32)
    ok = hits[:, 0] >= 0
    inst[ok] = labeled.instance[hits[ok, 0], hits[ok, 1], hits[ok, 2]]
    inst = inst.reshape(cam.shape)
    return FrameLabels(inst, labeled.categories()[inst])


# ------------------------------------------------------------ annotations


@dataclass
class Annotation:
    id: int
    category: int
    box: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive
    mask: np.ndarray = field(repr=False)


def masks_to_annotations(frame: FrameLabels, min_pixels: int = MIN_INSTANCE_PIXELS) -> list[Annotation]:
    return [Annotation(iid, cat, box, mask) for iid, cat, mask, box in frame.masks()
            if mask.sum() >= min_pixels]


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating background/foreground, starting
    with a (possibly zero) background run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos = 0
    for k, r in enumerate(runs):
        if k % 2:
            flat[pos:pos + r] = True
        pos += r
    if pos != flat.size:
        raise ValueError(f"runs cover {pos} pixels, expected {flat.size}")
    return flat.reshape(shape)


def annotation_record(frame_index: int, pose: Pose, annotations: list[Annotation]) -> dict:
    return {
        "frame_index": int(frame_index),
        "pose": [round(pose.x, 6), round(pose.y, 6), round(pose.theta, 6)],
        "instances": [{"id": a.id, "category": a.category, "box": list(a.box),
                       "mask": rle_encode(a.mask)} for a in annotations],
    }


def write_annotations(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_annotations(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
