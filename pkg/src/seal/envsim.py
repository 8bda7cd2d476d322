"""Procedural box-world indoor scenes and the discrete embodied agent.

Scenes are built from axis-aligned boxes snapped to the 5 cm voxel lattice:
floor, ceiling and wall slabs carry category 0, objects carry a category in
1..C and a unique instance id. Depth and ground-truth semantics come from
casting the camera rays against the boxes.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

from seal.geometry import CameraModel, Pose, camera_rays

CATEGORIES = ("chair", "couch", "bed", "toilet", "tv", "potted_plant")
NUM_CATEGORIES = len(CATEGORIES)
VOXEL = 0.05
AGENT_RADIUS = 0.10
FORWARD_STEP = 0.25
TURN_ANGLE = 30.0

# footprint (x, y) and height ranges in meters, plus base elevation
_OBJECT_SHAPES = {
    1: ((0.55, 0.70), (0.55, 0.70), (0.85, 1.00), 0.0),
    2: ((1.60, 2.10), (0.80, 0.95), (0.75, 0.90), 0.0),
    3: ((1.90, 2.10), (1.40, 1.70), (0.55, 0.70), 0.0),
    4: ((0.45, 0.55), (0.65, 0.75), (0.75, 0.85), 0.0),
    5: ((0.90, 1.20), (0.20, 0.30), (0.55, 0.70), 0.55),
    6: ((0.45, 0.60), (0.45, 0.60), (0.95, 1.20), 0.0),
}


class GenerationFailed(RuntimeError):
    pass


class NoFreeSpawn(RuntimeError):
    pass


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


@dataclass(frozen=True)
class SceneParams:
    num_rooms: int = 3
    objects_per_room: int = 2
    extents: tuple[float, float, float] = (12.8, 12.8, 3.2)
    ceiling_height: float = 3.0
    wall_thickness: float = 0.10
    door_width: float = 1.00
    max_retries: int = 50

    def validate(self) -> None:
        if self.num_rooms < 1 or self.objects_per_room < 0:
            raise ValueError("num_rooms must be >= 1 and objects_per_room >= 0")
        if min(self.extents[:2]) < 4.0:
            raise ValueError("scene extents must be at least 4 m horizontally")
        if not 0.0 < self.ceiling_height <= self.extents[2]:
            raise ValueError("ceiling must lie inside the vertical extent")


@dataclass
class Scene:
    """Immutable-by-convention box scene.

    boxes: (N, 6) float array of [x0, y0, z0, x1, y1, z1];
    category, instance: (N,) int arrays, 0 for structure.
    """

    seed: int
    params: SceneParams
    boxes: np.ndarray
    category: np.ndarray
    instance: np.ndarray
    _nav: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def extents(self) -> tuple[float, float, float]:
        return self.params.extents

    @property
    def object_indices(self) -> np.ndarray:
        return np.nonzero(self.instance > 0)[0]

    @property
    def instance_ids(self) -> list[int]:
        return [int(i) for i in self.instance[self.instance > 0]]

    def instance_category(self, instance_id: int) -> int:
        return int(self.category[self.instance == instance_id][0])

    def grid_shape(self) -> tuple[int, int, int]:
        return tuple(int(round(e / VOXEL)) for e in self.extents)

    def rasterize(self) -> np.ndarray:
        """Instance-aware occupancy at 5 cm: -1 structure, id for objects, 0 free."""
        grid = np.zeros(self.grid_shape(), dtype=np.int32)
        for b, inst in zip(self.boxes, self.instance):
            lo = np.clip(np.round(b[:3] / VOXEL).astype(int), 0, None)
            hi = np.round(b[3:] / VOXEL).astype(int)
            grid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = inst if inst > 0 else -1
        return grid

    def footprint(self) -> np.ndarray:
        """2-D obstacle mask at 5 cm: any box reaching into the body height."""
        nx, ny, _ = self.grid_shape()
        grid = np.zeros((nx, ny), dtype=bool)
        for b in self.boxes:
            if b[2] >= 1.5 or b[5] <= 0.0:
                continue  # floor slab and ceiling
            lo = np.clip(np.round(b[:2] / VOXEL).astype(int), 0, None)
            hi = np.round(b[3:5] / VOXEL).astype(int)
            grid[lo[0]:hi[0], lo[1]:hi[1]] = True
        return grid

    def navigable(self) -> np.ndarray:
        """Cells whose center keeps AGENT_RADIUS clearance from obstacles."""
        if "navigable" not in self._nav:
            free = ~self.footprint()
            # center-to-center distance minus the half diagonal bounds the clearance from below
            dist = ndimage.distance_transform_edt(free) - math.sqrt(0.5)
            self._nav["navigable"] = dist * VOXEL > AGENT_RADIUS + 1e-9
        return self._nav["navigable"]

    def reachable_from(self, cell: tuple[int, int]) -> np.ndarray:
        nav = self.navigable()
        labels, _ = ndimage.label(nav)
        lab = labels[cell]
        return (labels == lab) if lab > 0 else np.zeros_like(nav)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "seed": int(self.seed),
            "params": {
                "num_rooms": p.num_rooms,
                "objects_per_room": p.objects_per_room,
                "extents": list(p.extents),
                "ceiling_height": p.ceiling_height,
                "wall_thickness": p.wall_thickness,
                "door_width": p.door_width,
                "max_retries": p.max_retries,
            },
            "boxes": [
                {
                    "min": [round(float(v), 4) for v in b[:3]],
                    "max": [round(float(v), 4) for v in b[3:]],
                    "category": int(c),
                    "instance": int(i),
                }
                for b, c, i in zip(self.boxes, self.category, self.instance)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        p = dict(data["params"])
        p["extents"] = tuple(p["extents"])
        boxes = np.array([b["min"] + b["max"] for b in data["boxes"]], dtype=np.float64)
        return cls(
            seed=int(data["seed"]),
            params=SceneParams(**p),
            boxes=boxes.reshape(-1, 6),
            category=np.array([b["category"] for b in data["boxes"]], dtype=np.int64),
            instance=np.array([b["instance"] for b in data["boxes"]], dtype=np.int64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------- generation


def _snap(v: float) -> float:
    return round(round(v / VOXEL) * VOXEL, 4)


def _split_rooms(rng, lo, hi, n, min_size=2.4):
    """Binary space partition of [lo, hi] (2-D) into at most n rooms.

    Returns the room rectangles and the interior walls as
    (axis, position, span_lo, span_hi) tuples.
    """
    rooms = [(lo, hi)]
    walls = []
    while len(rooms) < n:
        sizes = [max(h[0] - l[0], h[1] - l[1]) for l, h in rooms]
        order = np.argsort(sizes)[::-1]
        for idx in order:
            l, h = rooms[idx]
            axis = 0 if (h[0] - l[0]) >= (h[1] - l[1]) else 1
            span = h[axis] - l[axis]
            if span < 2 * min_size:
                continue
            pos = _snap(l[axis] + span * rng.uniform(0.35, 0.65))
            pos = min(max(pos, l[axis] + min_size), h[axis] - min_size)
            pos = _snap(pos)
            a_hi = list(h)
            a_hi[axis] = pos
            b_lo = list(l)
            b_lo[axis] = pos
            rooms[idx] = (l, tuple(a_hi))
            rooms.append((tuple(b_lo), h))
            other = 1 - axis
            walls.append((axis, pos, l[other], h[other]))
            break
        else:
            break
    return rooms, walls


def _structure_boxes(rng, params: SceneParams):
    lx, ly, _ = params.extents
    hz = params.ceiling_height
    t = params.wall_thickness
    boxes = [
        (0.0, 0.0, -VOXEL, lx, ly, 0.0),  # floor slab below z = 0
        (0.0, 0.0, hz, lx, ly, hz + VOXEL),
        (0.0, 0.0, 0.0, lx, t, hz),
        (0.0, ly - t, 0.0, lx, ly, hz),
        (0.0, 0.0, 0.0, t, ly, hz),
        (lx - t, 0.0, 0.0, lx, ly, hz),
    ]
    rooms, walls = _split_rooms(rng, (t, t), (lx - t, ly - t), params.num_rooms)
    doors = []
    for axis, pos, s_lo, s_hi in walls:
        w = params.door_width
        d0 = _snap(rng.uniform(s_lo + 0.3, s_hi - 0.3 - w))
        d1 = _snap(d0 + w)
        doors.append((axis, pos, d0, d1))
        half = t / 2
        for a, b in ((s_lo, d0), (d1, s_hi)):
            if b - a <= 0:
                continue
            if axis == 0:
                boxes.append((_snap(pos - half), a, 0.0, _snap(pos + half), b, hz))
            else:
                boxes.append((a, _snap(pos - half), 0.0, b, _snap(pos + half), hz))
    return boxes, rooms, doors


def _overlaps(a, b, margin):
    return all(a[i] < b[i + 3] + margin and b[i] < a[i + 3] + margin for i in range(2))


def _place_objects(rng, params, rooms, doors, structure):
    boxes, cats = [], []
    clearance = 0.25
    for l, h in rooms:
        for _ in range(params.objects_per_room):
            for _attempt in range(40):
                cat = int(rng.integers(1, NUM_CATEGORIES + 1))
                (sx0, sx1), (sy0, sy1), (sz0, sz1), base = _OBJECT_SHAPES[cat]
                sx, sy, sz = (_snap(rng.uniform(sx0, sx1)), _snap(rng.uniform(sy0, sy1)),
                              _snap(rng.uniform(sz0, sz1)))
                if rng.random() < 0.5:
                    sx, sy = sy, sx
                x0_lo, x0_hi = l[0] + clearance, h[0] - clearance - sx
                y0_lo, y0_hi = l[1] + clearance, h[1] - clearance - sy
                if x0_hi <= x0_lo or y0_hi <= y0_lo:
                    continue
                x0 = _snap(rng.uniform(x0_lo, x0_hi))
                y0 = _snap(rng.uniform(y0_lo, y0_hi))
                box = (x0, y0, _snap(base), _snap(x0 + sx), _snap(y0 + sy), _snap(base + sz))
                if any(_overlaps(box, b, clearance) for b in boxes):
                    continue
                if any(_overlaps(box, s, clearance) for s in structure[2:]):
                    continue
                if any(_near_door(box, d, params) for d in doors):
                    continue
                boxes.append(box)
                cats.append(cat)
                break
    return boxes, cats


def _near_door(box, door, params, keep=0.9):
    axis, pos, d0, d1 = door
    if axis == 0:
        zone = (pos - keep, d0 - 0.1, 0, pos + keep, d1 + 0.1, 0)
    else:
        zone = (d0 - 0.1, pos - keep, 0, d1 + 0.1, pos + keep, 0)
    return _overlaps(box, zone, 0.0)


def generate_scene(seed: int, params: SceneParams | None = None) -> Scene:
    """Deterministic scene for (seed, params); retries placements until every
    object can be approached from the spawn region."""
    params = params or SceneParams()
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE7E]))
    for _ in range(params.max_retries):
        structure, rooms, doors = _structure_boxes(rng, params)
        obj_boxes, cats = _place_objects(rng, params, rooms, doors, structure)
        n_s = len(structure)
        boxes = np.array(structure + obj_boxes, dtype=np.float64)
        category = np.array([0] * n_s + cats, dtype=np.int64)
        instance = np.array([0] * n_s + list(range(1, len(cats) + 1)), dtype=np.int64)
        scene = Scene(int(seed), params, boxes, category, instance)
        if check_scene(scene):
            return scene
    raise GenerationFailed(f"no valid scene for seed {seed} after {params.max_retries} tries")


def spawn_cell(scene: Scene, seed: int = 0) -> tuple[int, int]:
    """Free cell near the scene center inside the largest navigable region."""
    nav = scene.navigable()
    labels, n = ndimage.label(nav)
    if n == 0:
        raise NoFreeSpawn("scene has no navigable cell")
    sizes = np.bincount(labels.ravel())[1:]
    main = labels == (np.argmax(sizes) + 1)
    cells = np.argwhere(main)
    center = np.array(nav.shape) / 2.0
    dist = np.linalg.norm(cells + 0.5 - center, axis=1)
    near = cells[dist <= dist.min() + 0.5 / VOXEL]
    rng = np.random.default_rng(np.random.SeedSequence([int(scene.seed), int(seed), 0x5BA]))
    i, j = near[rng.integers(len(near))]
    return int(i), int(j)


def check_scene(scene: Scene) -> bool:
    """Scene invariants: objects inside extents with unique ids, a spawn region
    covering >= 60% of navigable floor, and a reachable cell within 0.6 m of
    every object."""
    ext = np.array(scene.extents)
    obj = scene.object_indices
    if len(set(scene.instance[obj].tolist())) != len(obj):
        return False
    if np.any(scene.boxes[obj, :3] < 0) or np.any(scene.boxes[obj, 3:] > ext):
        return False
    nav = scene.navigable()
    if not nav.any():
        return False
    try:
        reach = scene.reachable_from(spawn_cell(scene))
    except NoFreeSpawn:
        return False
    if reach.sum() < 0.6 * nav.sum():
        return False
    near = int(round(0.6 / VOXEL))
    for k in obj:
        b = scene.boxes[k]
        lo = np.maximum(np.round(b[:2] / VOXEL).astype(int) - near, 0)
        hi = np.round(b[3:5] / VOXEL).astype(int) + near
        if not reach[lo[0]:hi[0], lo[1]:hi[1]].any():
            return False
    return True


# ------------------------------------------------------------------ agent


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    collided_last_step: bool = False
    step_count: int = 0


def reset(scene: Scene, seed: int = 0) -> AgentState:
    i, j = spawn_cell(scene, seed)
    return AgentState(Pose((i + 0.5) * VOXEL, (j + 0.5) * VOXEL, 0.0))


def is_free(scene: Scene, x: float, y: float) -> bool:
    """Disk of AGENT_RADIUS at (x, y) clear of every obstacle footprint."""
    for b in scene.boxes:
        if b[2] >= 1.5 or b[5] <= 0.0:
            continue
        dx = max(b[0] - x, 0.0, x - b[3])
        dy = max(b[1] - y, 0.0, y - b[4])
        if dx * dx + dy * dy < AGENT_RADIUS * AGENT_RADIUS:
            return False
    return True


def step(scene: Scene, state: AgentState, action: Action) -> AgentState:
    pose = state.pose
    action = Action(action)
    if action == Action.TURN_LEFT:
        return AgentState(Pose(pose.x, pose.y, pose.theta + TURN_ANGLE), False, state.step_count + 1)
    if action == Action.TURN_RIGHT:
        return AgentState(Pose(pose.x, pose.y, pose.theta - TURN_ANGLE), False, state.step_count + 1)
    t = pose.heading_rad
    dx, dy = math.cos(t), math.sin(t)
    n = int(math.ceil(FORWARD_STEP / (VOXEL / 2)))
    for k in range(1, n + 1):
        s = FORWARD_STEP * k / n
        if not is_free(scene, pose.x + s * dx, pose.y + s * dy):
            return AgentState(pose, True, state.step_count + 1)
    new = Pose(round(pose.x + FORWARD_STEP * dx, 12), round(pose.y + FORWARD_STEP * dy, 12), pose.theta)
    return AgentState(new, False, state.step_count + 1)


# ---------------------------------------------------------------- render


@dataclass(frozen=True)
class GroundTruthFrame:
    depth: np.ndarray
    category: np.ndarray
    instance: np.ndarray

    @property
    def shape(self):
        return self.depth.shape


@numba.njit(cache=True)
def _cast(boxes, origin, dirs):
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    which = np.full(n, -1, np.int64)
    for r in range(n):
        best = np.inf
        for b in range(boxes.shape[0]):
            t0 = 0.0
            t1 = np.inf
            ok = True
            for a in range(3):
                d = dirs[r, a]
                lo = boxes[b, a] - origin[a]
                hi = boxes[b, a + 3] - origin[a]
                if d == 0.0:
                    if lo > 0.0 or hi < 0.0:
                        ok = False
                        break
                else:
                    ta = lo / d
                    tb = hi / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
                    if t0 > t1:
                        ok = False
                        break
            if ok and t0 < best:
                best = t0
                which[r] = b
        t_hit[r] = best
    return t_hit, which


def render(scene: Scene, pose: Pose, cam: CameraModel) -> GroundTruthFrame:
    origin, dirs, range_ratio = camera_rays(pose, cam)
    t_hit, which = _cast(scene.boxes, origin, dirs)
    depth = t_hit / range_ratio
    cat = np.where(which >= 0, scene.category[which], 0)
    inst = np.where(which >= 0, scene.instance[which], 0)
    far = ~np.isfinite(depth) | (depth >= cam.depth_max)
    cat[far] = 0
    inst[far] = 0
    depth = np.clip(np.where(np.isfinite(depth), depth, cam.depth_max), cam.depth_min, cam.depth_max)
    shape = cam.shape
    return GroundTruthFrame(depth.reshape(shape), cat.reshape(shape).astype(np.int64),
                            inst.reshape(shape).astype(np.int64))


# ----------------------------------------------------------------- dumps

CATEGORY_COLORS = np.array([
    [0, 0, 0], [230, 25, 75], [60, 180, 75], [255, 225, 25],
    [0, 130, 200], [245, 130, 48], [145, 30, 180],
], dtype=np.uint8)


def write_pgm(path, depth: np.ndarray) -> None:
    """16-bit binary PGM of depth quantized to millimeters."""
    mm = np.clip(np.round(depth * 1000.0), 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(mm.tobytes())


def write_ppm(path, category: np.ndarray) -> None:
    rgb = CATEGORY_COLORS[np.asarray(category) % len(CATEGORY_COLORS)]
    h, w = category.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.float64) / 1000.0


def random_free_poses(scene: Scene, n: int, rng, reachable_only: bool = True,
                      spawn_seed: int = 0) -> list[Pose]:
    """Uniform poses on navigable cells, headings on the 30 degree lattice."""
    mask = scene.reachable_from(spawn_cell(scene, spawn_seed)) if reachable_only else scene.navigable()
    cells = np.argwhere(mask)
    pick = rng.integers(len(cells), size=n)
    theta = rng.integers(12, size=n) * TURN_ANGLE
    return [Pose((cells[k, 0] + 0.5) * VOXEL, (cells[k, 1] + 0.5) * VOXEL, float(t))
            for k, t in zip(pick, theta)]


def scene_params_from_dict(d: dict) -> SceneParams:
    d = dict(d)
    if "extents" in d:
        d["extents"] = tuple(d["extents"])
    return replace(SceneParams(), **d)


def bfs_reachable(free: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """4-connected flood fill; independent of scipy labeling for tests."""
    seen = np.zeros_like(free, dtype=bool)
    if not free[start]:
        return seen
    q = deque([start])
    seen[start] = True
    nx, ny = free.shape
    while q:
        i, j = q.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                q.append((a, b))
    return seen
