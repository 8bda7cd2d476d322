"""Exploration policies: a linear waypoint scorer over map features, the
fast-marching local controller that drives to the waypoint, and the
random / frontier / coverage baselines.

The map is planned on at twice the voxel size (10 cm cells). Unobserved
space is treated as traversable; obstacles are occupied voxel columns in
the 0.10-1.50 m band plus cells where a forward step collided.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from seal import envsim
from seal.envsim import AGENT_RADIUS, FORWARD_STEP, TURN_ANGLE, Action, Scene
from seal.geometry import CameraModel, Pose, depth_to_pointcloud, ego_to_geo
from seal.perception import NoiseProfile, PerceptionModel, predict_raw
from seal.planning import STOP, GoalOccupied, GridFrame, dilate, fmm_distance_field, local_step
from seal.semmap import (DEFAULT_DIMS, SemanticVoxelMap, explored_floor, new_map,
                         occupancy_floor_slice, update_points)

FEATURES = ("frontier", "mid_confidence", "distance", "revisit")
POLICY_KINDS = ("random", "frontier", "coverage", "gainful")
GLOBAL_PERIOD = 25
CANDIDATE_STRIDE = 4
PLAN_FACTOR = 2
FEATURE_SIGMA = 0.5  # meters, smoothing of the count features


class NoReachableCells(RuntimeError):
    pass


class NoFrontier(RuntimeError):
    pass


@dataclass(frozen=True)
class Waypoint:
    gx: int
    gy: int


@dataclass(frozen=True)
class GlobalPolicyParams:
    weights: tuple[float, ...] = (1.0, 1.0, -0.5, -1.0)
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(FEATURES):
            raise ValueError(f"need {len(FEATURES)} weights, got {len(self.weights)}")
        if not all(math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def to_dict(self, **meta) -> dict:
        return {"features": list(FEATURES), "weights": list(self.weights),
                "temperature": self.temperature, "seed": self.seed, "training": meta}

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalPolicyParams":
        if list(d.get("features", FEATURES)) != list(FEATURES):
            raise ValueError(f"policy features {d['features']} do not match {list(FEATURES)}")
        return cls(tuple(float(w) for w in d["weights"]), float(d["temperature"]), int(d["seed"]))


@dataclass(frozen=True)
class Policy:
    kind: str = "gainful"
    params: GlobalPolicyParams = GlobalPolicyParams()

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")


def baseline_policy(kind: str, params: GlobalPolicyParams | None = None) -> Policy:
    return Policy(kind, params or GlobalPolicyParams())


def save_policy(policy: Policy, path, **meta) -> None:
    d = policy.params.to_dict(**meta)
    d["kind"] = policy.kind
    Path(path).write_text(json.dumps(d, indent=1, sort_keys=True))


def load_policy(path) -> Policy:
    d = json.loads(Path(path).read_text())
    return Policy(d.get("kind", "gainful"), GlobalPolicyParams.from_dict(d))


# ------------------------------------------------------------ nav grid


@dataclass
class NavGrid:
    """Coarse 2-D view of a voxel map for planning."""

    frame: GridFrame
    obstacles: np.ndarray  # raw observed obstacles (plan cells)
    blocked: np.ndarray  # dilated, with the agent's own cell kept free
    explored: np.ndarray

    @property
    def shape(self):
        return self.obstacles.shape


def _pool_any(a: np.ndarray, f: int) -> np.ndarray:
    l, w = a.shape
    return a[:l - l % f, :w - w % f].reshape(l // f, f, w // f, f).any(axis=(1, 3))


def _pool_sum(a: np.ndarray, f: int) -> np.ndarray:
    l, w = a.shape
    return a[:l - l % f, :w - w % f].reshape(l // f, f, w // f, f).sum(axis=(1, 3))


BLIND_RADIUS = 0.9  # meters of floor around the agent the camera cannot see


def nav_grid(m: SemanticVoxelMap, pose: Pose, collisions: np.ndarray | None = None,
             visits: np.ndarray | None = None, factor: int = PLAN_FACTOR) -> NavGrid:
    cell = m.voxel_size * factor
    c = m.corner
    frame = GridFrame(float(c[0]), float(c[1]), cell)
    obstacles = _pool_any(occupancy_floor_slice(m), factor)
    if collisions is not None:
        obstacles = obstacles | collisions
    explored = _pool_any(explored_floor(m), factor)
    if visits is not None and visits.any():
        # floor under and just around visited poses counts as known
        explored |= dilate(visits > 0, BLIND_RADIUS / cell)
    blocked = dilate(obstacles, AGENT_RADIUS / cell + 0.5)
    _free_agent_cell(blocked, obstacles, frame, pose)
    return NavGrid(frame, obstacles, blocked, explored)


@numba.njit(cache=True)
def _stamp(grid, cells, offsets):
    """Set grid at every cell + offset (clipped); returns cells newly set."""
    n = 0
    for p in range(cells.shape[0]):
        for q in range(offsets.shape[0]):
            i = cells[p, 0] + offsets[q, 0]
            j = cells[p, 1] + offsets[q, 1]
            if 0 <= i < grid.shape[0] and 0 <= j < grid.shape[1] and not grid[i, j]:
                grid[i, j] = True
                n += 1
    return n


def _disk(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    ii, jj = np.mgrid[-r:r + 1, -r:r + 1]
    keep = ii * ii + jj * jj <= radius * radius
    return np.stack([ii[keep], jj[keep]], axis=1).astype(np.int64)


class NavState:
    """Planning grids kept in step with a voxel map during an episode.

    Equivalent to rebuilding nav_grid from the map after every update, but
    each observation only touches the cells its points fall in.
    """

    def __init__(self, m: SemanticVoxelMap, factor: int = PLAN_FACTOR,
                 z_range=(0.10, 1.50)):
        self.factor = factor
        self.cell = m.voxel_size * factor
        c = m.corner
        self.frame = GridFrame(float(c[0]), float(c[1]), self.cell)
        shape = (m.dims[1] // factor, m.dims[2] // factor)
        self.obstacles = np.zeros(shape, dtype=bool)
        self.dilated = np.zeros(shape, dtype=bool)
        self.explored = np.zeros(shape, dtype=bool)
        self.visits = np.zeros(shape, dtype=np.int64)
        self.z0 = int(round(z_range[0] / m.voxel_size))
        self.z1 = int(round(z_range[1] / m.voxel_size))
        self._grow = _disk(AGENT_RADIUS / self.cell + 0.5)
        self._blind = _disk(BLIND_RADIUS / self.cell)
        self._one = np.zeros((1, 2), dtype=np.int64)
        self.lo = None  # bounding box of everything known, plan cells
        self.hi = None
        self.cache = None  # last goal field, reused while its inputs are unchanged

    def _extend(self, cells):
        if not len(cells):
            return
        lo, hi = cells.min(axis=0), cells.max(axis=0)
        self.lo = lo if self.lo is None else np.minimum(self.lo, lo)
        self.hi = hi if self.hi is None else np.maximum(self.hi, hi)

    def add_points(self, idx: np.ndarray, dims) -> None:
        """idx: voxel indices (N, 3) of the points just fused (any, incl. out of bounds)."""
        _, l, w, h = dims
        ok = (idx[:, 0] >= 0) & (idx[:, 1] >= 0) & (idx[:, 2] >= 0) & \
             (idx[:, 0] < l) & (idx[:, 1] < w) & (idx[:, 2] < h)
        idx = idx[ok]
        cells = idx[:, :2] // self.factor
        inside = (cells[:, 0] < self.explored.shape[0]) & (cells[:, 1] < self.explored.shape[1])
        cells, zs = cells[inside], idx[inside, 2]
        _stamp(self.explored, cells, self._one)
        self._extend(cells)
        band = (zs >= self.z0) & (zs < self.z1)
        self.add_obstacles(idx[inside][band, :2] // self.factor)

    def add_obstacles(self, cells: np.ndarray) -> None:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        if not len(cells):
            return
        _stamp(self.obstacles, cells, self._one)
        _stamp(self.dilated, cells, self._grow)

    def visit(self, pose: Pose) -> None:
        i, j = self.frame.to_cell(pose.x, pose.y)
        if 0 <= i < self.visits.shape[0] and 0 <= j < self.visits.shape[1]:
            self.visits[i, j] += 1
            cell = np.array([[i, j]], dtype=np.int64)
            _stamp(self.explored, cell, self._blind)
            self._extend(cell)

    def grid(self, pose: Pose) -> NavGrid:
        blocked = self.dilated.copy()
        _free_agent_cell(blocked, self.obstacles, self.frame, pose)
        return NavGrid(self.frame, self.obstacles, blocked, self.explored)

    def window(self, pose: Pose, goal=None, margin: int = 10):
        """Slices covering the known area, the agent and the goal plus margin."""
        pts = [np.array(self.frame.to_cell(pose.x, pose.y))]
        if goal is not None:
            pts.append(np.asarray(goal))
        if self.lo is not None:
            pts += [self.lo, self.hi]
        pts = np.array(pts)
        lo = np.maximum(pts.min(axis=0) - margin, 0)
        hi = np.minimum(pts.max(axis=0) + margin + 1, self.obstacles.shape)
        return slice(int(lo[0]), int(hi[0])), slice(int(lo[1]), int(hi[1]))


def _free_agent_cell(blocked, obstacles, frame, pose):
    ai, aj = frame.to_cell(pose.x, pose.y)
    if 0 <= ai < blocked.shape[0] and 0 <= aj < blocked.shape[1]:
        # the agent is physically here, so the dilation margin around it is not binding
        win = (slice(max(ai - 1, 0), ai + 2), slice(max(aj - 1, 0), aj + 2))
        blocked[win] &= obstacles[win]
        blocked[ai, aj] = False


def cropped_field(blocked: np.ndarray, goal, window) -> np.ndarray | None:
    """FMM distance to goal computed inside window; inf outside it.
    None if the goal is blocked or outside the window."""
    sx, sy = window
    gi, gj = goal[0] - sx.start, goal[1] - sy.start
    out = np.full(blocked.shape, np.inf)
    try:
        out[sx, sy] = fmm_distance_field(blocked[sx, sy], (gi, gj), corner_cut=False)
    except GoalOccupied:
        return None
    return out


def frontier_cells(grid: NavGrid) -> np.ndarray:
    """Known free cells with an unexplored 4-neighbor."""
    unknown = ~grid.explored
    near = ndimage.binary_dilation(unknown, structure=ndimage.generate_binary_structure(2, 1))
    return grid.explored & ~grid.blocked & near


def _agent_field(grid: NavGrid, pose: Pose) -> np.ndarray:
    ai, aj = grid.frame.to_cell(pose.x, pose.y)
    return fmm_distance_field(grid.blocked, (ai, aj), corner_cut=False)


# -------------------------------------------------------------- features


def mid_confidence_columns(m: SemanticVoxelMap, s_hat: float = 0.9) -> np.ndarray:
    """Per (x, y) column, voxels seen with some category score that has not
    yet passed s_hat."""
    best = m.scores.max(axis=0)
    return ((best > 0.0) & (best <= s_hat)).sum(axis=2)


def waypoint_features(m: SemanticVoxelMap, pose: Pose, grid: NavGrid, dist: np.ndarray,
                      visits: np.ndarray | None = None, s_hat: float = 0.9,
                      stride: int = CANDIDATE_STRIDE):
    """Candidate waypoints (map cell indices, (N, 2)) and their features (N, 4).

    Candidates are reachable cells on a stride-lattice of the map; features
    are in FEATURES order.
    """
    f = PLAN_FACTOR
    l, w = m.dims[1], m.dims[2]
    gi, gj = np.meshgrid(np.arange(0, l, stride), np.arange(0, w, stride), indexing="ij")
    gi, gj = gi.ravel(), gj.ravel()
    pi, pj = gi // f, gj // f
    inside = (pi < dist.shape[0]) & (pj < dist.shape[1])
    gi, gj, pi, pj = gi[inside], gj[inside], pi[inside], pj[inside]
    ok = np.isfinite(dist[pi, pj])
    gi, gj, pi, pj = gi[ok], gj[ok], pi[ok], pj[ok]
    if not len(gi):
        raise NoReachableCells("no reachable candidate waypoint")
    sigma = FEATURE_SIGMA / grid.frame.cell
    front = frontier_cells(grid)
    if front.any():
        d_front = ndimage.distance_transform_edt(~front) * grid.frame.cell
        f_front = np.exp(-d_front[pi, pj])
    else:
        f_front = np.zeros(len(pi))
    mid = _pool_sum(mid_confidence_columns(m, s_hat), f).astype(np.float64)
    mid = ndimage.gaussian_filter(mid, sigma, mode="constant")
    f_mid = np.log1p(mid[pi, pj])
    f_dist = dist[pi, pj] * grid.frame.cell / 5.0
    if visits is not None and visits.any():
        rev = ndimage.gaussian_filter(visits.astype(np.float64), sigma, mode="constant")
        f_rev = rev[pi, pj] / max(1.0, float(visits.sum())) * (2 * math.pi * sigma * sigma)
    else:
        f_rev = np.zeros(len(pi))
    feats = np.stack([f_front, f_mid, f_dist, f_rev], axis=1)
    return np.stack([gi, gj], axis=1), feats


def softmax_logprobs(feats: np.ndarray, params: GlobalPolicyParams) -> np.ndarray:
    z = feats @ np.asarray(params.weights, dtype=np.float64) / params.temperature
    return z - logsumexp(z)


def sample_index(logp: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(np.exp(logp - logp.max()))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def select_waypoint(m: SemanticVoxelMap, pose: Pose, params: GlobalPolicyParams,
                    rng: np.random.Generator, grid: NavGrid | None = None,
                    dist: np.ndarray | None = None, visits=None, s_hat: float = 0.9):
    """Sample a waypoint from the softmax over candidate scores.

    Returns (Waypoint, log-probability, info) where info carries the
    candidate array, features, log-probabilities and chosen index.
    """
    if grid is None:
        grid = nav_grid(m, pose)
    if dist is None:
        dist = _agent_field(grid, pose)
    cands, feats = waypoint_features(m, pose, grid, dist, visits, s_hat)
    logp = softmax_logprobs(feats, params)
    k = sample_index(logp, rng)
    info = {"candidates": cands, "features": feats, "logp": logp, "index": k}
    return Waypoint(int(cands[k, 0]), int(cands[k, 1])), float(logp[k]), info


def grad_logp(feats: np.ndarray, logp: np.ndarray, k: int, temperature: float) -> np.ndarray:
    """d log pi(k) / d weights for the linear softmax."""
    return (feats[k] - np.exp(logp) @ feats) / temperature


def frontier_waypoint(grid: NavGrid, dist: np.ndarray) -> tuple[int, int]:
    """Plan cell of the frontier cell nearest by geodesic distance."""
    front = frontier_cells(grid) & np.isfinite(dist)
    if not front.any():
        raise NoFrontier("map has no reachable frontier")
    d = np.where(front, dist, np.inf)
    flat = int(np.argmin(d))  # ties -> lowest flat index
    return divmod(flat, d.shape[1])


# --------------------------------------------------------------- episode


@dataclass
class GlobalStep:
    step: int
    waypoint: Waypoint
    features: list[float]
    logp: float
    grad: np.ndarray | None = None


@dataclass
class EpisodeTrace:
    poses: list[Pose] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[int] = field(default_factory=list)
    coverage: list[int] = field(default_factory=list)
    global_steps: list[GlobalStep] = field(default_factory=list)
    collisions: int = 0

    def __len__(self):
        return len(self.actions)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "x", "y", "theta", "action", "reward"])
            for t, (p, a, r) in enumerate(zip(self.poses, self.actions, self.rewards), 1):
                wr.writerow([t, f"{p.x:.4f}", f"{p.y:.4f}", f"{p.theta:.1f}", a, r])


@dataclass
class Frame:
    pose: Pose
    depth: np.ndarray
    raw: np.ndarray  # uncalibrated scores (C, H, W), float32


@dataclass
class Episode:
    trace: EpisodeTrace
    map: SemanticVoxelMap
    frames: list[Frame]


def _observe(scene, pose, cam, noise, override, t):
    gt = envsim.render(scene, pose, cam)
    if override is not None and t in override:
        raw = override[t](gt)
    else:
        raw = predict_raw(gt, pose, noise)
    return gt, raw


def run_episode(scene: Scene, policy: Policy, model: PerceptionModel, noise: NoiseProfile,
                T: int = 300, cam: CameraModel | None = None, s_hat: float = 0.9, seed: int = 0,
                dims=DEFAULT_DIMS, keep_frames: bool = False, override=None) -> Episode:
    """Run one exploration episode of T actions, each followed by a map update.

    override maps a step index (0-based) to a function gt -> raw scores used
    instead of the noisy oracle for that frame.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    cam = cam or CameraModel()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9E11C7]))
    state = envsim.reset(scene, seed)
    m = new_map(dims, (state.pose.x, state.pose.y))
    nav = NavState(m)
    trace = EpisodeTrace()
    frames = []
    goal = None  # plan cell
    since_plan = 0
    reward = 0
    cover = 0
    step_c = FORWARD_STEP / nav.cell
    for t in range(T):
        pose = state.pose
        if policy.kind == "random":
            action = int(rng.integers(3))
        else:
            grid = nav.grid(pose)
            action = STOP
            if goal is not None and since_plan < GLOBAL_PERIOD:
                action = _drive(grid, nav, pose, goal, step_c)
            if action == STOP:
                # period elapsed, waypoint reached or unreachable: pick a new one
                goal = _plan(policy, m, pose, grid, nav, rng, trace, t, s_hat)
                since_plan = 0
                if goal is not None:
                    action = _drive(grid, nav, pose, goal, step_c)
            if action == STOP:
                action = int(Action.TURN_LEFT)  # hold position and look around
            since_plan += 1
        state = envsim.step(scene, state, Action(action))
        if state.collided_last_step:
            trace.collisions += 1
            th = math.radians(pose.theta)
            ahead = nav.frame.to_cell(pose.x + (AGENT_RADIUS + 0.1) * math.cos(th),
                                      pose.y + (AGENT_RADIUS + 0.1) * math.sin(th))
            nav.add_obstacles(np.array([ahead]))
        pose = state.pose
        gt, raw = _observe(scene, pose, cam, noise, override, t)
        cloud = ego_to_geo(depth_to_pointcloud(gt.depth, cam), pose)
        scores = model.calibrate(raw)[:, cloud.pixels[:, 0], cloud.pixels[:, 1]].T
        stats = update_points(m, cloud.points, scores, s_hat)
        nav.add_points(m.world_to_index(cloud.points), m.dims)
        nav.visit(pose)
        reward += stats.newly_confident
        cover += stats.newly_occupied
        trace.poses.append(pose)
        trace.actions.append(action)
        trace.rewards.append(reward)
        trace.coverage.append(cover)
        if keep_frames:
            frames.append(Frame(pose, gt.depth.astype(np.float32), raw.astype(np.float32)))
    return Episode(trace, m, frames)


def _drive(grid: NavGrid, nav: NavState, pose: Pose, goal, step_c: float) -> int:
    window = nav.window(pose, goal)
    key = (tuple(goal), window[0].start, window[0].stop, window[1].start, window[1].stop)
    crop = grid.blocked[window]
    hit = nav.cache
    if hit is not None and hit[0] == key and np.array_equal(hit[1], crop):
        field_ = hit[2]
    else:
        field_ = cropped_field(grid.blocked, goal, window)
        nav.cache = (key, crop.copy(), field_)
    if field_ is None:
        return STOP
    return local_step(field_, pose, grid.frame, FORWARD_STEP, TURN_ANGLE, stop_cells=step_c)


def _plan(policy, m, pose, grid, nav, rng, trace, t, s_hat):
    """Choose the next waypoint; returns a plan cell or None."""
    f = PLAN_FACTOR
    visits = nav.visits
    ai, aj = grid.frame.to_cell(pose.x, pose.y)
    dist = cropped_field(grid.blocked, (ai, aj), nav.window(pose))
    if dist is None:
        return None
    if policy.kind == "frontier":
        try:
            cell = frontier_waypoint(grid, dist)
            wp = Waypoint(cell[0] * f, cell[1] * f)
            trace.global_steps.append(GlobalStep(t, wp, [], 0.0))
            return cell
        except NoFrontier:
            uniform = GlobalPolicyParams((0.0,) * len(FEATURES))
            try:
                wp, lp, _ = select_waypoint(m, pose, uniform, rng, grid, dist, visits, s_hat)
            except NoReachableCells:
                return None
            trace.global_steps.append(GlobalStep(t, wp, [], lp))
            return (wp.gx // f, wp.gy // f)
    try:
        wp, lp, info = select_waypoint(m, pose, policy.params, rng, grid, dist, visits, s_hat)
    except NoReachableCells:
        return None
    k = info["index"]
    g = grad_logp(info["features"], info["logp"], k, policy.params.temperature)
    trace.global_steps.append(GlobalStep(t, wp, info["features"][k].tolist(), lp, g))
    return (wp.gx // f, wp.gy // f)


# -------------------------------------------------------------- training


def reinforce_gradient(feats: np.ndarray, params: GlobalPolicyParams, reward_fn,
                       rng: np.random.Generator, samples: int) -> np.ndarray:
    """Monte-Carlo estimate of d E[R] / d weights for a one-shot choice
    among candidates with the given features."""
    logp = softmax_logprobs(feats, params)
    g = np.zeros(len(params.weights))
    for _ in range(samples):
        k = sample_index(logp, rng)
        g += reward_fn(k) * grad_logp(feats, logp, k, params.temperature)
    return g / samples


def exact_bandit_gradient(feats: np.ndarray, params: GlobalPolicyParams, rewards) -> np.ndarray:
    logp = softmax_logprobs(feats, params)
    p = np.exp(logp)
    mean_f = p @ feats
    return (p * np.asarray(rewards, float)) @ (feats - mean_f) / params.temperature


def train_policy(train_scenes, params0: GlobalPolicyParams, episodes: int, lr: float,
                 model: PerceptionModel | None = None, noise: NoiseProfile | None = None,
                 T: int = 300, cam: CameraModel | None = None, reward: str = "gainful",
                 s_hat: float = 0.9, dims=DEFAULT_DIMS, ema: float = 0.9, seed: int = 0):
    """REINFORCE on waypoint decisions with an exponential-average baseline.

    The return of every waypoint decision in an episode is the terminal
    reward (gainful-curiosity or coverage count), normalized by the running
    baseline. Returns (params, history of terminal rewards).
    """
    if not train_scenes:
        raise ValueError("need at least one training scene")
    if reward not in ("gainful", "coverage"):
        raise ValueError(f"unknown reward {reward!r}")
    model = model or PerceptionModel()
    noise = noise or NoiseProfile()
    w = np.asarray(params0.weights, dtype=np.float64)
    base = None
    history = []
    for e in range(episodes):
        scene = train_scenes[e % len(train_scenes)]
        params = GlobalPolicyParams(tuple(float(v) for v in w), params0.temperature, params0.seed)
        ep = run_episode(scene, Policy(reward, params), model, noise, T, cam, s_hat,
                         seed=seed * 100_003 + e, dims=dims)
        R = float(ep.trace.rewards[-1] if reward == "gainful" else ep.trace.coverage[-1])
        history.append(R)
        if base is None:
            base = R
        adv = (R - base) / max(abs(base), 1.0)
        grads = [g.grad for g in ep.trace.global_steps if g.grad is not None]
        if grads and lr != 0.0:
            w = w + lr * adv * np.mean(grads, axis=0)
        base = ema * base + (1.0 - ema) * R
    out = GlobalPolicyParams(tuple(float(v) for v in w), params0.temperature, params0.seed)
    return out, history
