"""Fast-marching distance fields and the greedy local controller."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from seal.envsim import Action
from seal.geometry import Pose, normalize_degrees

SQRT2 = math.sqrt(2.0)
STOP = -1


class GoalOccupied(ValueError):
    pass


@dataclass(frozen=True)
class GridFrame:
    """Placement of a 2-D grid in the world: cell (0, 0) spans
    [x0, x0 + cell) x [y0, y0 + cell)."""

    x0: float
    y0: float
    cell: float

    def to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.x0) / self.cell + 1e-9)),
                int(math.floor((y - self.y0) / self.cell + 1e-9)))

    def to_cell_f(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x0) / self.cell, (y - self.y0) / self.cell)

    def center(self, i: int, j: int) -> tuple[float, float]:
        return (self.x0 + (i + 0.5) * self.cell, self.y0 + (j + 0.5) * self.cell)


def dilate(obstacles: np.ndarray, radius_cells: float) -> np.ndarray:
    if radius_cells <= 0:
        return obstacles.copy()
    r = int(math.ceil(radius_cells))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = (xx * xx + yy * yy) <= radius_cells * radius_cells
    return ndimage.binary_dilation(obstacles, structure=disk)


@numba.njit(cache=True)
def _solve2(a, b, h):
    # (t - a)^2 + (t - b)^2 = h^2 with upwind fallback
    if a > b:
        a, b = b, a
    if b - a >= h:
        return a + h
    return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))


@numba.njit(cache=True)
def _push(keys, vals, n, key, val):
    # binary min-heap held in two flat arrays; returns the new size
    k = n
    while k > 0:
        parent = (k - 1) >> 1
        if keys[parent] <= key:
            break
        keys[k] = keys[parent]
        vals[k] = vals[parent]
        k = parent
    keys[k] = key
    vals[k] = val
    return n + 1


@numba.njit(cache=True)
def _pop(keys, vals, n):
    top_key = keys[0]
    top_val = vals[0]
    n -= 1
    key = keys[n]
    val = vals[n]
    k = 0
    while True:
        c = 2 * k + 1
        if c >= n:
            break
        if c + 1 < n and keys[c + 1] < keys[c]:
            c += 1
        if keys[c] >= key:
            break
        keys[k] = keys[c]
        vals[k] = vals[c]
        k = c
    if n > 0:
        keys[k] = key
        vals[k] = val
    return top_key, top_val, n


@numba.njit(cache=True)
def _fmm(free, gi, gj, no_cut):
    nx, ny = free.shape
    inf = np.inf
    t = np.full((nx, ny), inf)
    known = np.zeros((nx, ny), np.bool_)
    t[gi, gj] = 0.0
    # every cell is pushed at most once per known neighbor
    keys = np.empty(8 * nx * ny + 1)
    vals = np.empty(8 * nx * ny + 1, np.int64)
    n = _push(keys, vals, 0, 0.0, gi * ny + gj)
    while n > 0:
        tv, flat, n = _pop(keys, vals, n)
        i = flat // ny
        j = flat % ny
        if known[i, j]:
            continue
        known[i, j] = True
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                a = i + di
                b = j + dj
                if a < 0 or b < 0 or a >= nx or b >= ny:
                    continue
                if known[a, b] or not free[a, b]:
                    continue
                if no_cut and di != 0 and dj != 0 and not (free[i, b] and free[a, j]):
                    continue
                # axis-aligned stencil over known neighbors
                ax = inf
                if a > 0 and known[a - 1, b]:
                    ax = t[a - 1, b]
                if a < nx - 1 and known[a + 1, b] and t[a + 1, b] < ax:
                    ax = t[a + 1, b]
                ay = inf
                if b > 0 and known[a, b - 1]:
                    ay = t[a, b - 1]
                if b < ny - 1 and known[a, b + 1] and t[a, b + 1] < ay:
                    ay = t[a, b + 1]
                cand = inf
                if ax < inf or ay < inf:
                    cand = _solve2(ax, ay, 1.0)
                # diagonal stencil, spacing sqrt(2)
                d1 = inf
                if a > 0 and b > 0 and known[a - 1, b - 1] and (
                        not no_cut or (free[a - 1, b] and free[a, b - 1])):
                    d1 = t[a - 1, b - 1]
                if a < nx - 1 and b < ny - 1 and known[a + 1, b + 1] and t[a + 1, b + 1] < d1 and (
                        not no_cut or (free[a + 1, b] and free[a, b + 1])):
                    d1 = t[a + 1, b + 1]
                d2 = inf
                if a > 0 and b < ny - 1 and known[a - 1, b + 1] and (
                        not no_cut or (free[a - 1, b] and free[a, b + 1])):
                    d2 = t[a - 1, b + 1]
                if a < nx - 1 and b > 0 and known[a + 1, b - 1] and t[a + 1, b - 1] < d2 and (
                        not no_cut or (free[a + 1, b] and free[a, b - 1])):
                    d2 = t[a + 1, b - 1]
                if d1 < inf or d2 < inf:
                    c2 = _solve2(d1, d2, SQRT2)
                    if c2 < cand:
                        cand = c2
                if cand < t[a, b]:
                    t[a, b] = cand
                    n = _push(keys, vals, n, cand, a * ny + b)
    return t


def fmm_distance_field(obstacles: np.ndarray, goal: tuple[int, int],
                       dilate_cells: float = 0.0, keep_free=None,
                       corner_cut: bool = True) -> np.ndarray:
    """Geodesic distance (in cells) to goal over free cells; inf elsewhere.

    Obstacles are dilated by dilate_cells first. keep_free is an optional
    mask of cells forced free after dilation (e.g. around the agent).
    With corner_cut=False the front never slips diagonally between two
    blocked cells, which a body of nonzero width cannot do either.
    """
    obstacles = np.asarray(obstacles, dtype=bool)
    gi, gj = int(goal[0]), int(goal[1])
    if not (0 <= gi < obstacles.shape[0] and 0 <= gj < obstacles.shape[1]):
        raise GoalOccupied(f"goal {goal} outside grid")
    if obstacles[gi, gj]:
        raise GoalOccupied(f"goal {goal} is an obstacle")
    blocked = dilate(obstacles, dilate_cells)
    blocked[gi, gj] = False
    if keep_free is not None:
        blocked &= ~keep_free
    return _fmm(~blocked, gi, gj, not corner_cut)


def dijkstra8(free: np.ndarray, goal: tuple[int, int]) -> np.ndarray:
    """8-connected Dijkstra with diagonal cost sqrt(2); reference oracle."""
    nx, ny = free.shape
    dist = np.full((nx, ny), np.inf)
    dist[goal] = 0.0
    heap = [(0.0, goal)]
    while heap:
        d, (i, j) = heapq.heappop(heap)
        if d > dist[i, j]:
            continue
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                a, b = i + di, j + dj
                if 0 <= a < nx and 0 <= b < ny and free[a, b]:
                    nd = d + (SQRT2 if di and dj else 1.0)
                    if nd < dist[a, b]:
                        dist[a, b] = nd
                        heapq.heappush(heap, (nd, (a, b)))
    return dist


# ------------------------------------------------------------ local policy


def _field_at(field: np.ndarray, ci: float, cj: float) -> float:
    i, j = int(math.floor(ci)), int(math.floor(cj))
    if i < 0 or j < 0 or i >= field.shape[0] or j >= field.shape[1]:
        return math.inf
    return float(field[i, j])


def segment_clear(field: np.ndarray, start: tuple[float, float], end: tuple[float, float],
                  margin: float = 0.1) -> bool:
    """Sample the segment at quarter-cell spacing; every cell within margin
    (Chebyshev, in cells) of a sample must hold a finite distance value."""
    length = math.hypot(end[0] - start[0], end[1] - start[1])
    n = max(1, int(math.ceil(length * 4)))
    for k in range(1, n + 1):
        s = k / n
        x = start[0] + s * (end[0] - start[0])
        y = start[1] + s * (end[1] - start[1])
        for dx in (-margin, margin):
            for dy in (-margin, margin):
                if not math.isfinite(_field_at(field, x + dx, y + dy)):
                    return False
    return True


def _subgoal(field, ci, cj, radius):
    """Lowest-valued cell within radius that is in straight-line reach."""
    i0, j0 = int(math.floor(ci)), int(math.floor(cj))
    r = int(math.ceil(radius))
    lo_i, hi_i = max(0, i0 - r), min(field.shape[0], i0 + r + 1)
    lo_j, hi_j = max(0, j0 - r), min(field.shape[1], j0 + r + 1)
    win = field[lo_i:hi_i, lo_j:hi_j]
    ii, jj = np.nonzero(np.isfinite(win))
    if not len(ii):
        return None
    vals = win[ii, jj]
    ii = ii + lo_i
    jj = jj + lo_j
    near = (ii + 0.5 - ci) ** 2 + (jj + 0.5 - cj) ** 2 <= radius * radius
    order = np.lexsort((jj[near], ii[near], vals[near]))
    cand_i, cand_j = ii[near][order], jj[near][order]
    for a, b in zip(cand_i[:64], cand_j[:64]):
        if segment_clear(field, (ci, cj), (a + 0.5, b + 0.5)):
            return (a + 0.5, b + 0.5)
    return None


def local_step(field: np.ndarray, pose: Pose, frame: GridFrame, step_m: float = 0.25,
               turn_deg: float = 30.0, stop_cells: float = 1.0, lookahead_steps: float = 4.0,
               hysteresis: float = 0.25) -> int:
    """Deterministic controller that follows the distance field.

    A short-term goal is the lowest-distance cell in straight-line reach
    within lookahead_steps forward steps. Among headings whose next step is
    clear, the one pointing closest to that goal wins (fewest turns, then
    left, on ties); the agent keeps going straight while the goal bearing
    stays within (0.5 + hysteresis) turns of its heading. Turns take the
    shorter direction, TurnLeft at exactly 180 degrees. Returns STOP within
    stop_cells of the goal. Forward is never emitted into a non-finite cell.
    """
    ci, cj = frame.to_cell_f(pose.x, pose.y)
    here = _field_at(field, ci, cj)
    if here <= stop_cells:
        return STOP
    step_c = step_m / frame.cell
    sub = _subgoal(field, ci, cj, max(lookahead_steps * step_c, 1.5))
    if sub is None or not math.isfinite(here):
        return _heading_step(field, pose, step_c, turn_deg, ci, cj, here)
    bearing = math.degrees(math.atan2(sub[1] - cj, sub[0] - ci))
    n_head = int(round(360.0 / turn_deg))
    best, best_key = None, None
    off0 = None
    for k in range(n_head):
        h = pose.theta + k * turn_deg
        end = (ci + step_c * math.cos(math.radians(h)), cj + step_c * math.sin(math.radians(h)))
        if not segment_clear(field, (ci, cj), end):
            continue
        off = abs(normalize_degrees(bearing - h + 180.0) - 180.0)
        if k == 0:
            off0 = off
        # prefer the bearing, then the fewest turns, then turning left
        key = (round(off, 6), min(k, n_head - k), k > n_head // 2)
        if best_key is None or key < best_key:
            best, best_key = k, key
    if best is None:
        return int(Action.TURN_LEFT)
    # keep going straight while the bearing stays inside a widened sector
    if off0 is not None and off0 <= turn_deg * (0.5 + hysteresis):
        return int(Action.FORWARD)
    if best == 0:
        return int(Action.FORWARD)
    return int(Action.TURN_LEFT) if best <= n_head // 2 else int(Action.TURN_RIGHT)


def _heading_step(field, pose, step_c, turn_deg, ci, cj, here):
    # fallback: score every heading by where one forward step would land
    n_head = int(round(360.0 / turn_deg))
    progress = np.full(n_head, -math.inf)
    for k in range(n_head):
        h = math.radians(pose.theta + k * turn_deg)
        end = (ci + step_c * math.cos(h), cj + step_c * math.sin(h))
        if not segment_clear(field, (ci, cj), end):
            continue
        v = _field_at(field, *end)
        progress[k] = (here - v) if math.isfinite(here) else -v
    best = int(np.argmax(progress))
    ties = np.nonzero(progress == progress[best])[0]
    if len(ties) > 1:
        best = int(min(ties, key=lambda k: (min(k, n_head - k), k > n_head // 2)))
    if not math.isfinite(progress[best]) or progress[best] <= 0:
        return int(Action.TURN_LEFT)
    if best == 0:
        return int(Action.FORWARD)
    return int(Action.TURN_LEFT) if best <= n_head // 2 else int(Action.TURN_RIGHT)


def simulate_path(field: np.ndarray, start: Pose, frame: GridFrame, goal: tuple[int, int],
                  success_cells: float = 2.0, max_steps: int = 500, step_m: float = 0.25,
                  turn_deg: float = 30.0, stop_cells: float = 1.0) -> int | None:
    """Drive local_step with ideal kinematics (forward blocked on non-finite
    cells); return the action count until within success_cells of goal."""
    pose = start
    gx, gy = frame.center(*goal)
    for n in range(max_steps + 1):
        if math.hypot(pose.x - gx, pose.y - gy) <= success_cells * frame.cell + 1e-9:
            return n
        a = local_step(field, pose, frame, step_m, turn_deg, stop_cells)
        if a == STOP:
            a = int(Action.TURN_LEFT)
        if a == Action.FORWARD:
            t = math.radians(pose.theta)
            nxt = (pose.x + step_m * math.cos(t), pose.y + step_m * math.sin(t))
            if segment_clear(field, frame.to_cell_f(pose.x, pose.y), frame.to_cell_f(*nxt)):
                pose = Pose(nxt[0], nxt[1], pose.theta)
        elif a == Action.TURN_LEFT:
            pose = Pose(pose.x, pose.y, normalize_degrees(pose.theta + turn_deg))
        else:
            pose = Pose(pose.x, pose.y, normalize_degrees(pose.theta - turn_deg))
    return None
