"""Independent brute-force references used by the test-suite."""

from __future__ import annotations

import itertools
import math

import numba
import numpy as np


# ------------------------------------------------------------------ rays


def march_cells(origin, direction, dims, vs, step=1e-4, max_dist=None):
    """Visit cells by stepping along the ray at a fixed small increment."""
    o = np.asarray(origin, float)
    d = np.asarray(direction, float)
    dims = np.asarray(dims)
    extent = dims * vs
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if d[a] == 0:
            if o[a] < 0 or o[a] > extent[a]:
                return []
            continue
        ta, tb = (0 - o[a]) / d[a], (extent[a] - o[a]) / d[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    if max_dist is not None:
        t1 = min(t1, max_dist)
    if t1 <= t0:
        return []
    ts = np.arange(t0 + step / 2, t1, step)
    pts = o[None] + ts[:, None] * d[None]
    cells = np.floor(pts / vs).astype(np.int64)
    cells = np.clip(cells, 0, dims - 1)
    keep = np.ones(len(cells), bool)
    keep[1:] = np.any(cells[1:] != cells[:-1], axis=1)
    return [tuple(int(v) for v in c) for c in cells[keep]]


def march_boxes(boxes, origin, direction, step=1e-4, t_max=10.0):
    """First t at which a fine march is inside any box (faces inclusive)."""
    o = np.asarray(origin, float)
    d = np.asarray(direction, float)
    ts = np.arange(0.0, t_max, step)
    pts = o[None] + ts[:, None] * d[None]
    first = len(ts)
    which = -1
    for k, b in enumerate(boxes):
        inside = np.nonzero(np.all((pts >= b[:3]) & (pts <= b[3:]), axis=1))[0]
        if len(inside) and inside[0] < first:
            first, which = inside[0], k
    if which < 0:
        return math.inf, -1
    return float(ts[first]), which


def march_grid_first(grid, origin, direction, vs, t_lo, t_hi, step=1e-4):
    """First nonzero cell met by a fine march over [t_lo, t_hi]."""
    o = np.asarray(origin, float)
    d = np.asarray(direction, float)
    ts = np.arange(t_lo, t_hi, step)
    pts = o[None] + ts[:, None] * d[None]
    idx = np.floor(pts / vs).astype(np.int64)
    dims = np.array(grid.shape)
    ok = np.all((idx >= 0) & (idx < dims), axis=1)
    idx, ts = idx[ok], ts[ok]
    vals = grid[idx[:, 0], idx[:, 1], idx[:, 2]]
    hit = np.nonzero(vals != 0)[0]
    if not len(hit):
        return None, math.inf
    return tuple(int(v) for v in idx[hit[0]]), float(ts[hit[0]])


# ----------------------------------------------------------- components


def flood_components(mask: np.ndarray, reach: int = 0) -> np.ndarray:
    """Connected labels by explicit stack flood fill, numbered in scan order.

    reach=0 links face neighbors only; reach=r > 0 links any two voxels
    whose Chebyshev distance is at most r (r=1 is 26-connectivity).
    """
    if reach:
        rng = range(-reach, reach + 1)
        offsets = [o for o in itertools.product(rng, rng, rng) if any(o)]
    else:
        offsets = [o for o in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, o)) == 1]
    labels = np.zeros(mask.shape, dtype=np.int64)
    nxt = 0
    dims = mask.shape
    for start in zip(*np.nonzero(mask)):
        if labels[start]:
            continue
        nxt += 1
        labels[start] = nxt
        stack = [start]
        while stack:
            c = stack.pop()
            for o in offsets:
                n = (c[0] + o[0], c[1] + o[1], c[2] + o[2])
                if all(0 <= n[a] < dims[a] for a in range(3)) and mask[n] and not labels[n]:
                    labels[n] = nxt
                    stack.append(n)
    return labels


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """Label images a, b induce the same partition of their nonzero support."""
    if not np.array_equal(a > 0, b > 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len(set(p[0] for p in pairs)) == len(set(p[1] for p in pairs))


# ---------------------------------------------------------------- planner


@numba.njit(cache=True)
def _clear(field, x0, y0, x1, y1):
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(1, int(math.ceil(length * 4)))
    for k in range(1, n + 1):
        s = k / n
        x = x0 + s * (x1 - x0)
        y = y0 + s * (y1 - y0)
        for dx in (-0.1, 0.1):
            for dy in (-0.1, 0.1):
                i = int(math.floor(x + dx))
                j = int(math.floor(y + dy))
                if i < 0 or j < 0 or i >= field.shape[0] or j >= field.shape[1]:
                    return False
                if not np.isfinite(field[i, j]):
                    return False
    return True


@numba.njit(cache=True)
def action_graph_bfs(field, sx, sy, sh, gx, gy, succ, step, res, max_states):
    """Fewest actions (forward `step` cells, +-30 degree turns) until within
    succ cells of (gx, gy). A forward move needs every cell within 0.1 cell
    of its sampled points to be finite. States are deduplicated on a
    res-cell lattice."""
    nx, ny = field.shape
    bx = int(nx / res) + 2
    by = int(ny / res) + 2
    seen = np.zeros((bx, by, 12), np.bool_)
    qx = np.empty(max_states)
    qy = np.empty(max_states)
    qh = np.empty(max_states, np.int64)
    qn = np.empty(max_states, np.int64)
    head = 0
    qx[0] = sx
    qy[0] = sy
    qh[0] = sh
    qn[0] = 0
    tail = 1
    while head < tail:
        x = qx[head]
        y = qy[head]
        h = qh[head]
        n = qn[head]
        head += 1
        if math.hypot(x - gx, y - gy) <= succ + 1e-9:
            return n
        kx = int(round(x / res))
        ky = int(round(y / res))
        if kx < 0 or ky < 0 or kx >= bx or ky >= by or seen[kx, ky, h]:
            continue
        seen[kx, ky, h] = True
        if tail + 3 > max_states:
            return -1
        for dh in (1, -1):
            qx[tail] = x
            qy[tail] = y
            qh[tail] = (h + dh) % 12
            qn[tail] = n + 1
            tail += 1
        t = math.radians(h * 30.0)
        x1 = x + step * math.cos(t)
        y1 = y + step * math.sin(t)
        if _clear(field, x, y, x1, y1):
            qx[tail] = x1
            qy[tail] = y1
            qh[tail] = h
            qn[tail] = n + 1
            tail += 1
    return -1


def bfs_grid(free: np.ndarray, start) -> np.ndarray:
    """4-connected BFS step distance from start over free cells."""
    from collections import deque

    dist = np.full(free.shape, np.inf)
    dist[start] = 0
    q = deque([start])
    while q:
        i, j = q.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < free.shape[0] and 0 <= b < free.shape[1] and free[a, b] and dist[a, b] == np.inf:
                dist[a, b] = dist[i, j] + 1
                q.append((a, b))
    return dist


# --------------------------------------------------------------------- AP


def iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def exhaustive_ap(preds, gts, thr=0.5):
    """AP for one category by brute force.

    preds: list of (frame, score, mask); gts: list of (frame, mask).
    For every prefix of the confidence ranking the true-positive count is the
    largest matching found by enumerating all injective assignments; the
    precision envelope is integrated over every recall level.
    """
    n_gt = len(gts)
    if n_gt == 0:
        return None
    order = sorted(range(len(preds)), key=lambda k: (-preds[k][1], k))
    ranked = [preds[k] for k in order]
    ok = [[g for g, (gf, gm) in enumerate(gts) if gf == pf and iou(pm, gm) >= thr]
          for pf, _, pm in ranked]
    curve = []
    for k in range(1, len(ranked) + 1):
        best = 0
        for perm in itertools.product(*[[None] + ok[i] for i in range(k)]):
            used = [g for g in perm if g is not None]
            if len(used) == len(set(used)):
                best = max(best, len(used))
        curve.append((best / n_gt, best / k))
    ap = 0.0
    prev = 0.0
    for r in sorted(set(r for r, _ in curve)):
        if r == 0:
            continue
        ap += (r - prev) * max(pp for rr, pp in curve if rr >= r)
        prev = r
    return ap


# ---------------------------------------------------------------- entropy


def entropy_of_scores(scores) -> float:
    s = np.asarray(scores, float)
    v = np.append(s, 1.0 - s.max())
    v = v / v.sum()
    v = v[v > 0]
    return float(-(v * np.log(v)).sum())


# ---------------------------------------------------------------- render


def march_depth(boxes, origin, dirs, step, t_max):
    """First t at which a fixed-step march along each ray lies inside any
    box (faces inclusive); inf where nothing is met before t_max."""
    o = np.asarray(origin, float)
    d = np.asarray(dirs, float)
    lo = np.asarray(boxes, float)[:, :3]
    hi = np.asarray(boxes, float)[:, 3:]
    first = np.full(len(d), np.inf)
    for t in np.arange(step, t_max + step, step):
        todo = np.flatnonzero(~np.isfinite(first))
        if not len(todo):
            break
        p = o[None] + t * d[todo]
        inside = ((p[:, None] >= lo[None]) & (p[:, None] <= hi[None])).all(axis=2).any(axis=1)
        first[todo[inside]] = t
    return first


def box_chord(box, origin, direction):
    """Length of the ray's intersection with a closed box (0 when missed)."""
    t0, t1 = 0.0, math.inf
    for a in range(3):
        lo, hi = box[a] - origin[a], box[a + 3] - origin[a]
        if direction[a] == 0.0:
            if lo > 0.0 or hi < 0.0:
                return 0.0
            continue
        ta, tb = sorted((lo / direction[a], hi / direction[a]))
        t0, t1 = max(t0, ta), min(t1, tb)
    return max(0.0, t1 - t0)
