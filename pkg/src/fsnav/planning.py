"""Route planners: the midline baseline and a hybrid-A* racing line.

The midline pairs each left-boundary cone with its nearest right-boundary
cone and follows the midpoints. The racing-line planner searches a forward
motion-primitive lattice (arcs at five curvatures) over an inflated costmap,
with an obstacle-aware Dijkstra heuristic and an analytic Dubins shot near
the goal; a closed racing line is stitched from hybrid-A* runs between
anchor poses sampled along the midline.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .cone_map import BoundaryError, ConeRegistry, order_boundary, orient_chain
from .core import (PATH_CURVATURE, PATH_HEADING, PATH_SPEED, ConeColor,
                   PathPlan, Pose2D, normalize_angle, normalize_angles)
from .dubins import shortest_dubins
from .grid import OccupancyGrid

log = logging.getLogger(__name__)

PATH_STEP = 0.25
MIDLINE_SPEED = 8.0
PAIR_RADIUS = 8.0
# octile-metric worst-case overestimate of Euclidean distance
_OCTILE_FACTOR = math.cos(math.pi / 8) + (math.sqrt(2) - 1) * math.sin(math.pi / 8)


class PlanningError(RuntimeError):
    pass


class OpenSetExhausted(PlanningError):
    def __init__(self, msg: str, explored: int):
        super().__init__(f"{msg} (explored {explored} nodes)")
        self.explored = explored


@dataclass
class PlannerParams:
    min_turn_radius: float = 3.5
    curvature_penalty: float = 1.2    # cost per rad of turning
    boundary_inflation: float = 0.6   # lethal radius around walls, m
    cost_weight: float = 0.25         # multiplier on the soft costmap term
    primitive_arc: float = 1.0        # arc length of each motion primitive, m
    heading_bins: int = 72
    inflation_falloff: float = 0.6    # soft-cost decay width beyond the lethal band
    goal_pos_tol: float = 0.3
    goal_heading_tol: float = math.radians(15)
    dubins_trigger: float = 20.0
    speed: float = 8.0
    min_speed: float = 2.0
    reg_min_radius: float = 4.0       # target-speed profile knee (see guidance)

    def curvatures(self) -> tuple[float, ...]:
        k = 1.0 / self.min_turn_radius
        return (0.0, 0.5 * k, -0.5 * k, k, -k)


@dataclass
class Costmap:
    """Lethal mask plus a soft cost band derived from wall distance."""

    origin_x: float
    origin_y: float
    resolution: float
    lethal: np.ndarray   # bool
    soft: np.ndarray     # [0, 1]

    @classmethod
    def from_grid(cls, grid: OccupancyGrid, params: PlannerParams) -> "Costmap":
        occ = grid.occupied_mask()
        dist = distance_transform_edt(~occ) * grid.resolution
        lethal = dist <= params.boundary_inflation
        falloff = max(params.inflation_falloff, grid.resolution)
        soft = np.clip(1.0 - (dist - params.boundary_inflation) / falloff, 0.0, 1.0)
        soft[lethal] = 1.0
        return cls(grid.origin.x, grid.origin.y, grid.resolution, lethal, soft)

    def indices(self, xs, ys):
        ix = np.floor((np.asarray(xs) - self.origin_x) / self.resolution + 1e-9).astype(np.int64)
        iy = np.floor((np.asarray(ys) - self.origin_y) / self.resolution + 1e-9).astype(np.int64)
        h, w = self.lethal.shape
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        return ix, iy, ok

    def is_free(self, xs, ys) -> bool:
        """All points in-bounds and outside the lethal band."""
        ix, iy, ok = self.indices(xs, ys)
        if not bool(np.all(ok)):
            return False
        return not bool(self.lethal[iy, ix].any())

    def soft_at(self, x: float, y: float) -> float:
        ix, iy, ok = self.indices([x], [y])
        if not ok[0]:
            return 1.0
        return float(self.soft[iy[0], ix[0]])


def _coarse_dijkstra(costmap: Costmap, goal_xy: tuple[float, float],
                     coarse_res: float = 0.5) -> tuple[np.ndarray, float]:
    """8-connected distance-to-goal field on a conservatively-free coarse grid.

    A coarse cell is blocked only when every fine cell inside it is lethal,
    so the field never overestimates the true obstacle-free distance (after
    the octile correction applied by the caller).
    """
    h, w = costmap.lethal.shape
    f = max(1, int(round(coarse_res / costmap.resolution)))
    ch, cw = math.ceil(h / f), math.ceil(w / f)
    blocked = np.ones((ch, cw), dtype=bool)
    trimmed = costmap.lethal[:ch * f, :cw * f]
    pad_h, pad_w = ch * f - h, cw * f - w
    lethal = np.pad(costmap.lethal, ((0, max(0, pad_h)), (0, max(0, pad_w))),
                    constant_values=True)
    blocked = lethal.reshape(ch, f, cw, f).all(axis=(1, 3))

    res = f * costmap.resolution
    gi = int((goal_xy[0] - costmap.origin_x) / res)
    gj = int((goal_xy[1] - costmap.origin_y) / res)
    dist = np.full((ch, cw), np.inf)
    if not (0 <= gi < cw and 0 <= gj < ch):
        return dist, res
    dist[gj, gi] = 0.0
    pq = [(0.0, gj, gi)]
    diag = math.sqrt(2) * res
    moves = [(-1, -1, diag), (-1, 0, res), (-1, 1, diag),
             (0, -1, res), (0, 1, res),
             (1, -1, diag), (1, 0, res), (1, 1, diag)]
    while pq:
        d, j, i = heapq.heappop(pq)
        if d > dist[j, i]:
            continue
        for dj, di, c in moves:
            nj, ni = j + dj, i + di
            if 0 <= nj < ch and 0 <= ni < cw and not blocked[nj, ni]:
                nd = d + c
                if nd < dist[nj, ni]:
                    dist[nj, ni] = nd
                    heapq.heappush(pq, (nd, nj, ni))
    return dist, res


@dataclass
class _Node:
    pose: tuple[float, float, float]
    g: float
    kappa: float
    parent_key: tuple | None
    samples: np.ndarray | None  # (k, 3) poses along the arc from the parent
    h: float = 0.0


class HybridAStar:
    """Forward-only hybrid A* over arc motion primitives."""

    def __init__(self, grid_or_costmap, params: PlannerParams | None = None):
        self.params = params or PlannerParams()
        if isinstance(grid_or_costmap, Costmap):
            self.costmap = grid_or_costmap
        else:
            self.costmap = Costmap.from_grid(grid_or_costmap, self.params)
        self._sample_ds = self.costmap.resolution / 2.0
        self._build_primitives()

    def _build_primitives(self) -> None:
        """Local-frame arc samples per curvature, rotated into place at
        expansion time (one batched transform instead of per-arc trig)."""
        arc = self.params.primitive_arc
        n = max(2, int(math.ceil(arc / self._sample_ds)))
        s = np.linspace(arc / n, arc, n)
        locals_xy = []
        dthetas = []
        for kappa in self.params.curvatures():
            if abs(kappa) < 1e-12:
                xs, ys = s, np.zeros_like(s)
            else:
                xs = np.sin(kappa * s) / kappa
                ys = (1.0 - np.cos(kappa * s)) / kappa
            locals_xy.append(np.column_stack([xs, ys]))
            dthetas.append(kappa * s)
        self._prim_local = np.stack(locals_xy)          # (K, n, 2)
        self._prim_dtheta = np.stack(dthetas)           # (K, n)
        self._prim_kappas = np.array(self.params.curvatures())
        self._prim_n = n
        arc_len = self.params.primitive_arc
        self._prim_base_cost = arc_len * (1.0 + self.params.curvature_penalty
                                          * np.abs(self._prim_kappas))

    def _key(self, pose) -> tuple[int, int, int]:
        p = self.params
        res = self.costmap.resolution
        ih = int(((pose[2]) % (2 * math.pi)) / (2 * math.pi / p.heading_bins))
        return (int(math.floor((pose[0] - self.costmap.origin_x) / res)),
                int(math.floor((pose[1] - self.costmap.origin_y) / res)),
                ih % p.heading_bins)

    def heuristic(self, x: float, y: float, goal: Pose2D,
                  hfield: np.ndarray, hres: float) -> float:
        """Admissible remaining-cost estimate (never exceeds lattice cost)."""
        tol = self.params.goal_pos_tol
        h_euclid = math.hypot(goal.x - x, goal.y - y) - tol
        gi = int((x - self.costmap.origin_x) / hres)
        gj = int((y - self.costmap.origin_y) / hres)
        h_grid = -math.inf
        if 0 <= gj < hfield.shape[0] and 0 <= gi < hfield.shape[1]:
            v = hfield[gj, gi]
            if np.isfinite(v):
                h_grid = v / _OCTILE_FACTOR - math.sqrt(2) * hres - tol
        return max(0.0, h_euclid, h_grid)

    def plan(self, start: Pose2D, goal: Pose2D, max_nodes: int = 200_000,
             use_dubins: bool = True) -> PathPlan:
        p = self.params
        cm = self.costmap
        if not cm.is_free(np.array([goal.x]), np.array([goal.y])):
            raise PlanningError("goal pose is inside an occupied/inflated cell")
        if not cm.is_free(np.array([start.x]), np.array([start.y])):
            raise PlanningError("start pose is inside an occupied/inflated cell")

        hfield, hres = _coarse_dijkstra(cm, (goal.x, goal.y))
        start_t = (start.x, start.y, start.theta)
        nodes: dict[tuple, _Node] = {}
        skey = self._key(start_t)
        h0 = self.heuristic(start.x, start.y, goal, hfield, hres)
        nodes[skey] = _Node(start_t, 0.0, 0.0, None, None, h0)
        counter = 0
        heap = [(h0, counter, skey)]
        explored = 0
        best_shot_dist = math.inf

        while heap:
            f, _, key = heapq.heappop(heap)
            node = nodes[key]
            if f > node.g + node.h + 1e-9:
                continue  # stale entry
            explored += 1
            if explored > max_nodes:
                raise OpenSetExhausted("node budget exceeded", explored)

            x, y, th = node.pose
            d_goal = math.hypot(goal.x - x, goal.y - y)
            if (d_goal <= p.goal_pos_tol
                    and abs(normalize_angle(goal.theta - th)) <= p.goal_heading_tol):
                return self._reconstruct(nodes, key, start, None)
            if use_dubins and d_goal <= p.dubins_trigger and d_goal < best_shot_dist - 0.25:
                best_shot_dist = d_goal
                dp = shortest_dubins(Pose2D(x, y, th), goal, p.min_turn_radius)
                if dp is not None:
                    poses, curv = dp.sample(self._sample_ds)
                    if cm.is_free(poses[:, 0], poses[:, 1]):
                        return self._reconstruct(nodes, key, start, (poses, curv))

            # all primitives in one batched transform + costmap lookup
            c, s = math.cos(th), math.sin(th)
            loc = self._prim_local
            wx = x + loc[:, :, 0] * c - loc[:, :, 1] * s     # (K, n)
            wy = y + loc[:, :, 0] * s + loc[:, :, 1] * c
            ix, iy, ok = cm.indices(wx.ravel(), wy.ravel())
            blocked = ~ok
            blocked[ok] = cm.lethal[iy[ok], ix[ok]]
            blocked = blocked.reshape(wx.shape).any(axis=1)
            soft_end = np.ones(len(loc))
            end_ok = ok.reshape(wx.shape)[:, -1]
            iy2 = iy.reshape(wx.shape)[:, -1]
            ix2 = ix.reshape(wx.shape)[:, -1]
            soft_end[end_ok] = cm.soft[iy2[end_ok], ix2[end_ok]]
            ths = th + self._prim_dtheta

            for kidx in range(len(loc)):
                if blocked[kidx]:
                    continue
                kappa = float(self._prim_kappas[kidx])
                end = (float(wx[kidx, -1]), float(wy[kidx, -1]), float(ths[kidx, -1]))
                nkey = self._key(end)
                g = node.g + float(self._prim_base_cost[kidx]) \
                    + p.cost_weight * float(soft_end[kidx])
                existing = nodes.get(nkey)
                if existing is not None and existing.g <= g:
                    continue
                samples = np.column_stack([wx[kidx], wy[kidx], ths[kidx]])
                h = self.heuristic(end[0], end[1], goal, hfield, hres)
                nodes[nkey] = _Node(end, g, kappa, key, samples, h)
                counter += 1
                heapq.heappush(heap, (g + h, counter, nkey))
        raise OpenSetExhausted("no path to goal", explored)

    def _reconstruct(self, nodes, key, start: Pose2D, dubins_tail) -> PathPlan:
        chain = []
        k = key
        while k is not None:
            node = nodes[k]
            if node.samples is not None:
                chain.append((node.samples, node.kappa))
            k = node.parent_key
        chain.reverse()
        pts = [[start.x, start.y, start.theta, 0.0]]
        for samples, kappa in chain:
            for s in samples:
                pts.append([s[0], s[1], s[2], kappa])
        if dubins_tail is not None:
            poses, curv = dubins_tail
            for s, kp in zip(poses[1:], curv[1:]):
                pts.append([s[0], s[1], s[2], kp])
        arr = np.array(pts)
        return _path_from_samples(arr, closed=False, speed_params=self.params)


def _path_from_samples(samples: np.ndarray, closed: bool,
                       speed_params: PlannerParams) -> PathPlan:
    """Resample (x, y, heading, kappa) rows at PATH_STEP and attach speeds.

    Curvature is carried over from the generating primitive of the nearest
    source sample (finite differencing sampled arcs would overshoot the
    curvature bound).
    """
    xy = samples[:, :2]
    d = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    keep = np.concatenate([[True], d > 1e-9])
    samples = samples[keep]
    xy = samples[:, :2]
    if closed:
        ext = np.vstack([xy, xy[:1]])
    else:
        ext = xy
    seg = np.hypot(np.diff(ext[:, 0]), np.diff(ext[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(2, int(math.ceil(total / PATH_STEP)))
    stations = np.linspace(0.0, total, n, endpoint=not closed)
    x = np.interp(stations, s, ext[:, 0])
    y = np.interp(stations, s, ext[:, 1])
    src = np.searchsorted(s, stations, side="left")
    src = np.clip(src, 0, len(samples) - 1)
    kappa = samples[src, 3]
    if closed:
        nxt = np.roll(np.column_stack([x, y]), -1, axis=0)
        heading = np.arctan2(nxt[:, 1] - y, nxt[:, 0] - x)
    else:
        heading = samples[src, 2]  # analytic headings from the primitives
    speed = curvature_speed_profile(kappa, speed_params)
    return PathPlan(np.column_stack([x, y, heading, kappa, speed]), closed=closed)


def curvature_speed_profile(kappa: np.ndarray, params: PlannerParams) -> np.ndarray:
    """Per-point target speed: full speed until the turn radius drops under
    the regulation knee, then proportional, floored at min_speed."""
    kabs = np.abs(np.asarray(kappa, dtype=float))
    with np.errstate(divide="ignore"):
        radius = np.where(kabs > 1e-9, 1.0 / np.where(kabs > 1e-9, kabs, 1.0), np.inf)
    v = params.speed * np.minimum(1.0, radius / params.reg_min_radius)
    return np.clip(v, params.min_speed, params.speed)


def pair_midpoints(reg: ConeRegistry, near: Pose2D,
                   pair_radius: float = PAIR_RADIUS):
    """Blue-chain-ordered midpoints of blue/yellow cone pairs.

    Returns (midpoints, closed, skipped) where skipped counts orphan blue
    cones with no opposite-side partner within the pairing radius.
    """
    blue = orient_chain(order_boundary(reg, ConeColor.BLUE, near), near)
    yellow_entries = reg.of_color(ConeColor.YELLOW)
    if len(yellow_entries) < 3:
        raise BoundaryError("need at least 3 yellow cones to pair a midline")
    ypts = np.array([[e.x, e.y] for e in yellow_entries])
    mids = []
    skipped = 0
    for e in blue.cones:
        d = np.hypot(ypts[:, 0] - e.x, ypts[:, 1] - e.y)
        j = int(np.argmin(d))
        if d[j] > pair_radius:
            skipped += 1
            continue
        mids.append([(e.x + ypts[j, 0]) / 2.0, (e.y + ypts[j, 1]) / 2.0])
    if len(mids) < 3:
        raise BoundaryError("too few blue/yellow pairs for a midline")
    if skipped:
        log.warning("midline: skipped %d orphan cones", skipped)
    return np.array(mids), blue.closed, skipped


def _smooth_polyline(pts: np.ndarray, closed: bool, window: int = 5,
                     rounds: int = 2) -> np.ndarray:
    """Moving-average smoothing; endpoints are pinned for open polylines."""
    if len(pts) < window:
        return pts
    out = pts.astype(float)
    half = window // 2
    for _ in range(rounds):
        if closed:
            padded = np.vstack([out[-half:], out, out[:half]])
            kern = np.ones(window) / window
            sx = np.convolve(padded[:, 0], kern, mode="valid")
            sy = np.convolve(padded[:, 1], kern, mode="valid")
            out = np.column_stack([sx, sy])
        else:
            inner = out.copy()
            for i in range(half, len(out) - half):
                inner[i] = out[i - half:i + half + 1].mean(axis=0)
            out = inner
    return out


def plan_midline(reg: ConeRegistry, near: Pose2D,
                 speed: float = MIDLINE_SPEED,
                 pair_radius: float = PAIR_RADIUS) -> PathPlan:
    """Midline path from cone-pair midpoints at a constant target speed."""
    mids, closed, _ = pair_midpoints(reg, near, pair_radius)
    mids = _dedupe(mids)
    if len(mids) < 3:
        raise BoundaryError("too few distinct midline points")
    # densify before smoothing so the moving average spans ~1 m, not cone gaps
    dense = _resample_polyline(mids, closed, speed, step=1.0).xy
    dense = _smooth_polyline(dense, closed)
    return _resample_polyline(dense, closed, speed)


def _dedupe(pts: np.ndarray, min_step: float = 0.05) -> np.ndarray:
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) >= min_step:
            keep.append(i)
    return pts[keep]


def _resample_polyline(pts: np.ndarray, closed: bool, speed: float,
                       step: float = PATH_STEP) -> PathPlan:
    ext = np.vstack([pts, pts[:1]]) if closed else pts
    seg = np.hypot(np.diff(ext[:, 0]), np.diff(ext[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(3, int(math.ceil(total / step)))
    stations = np.linspace(0.0, total, n, endpoint=not closed)
    x = np.interp(stations, s, ext[:, 0])
    y = np.interp(stations, s, ext[:, 1])
    if closed:
        dx = np.roll(x, -1) - x
        dy = np.roll(y, -1) - y
    else:
        dx = np.gradient(x)
        dy = np.gradient(y)
    heading = np.arctan2(dy, dx)
    ds = np.hypot(dx, dy)
    dh = normalize_angles(np.roll(heading, -1) - heading)
    kappa = dh / np.where(ds > 1e-9, ds, 1.0)
    if not closed:
        kappa[-1] = kappa[-2] if len(kappa) > 1 else 0.0
    # 3-point average keeps discretization spikes out of the curvature channel
    ksm = (np.roll(kappa, 1) + kappa + np.roll(kappa, -1)) / 3.0
    return PathPlan(np.column_stack([x, y, heading, ksm,
                                     np.full(n, float(speed))]), closed=closed)


def plan_racing_line(reg: ConeRegistry, grid: OccupancyGrid,
                     params: PlannerParams | None = None,
                     near: Pose2D | None = None,
                     anchors: int = 4) -> PathPlan:
    """Closed racing line: hybrid-A* segments stitched between midline anchors."""
    params = params or PlannerParams()
    near = near or Pose2D()
    midline = plan_midline(reg, near, speed=params.speed)
    if not midline.closed:
        raise PlanningError("racing line needs a closed midline")
    costmap = Costmap.from_grid(grid, params)
    planner = HybridAStar(costmap, params)

    s = midline.arc_positions()
    total = midline.total_length()
    anchor_poses = []
    for k in range(anchors):
        idx = int(np.searchsorted(s, k * total / anchors))
        idx = min(idx, len(midline.pts) - 1)
        row = midline.pts[idx]
        anchor_poses.append(Pose2D(row[0], row[1], row[PATH_HEADING]))

    segments = []
    for k in range(anchors):
        a, b = anchor_poses[k], anchor_poses[(k + 1) % anchors]
        try:
            seg = planner.plan(a, b)
        except PlanningError as e:
            raise PlanningError(f"racing-line segment {k} failed: {e}") from e
        segments.append(seg)

    rows = []
    for seg in segments:
        arr = np.column_stack([seg.pts[:, 0], seg.pts[:, 1],
                               seg.pts[:, PATH_HEADING], seg.pts[:, PATH_CURVATURE]])
        rows.append(arr[:-1] if len(arr) > 1 else arr)
    stitched = np.vstack(rows)
    stitched = _shortcut_joints(stitched, costmap, params,
                                [seg.pts[0, :2] for seg in segments])
    return _path_from_samples(stitched, closed=True, speed_params=params)


def _shortcut_joints(samples: np.ndarray, costmap: Costmap, params: PlannerParams,
                     joints: list[np.ndarray], window: float = 3.0) -> np.ndarray:
    """Local joint smoothing: replace the neighbourhood of each stitch joint
    with a straight chord when it is collision-free and within the turn bound."""
    n = len(samples)
    xy = samples[:, :2]
    seg = np.hypot(*(np.roll(xy, -1, axis=0) - xy).T)
    out = samples.copy()
    drop = np.zeros(n, dtype=bool)
    for joint in joints:
        d = np.hypot(xy[:, 0] - joint[0], xy[:, 1] - joint[1])
        j = int(np.argmin(d))
        w = max(2, int(window / max(np.median(seg), 1e-6)))
        i0, i1 = (j - w) % n, (j + w) % n
        if i0 >= i1:
            continue  # window wraps the seam; leave the seam joint alone
        p0, p1 = xy[i0], xy[i1]
        chord = p1 - p0
        clen = float(np.hypot(*chord))
        if clen < 1e-6:
            continue
        ts = np.linspace(0.0, 1.0, max(2, int(clen / (costmap.resolution / 2))))
        line = p0[None, :] + ts[:, None] * chord[None, :]
        if not costmap.is_free(line[:, 0], line[:, 1]):
            continue
        chord_heading = math.atan2(chord[1], chord[0])
        turn_in = abs(normalize_angle(chord_heading - float(samples[i0, 2])))
        turn_out = abs(normalize_angle(float(samples[i1, 2]) - chord_heading))
        max_turn = PATH_STEP / params.min_turn_radius
        if turn_in > max_turn or turn_out > max_turn:
            continue
        drop[i0 + 1:i1] = True
        out[i0:i1, 2] = chord_heading
        out[i0 + 1:i1, 3] = 0.0
    return out[~drop]


@dataclass
class PathMetrics:
    distance: float
    total_curvature: float


def path_metrics(path: PathPlan) -> PathMetrics:
    """Total distance and cumulative |heading change| along the path."""
    if len(path.pts) < 3:
        raise ValueError("need at least 3 points for path metrics")
    xy = path.xy
    if path.closed:
        nxt = np.roll(xy, -1, axis=0)
        seg_vec = nxt - xy
    else:
        seg_vec = np.diff(xy, axis=0)
    dist = float(np.hypot(seg_vec[:, 0], seg_vec[:, 1]).sum())
    headings = np.arctan2(seg_vec[:, 1], seg_vec[:, 0])
    if path.closed:
        dh = normalize_angles(np.roll(headings, -1) - headings)
    else:
        dh = normalize_angles(np.diff(headings))
    return PathMetrics(distance=dist, total_curvature=float(np.abs(dh).sum()))


def path_to_csv(path: PathPlan, filename: str) -> None:
    s = path.arc_positions()
    with open(filename, "w") as f:
        f.write("s,x,y,heading,curvature,target_speed\n")
        for si, row in zip(s, path.pts):
            f.write(f"{si!r},{row[0]!r},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}\n")
