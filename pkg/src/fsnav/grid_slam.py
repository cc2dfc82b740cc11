"""Occupancy-grid SLAM: correlative scan-to-map matching seeded by odometry.

The matcher runs an exhaustive correlative search over a translation/rotation
window around the odometry prior (translation step = map resolution, rotation
step = 0.5 deg) followed by one refinement pass at half steps. Scan
integration traces every return with Bresenham; the map auto-grows in 10 m
blocks so tracks of any layout fit without preallocation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scipy.ndimage import grey_dilation

from .core import Pose2D, normalize_angle
from .fusion import OdometryEstimate
from .grid import OccupancyGrid, bresenham_cells, _CELL_EPS
from .simulate import LaserScan

ROT_STEP = math.radians(0.5)


@dataclass
class SearchWindow:
    dx: float = 0.3       # +/- meters, both axes
    dtheta: float = 0.05  # +/- radians


@dataclass
class ScanMatchResult:
    pose: Pose2D
    score: float
    degraded: bool


@dataclass
class GridSlamConfig:
    resolution: float = 0.05
    l_occ: float = 0.85
    l_free: float = 0.4
    window: SearchWindow = field(default_factory=SearchWindow)
    min_score: float = 0.3
    keyscan_dist: float = 0.2
    keyscan_rot: float = 0.1
    initial_extent: float = 30.0  # meters, square around the start pose


def _candidate_order(n: int, step: float) -> np.ndarray:
    """Offsets -n..n in deterministic tie-break order: |k| ascending, negative first."""
    ks = sorted(range(-n, n + 1), key=lambda k: (abs(k), k))
    return np.array(ks, dtype=float) * step


def likelihood_field(occ: np.ndarray) -> np.ndarray:
    """Graded hit field: full credit on occupied cells, discounted credit one
    cell away. Smooths the correlative score landscape so the sub-cell
    refinement has a usable gradient."""
    return np.where(occ, 1.0, 0.6 * grey_dilation(occ, size=3))


def scan_match(grid: OccupancyGrid, scan: LaserScan, prior: Pose2D,
               window: SearchWindow | None = None,
               min_score: float = 0.3,
               field: np.ndarray | None = None) -> ScanMatchResult:
    """Maximum-likelihood pose of a scan against the map's occupied cells.

    Returns the prior unchanged (flagged degraded) when the map is empty,
    the scan has no returns, or the best normalized hit score stays below
    min_score. `field` may carry a precomputed likelihood_field of the map.
    """
    window = window or SearchWindow()
    occ = grid.occupied_mask()
    if not occ.any():
        return ScanMatchResult(prior, 0.0, True)
    valid = scan.ranges < scan.max_range - 1e-9
    if not valid.any():
        return ScanMatchResult(prior, 0.0, True)
    angles = scan.angles()[valid]
    ranges = scan.ranges[valid]
    n_valid = len(ranges)
    res = grid.resolution
    if field is None:
        field = likelihood_field(occ)

    n_rot = max(1, int(round(window.dtheta / ROT_STEP)))
    n_cell = max(1, int(round(window.dx / res)))
    rot_offsets = _candidate_order(n_rot, ROT_STEP)
    cell_offsets = _candidate_order(n_cell, 1.0).astype(np.int64)

    h, w = occ.shape
    # pad so every shifted lookup stays in-bounds; the pad ring is all-miss
    pad = 2 * n_cell + 2
    occ_pad = np.zeros((h + 2 * pad, w + 2 * pad))
    occ_pad[pad:pad + h, pad:pad + w] = field
    local_x = ranges * np.cos(angles)
    local_y = ranges * np.sin(angles)

    # coarse pass: per rotation, gather a (2n+1)^2 patch per endpoint; the
    # patch sum over endpoints scores every integer-cell shift at once
    scores = np.empty((len(rot_offsets), len(cell_offsets), len(cell_offsets)))
    for r, dth in enumerate(rot_offsets):
        theta = prior.theta + dth
        c, s = math.cos(theta), math.sin(theta)
        px = prior.x + local_x * c - local_y * s
        py = prior.y + local_x * s + local_y * c
        ix0 = np.floor((px - grid.origin.x) / res + _CELL_EPS).astype(np.int64)
        iy0 = np.floor((py - grid.origin.y) / res + _CELL_EPS).astype(np.int64)
        ix0 = np.clip(ix0, -n_cell - 1, w + n_cell) + pad
        iy0 = np.clip(iy0, -n_cell - 1, h + n_cell) + pad
        patches = occ_pad[iy0[:, None, None] + cell_offsets[None, None, :],
                          ix0[:, None, None] + cell_offsets[None, :, None]]
        scores[r] = patches.sum(axis=0)
    flat = int(np.argmax(scores))  # C-order argmax == tie-break dtheta, dx, dy
    r, a, b = np.unravel_index(flat, scores.shape)
    best = (float(scores[r, a, b]) / n_valid,
            prior.x + cell_offsets[a] * res,
            prior.y + cell_offsets[b] * res,
            prior.theta + rot_offsets[r])

    # refinement pass at half steps, spanning +/- one coarse step so a
    # one-cell plateau error in the coarse pass can still be corrected
    bs, bx, by, bth = best
    half = _candidate_order(2, 0.5)
    for dth in half * ROT_STEP:
        theta = bth + dth
        c, s = math.cos(theta), math.sin(theta)
        rx = local_x * c - local_y * s
        ry = local_x * s + local_y * c
        for di in half * res:
            for dj in half * res:
                if dth == 0.0 and di == 0.0 and dj == 0.0:
                    continue
                ix, iy, ok = grid.cell_indices(rx + bx + di, ry + by + dj)
                score = float(field[iy[ok], ix[ok]].sum()) / n_valid
                if score > best[0]:
                    best = (score, bx + di, by + dj, theta)

    score, x, y, theta = best
    if score < min_score:
        return ScanMatchResult(prior, score, True)
    return ScanMatchResult(Pose2D(x, y, normalize_angle(theta)), score, False)


def integrate_scan(grid: OccupancyGrid, pose: Pose2D, scan: LaserScan,
                   l_occ: float = 0.85, l_free: float = 0.4) -> np.ndarray:
    """Trace every ray into the map; returns the touched (iy, ix) index array.

    Cells strictly between the sensor and a return lose l_free; the return's
    endpoint cell gains l_occ. Max-range rays carve free space all the way to
    their endpoint cell and add no occupied evidence.
    """
    res = grid.resolution
    angles = scan.angles() + pose.theta
    ex = pose.x + scan.ranges * np.cos(angles)
    ey = pose.y + scan.ranges * np.sin(angles)
    sx = math.floor((pose.x - grid.origin.x) / res + _CELL_EPS)
    sy = math.floor((pose.y - grid.origin.y) / res + _CELL_EPS)
    eix = np.floor((ex - grid.origin.x) / res + _CELL_EPS).astype(np.int64)
    eiy = np.floor((ey - grid.origin.y) / res + _CELL_EPS).astype(np.int64)
    is_hit = scan.ranges < scan.max_range - 1e-9

    free_chunks = []
    occ_cells = []
    for k in range(len(scan.ranges)):
        cells = bresenham_cells(sx, sy, int(eix[k]), int(eiy[k]))
        if is_hit[k]:
            free_chunks.append(cells[1:-1])      # skip sensor cell and endpoint
            occ_cells.append(cells[-1])
        else:
            free_chunks.append(cells[1:])        # carve through, no endpoint
    touched = []
    h, w = grid.cells.shape
    if free_chunks:
        free = np.concatenate(free_chunks)
        ok = (free[:, 0] >= 0) & (free[:, 0] < w) & (free[:, 1] >= 0) & (free[:, 1] < h)
        free = free[ok]
        np.add.at(grid.cells, (free[:, 1], free[:, 0]), -l_free)
        touched.append(free)
    if occ_cells:
        occ = np.array(occ_cells)
        ok = (occ[:, 0] >= 0) & (occ[:, 0] < w) & (occ[:, 1] >= 0) & (occ[:, 1] < h)
        occ = occ[ok]
        np.add.at(grid.cells, (occ[:, 1], occ[:, 0]), l_occ)
        touched.append(occ)
    if not touched:
        return np.empty((0, 2), dtype=np.int64)
    idx = np.concatenate(touched)
    np.clip(grid.cells[idx[:, 1], idx[:, 0]], grid.log_odds_min, grid.log_odds_max,
            out=grid.cells[idx[:, 1], idx[:, 0]])
    return idx


class GridSlam:
    """Scan-matching SLAM with a keyscan integration policy."""

    def __init__(self, initial_pose: Pose2D, cfg: GridSlamConfig | None = None):
        self.cfg = cfg or GridSlamConfig()
        half = self.cfg.initial_extent / 2
        n = int(round(self.cfg.initial_extent / self.cfg.resolution))
        self.grid = OccupancyGrid.empty(
            self.cfg.resolution,
            (initial_pose.x - half, initial_pose.y - half), n, n)
        self.pose = initial_pose
        self.last_integrated_pose: Pose2D | None = None
        self._last_odom_pose: Pose2D | None = None
        self._last_odom_t: float | None = None
        self._field: np.ndarray | None = None
        self.degraded = False

    def step(self, odom: OdometryEstimate, scan: LaserScan) -> Pose2D:
        """Advance the SLAM by one odometry estimate plus scan."""
        if self._last_odom_t is not None and odom.t <= self._last_odom_t:
            raise ValueError(f"odometry at {odom.t} not newer than {self._last_odom_t}")
        prior = self.pose
        if self._last_odom_pose is not None:
            prior = self.pose.compose(self._last_odom_pose.delta_to(odom.pose))
        self._last_odom_pose = odom.pose
        self._last_odom_t = odom.t

        if self._field is None:
            self._field = likelihood_field(self.grid.occupied_mask())
        result = scan_match(self.grid, scan, prior, self.cfg.window,
                            self.cfg.min_score, field=self._field)
        self.pose = result.pose
        self.degraded = result.degraded

        if self._should_integrate():
            reach = scan.max_range + 1.0
            grown = self.grid.grow_to_include(self.pose.x - reach, self.pose.y - reach,
                                              self.pose.x + reach, self.pose.y + reach)
            integrate_scan(self.grid, self.pose, scan, self.cfg.l_occ, self.cfg.l_free)
            self.last_integrated_pose = self.pose
            self._field = None  # rebuild lazily after map changes
        return self.pose

    def advance_odometry(self, odom: OdometryEstimate) -> Pose2D:
        """Propagate the pose by odometry only (between scans)."""
        if self._last_odom_pose is not None:
            self.pose = self.pose.compose(self._last_odom_pose.delta_to(odom.pose))
        self._last_odom_pose = odom.pose
        self._last_odom_t = odom.t
        return self.pose

    def _should_integrate(self) -> bool:
        if self.last_integrated_pose is None:
            return True
        ref = self.last_integrated_pose
        moved = self.pose.distance_to(ref) >= self.cfg.keyscan_dist
        turned = abs(normalize_angle(self.pose.theta - ref.theta)) >= self.cfg.keyscan_rot
        return moved or turned
