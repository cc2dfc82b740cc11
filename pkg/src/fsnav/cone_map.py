"""Colored cone registry and boundary interpolation into a planner grid.

Detections are projected into the world with the active SLAM pose and merged
into the registry: the nearest same-color entry within the 1.5 m search
radius is updated with a count-weighted running mean, anything farther away
becomes a new entry. Ordered boundaries are chained nearest-neighbour from
the cone closest to the start pose; consecutive cones are rasterized into an
occupancy grid so planners see continuous walls instead of 5 m gaps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Cone, ConeColor, Pose2D
from .grid import OccupancyGrid, bresenham_cells
from .simulate import ConeDetection

SEARCH_RADIUS = 1.5
HOP_BOUND = 6.0  # max spacing 5 m plus slack for mapping error


class BoundaryError(ValueError):
    pass


@dataclass
class ConeEntry:
    x: float
    y: float
    color: ConeColor
    count: int = 1

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class BoundaryChain:
    cones: list[ConeEntry]
    closed: bool
    has_gap: bool
    gap_location: tuple[float, float] | None = None


class ConeRegistry:
    """World-frame cone landmark list with moving-average position updates."""

    def __init__(self, search_radius: float = SEARCH_RADIUS, color_gated: bool = True):
        self.entries: list[ConeEntry] = []
        self.search_radius = search_radius
        self.color_gated = color_gated
        self.revision = 0

    def __len__(self) -> int:
        return len(self.entries)

    def register(self, detections: list[ConeDetection], vehicle_pose: Pose2D) -> None:
        for det in detections:
            wx, wy = vehicle_pose.transform(det.range * math.cos(det.bearing),
                                            det.range * math.sin(det.bearing))
            self.register_point(wx, wy, det.color)
        if detections:
            self.revision += 1

    def register_point(self, wx: float, wy: float, color: ConeColor) -> None:
        best, best_d = None, self.search_radius
        for e in self.entries:
            if self.color_gated and e.color != color:
                continue
            d = math.hypot(e.x - wx, e.y - wy)
            if d < best_d:
                best, best_d = e, d
        if best is None:
            self.entries.append(ConeEntry(wx, wy, color))
        else:
            n = best.count
            best.x = (best.x * n + wx) / (n + 1)
            best.y = (best.y * n + wy) / (n + 1)
            best.count = n + 1

    def of_color(self, color: ConeColor) -> list[ConeEntry]:
        return [e for e in self.entries if e.color == color]

    def cones(self) -> list[Cone]:
        return [Cone(e.x, e.y, e.color) for e in self.entries]

    def to_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump({"cones": [
                {"x": e.x, "y": e.y, "color": e.color.value, "count": e.count}
                for e in self.entries]}, f, indent=1)
            f.write("\n")

    @classmethod
    def from_cones(cls, cones: list[Cone], **kw) -> "ConeRegistry":
        reg = cls(**kw)
        for c in cones:
            reg.entries.append(ConeEntry(c.x, c.y, c.color))
        return reg

    @classmethod
    def from_json(cls, path: str, **kw) -> "ConeRegistry":
        with open(path) as f:
            d = json.load(f)
        reg = cls(**kw)
        for c in d["cones"]:
            reg.entries.append(ConeEntry(float(c["x"]), float(c["y"]),
                                         ConeColor(c["color"]), int(c.get("count", 1))))
        return reg


def register_cones(reg: ConeRegistry, detections: list[ConeDetection],
                   vehicle_pose: Pose2D) -> ConeRegistry:
    reg.register(detections, vehicle_pose)
    return reg


def order_boundary(reg: ConeRegistry, color: ConeColor, near: Pose2D,
                   hop_bound: float = HOP_BOUND) -> BoundaryChain:
    """Nearest-neighbour chain of one boundary, starting nearest `near`.

    The chain is closed when the last cone links back to the first within the
    hop bound; cones that cannot be reached within the bound set the gap flag
    (partial chain is still returned).
    """
    cones = reg.of_color(color)
    if len(cones) < 3:
        raise BoundaryError(f"need at least 3 {color.value} cones, have {len(cones)}")
    pts = np.array([[e.x, e.y] for e in cones])
    start = int(np.argmin(np.hypot(pts[:, 0] - near.x, pts[:, 1] - near.y)))
    used = np.zeros(len(cones), dtype=bool)
    order = [start]
    used[start] = True
    while True:
        cur = pts[order[-1]]
        d = np.hypot(pts[:, 0] - cur[0], pts[:, 1] - cur[1])
        d[used] = np.inf
        nxt = int(np.argmin(d))
        if not np.isfinite(d[nxt]) or d[nxt] > hop_bound:
            break
        order.append(nxt)
        used[nxt] = True
    has_gap = len(order) < len(cones)
    gap_loc = None
    if has_gap:
        last = pts[order[-1]]
        gap_loc = (float(last[0]), float(last[1]))
    closing = math.hypot(*(pts[order[-1]] - pts[order[0]]))
    closed = len(order) >= 3 and closing <= hop_bound
    return BoundaryChain([cones[i] for i in order], closed, has_gap, gap_loc)


def orient_chain(chain: BoundaryChain, near: Pose2D) -> BoundaryChain:
    """Flip the chain so travel from its first cone points along `near` heading."""
    if len(chain.cones) < 2:
        return chain
    a, b = chain.cones[0], chain.cones[1]
    hx, hy = math.cos(near.theta), math.sin(near.theta)
    if (b.x - a.x) * hx + (b.y - a.y) * hy < 0.0:
        return BoundaryChain([chain.cones[0]] + chain.cones[1:][::-1],
                             chain.closed, chain.has_gap, chain.gap_location)
    return chain


def build_boundary_grid(reg: ConeRegistry, resolution: float = 0.1,
                        near: Pose2D | None = None,
                        margin: float = 2.0) -> OccupancyGrid:
    """Closed boundary walls rasterized into an occupancy grid.

    Both boundaries must chain without gaps; a gap raises with its location
    so callers can report where the map is incomplete. Orange cones are
    excluded: they mark the start line, not the track edge.
    """
    near = near or Pose2D()
    chains = {}
    for color in (ConeColor.BLUE, ConeColor.YELLOW):
        if len(reg.of_color(color)) < 3:
            raise BoundaryError(
                f"cannot bound a track: too few {color.value} cones")
        chain = order_boundary(reg, color, near)
        if chain.has_gap:
            raise BoundaryError(
                f"{color.value} boundary gap near ({chain.gap_location[0]:.2f}, "
                f"{chain.gap_location[1]:.2f})")
        chains[color] = chain

    pts = np.array([[e.x, e.y] for color in chains for e in chains[color].cones])
    xmin, ymin = pts.min(axis=0) - margin
    xmax, ymax = pts.max(axis=0) + margin
    width = int(math.ceil((xmax - xmin) / resolution))
    height = int(math.ceil((ymax - ymin) / resolution))
    grid = OccupancyGrid.empty(resolution, (float(xmin), float(ymin)), width, height)
    grid.cells[:] = grid.log_odds_min  # everything not a wall is free

    for chain in chains.values():
        cone_pts = [e.position() for e in chain.cones]
        pairs = list(zip(cone_pts, cone_pts[1:]))
        if chain.closed:
            pairs.append((cone_pts[-1], cone_pts[0]))
        for p0, p1 in pairs:
            c0 = grid.world_to_cell(p0[0], p0[1])
            c1 = grid.world_to_cell(p1[0], p1[1])
            cells = bresenham_cells(c0[0], c0[1], c1[0], c1[1])
            grid.cells[cells[:, 1], cells[:, 0]] = grid.log_odds_max
    return grid
