"""Log-odds occupancy grid with an ASCII export, plus Bresenham traversal.

The grid is row-major with the origin at the minimum-x/minimum-y corner;
cell (ix, iy) covers [ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, ...).
Cell values are log-odds clamped to [log_odds_min, log_odds_max]; a cell is
occupied when its log-odds exceeds `occupied_threshold`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Pose2D

# Nudge applied in cell-index arithmetic so points that sit exactly on a cell
# boundary (in real arithmetic) land in the upper cell despite float rounding.
_CELL_EPS = 1e-9


@dataclass
class OccupancyGrid:
    resolution: float
    origin: Pose2D
    cells: np.ndarray  # (height, width) float log-odds
    log_odds_min: float = -4.0
    log_odds_max: float = 4.0
    occupied_threshold: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.origin.theta != 0.0:
            raise ValueError("grid origin must be axis-aligned (theta == 0)")
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.ndim != 2:
            raise ValueError("cells must be a 2D array")

    @classmethod
    def empty(cls, resolution: float, origin_xy: tuple[float, float],
              width: int, height: int, **kw) -> "OccupancyGrid":
        return cls(resolution, Pose2D(origin_xy[0], origin_xy[1], 0.0),
                   np.zeros((height, width)), **kw)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def world_to_cell(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell index containing a world point, or None when out of bounds."""
        ix = math.floor((x - self.origin.x) / self.resolution + _CELL_EPS)
        iy = math.floor((y - self.origin.y) / self.resolution + _CELL_EPS)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return ix, iy
        return None

    def cell_to_world(self, ix: int, iy: int) -> tuple[float, float]:
        """World coordinates of a cell's center."""
        return (self.origin.x + (ix + 0.5) * self.resolution,
                self.origin.y + (iy + 0.5) * self.resolution)

    def cell_indices(self, xs: np.ndarray, ys: np.ndarray):
        """Vectorised world->cell. Returns (ix, iy, in_bounds_mask)."""
        ix = np.floor((np.asarray(xs) - self.origin.x) / self.resolution + _CELL_EPS).astype(np.int64)
        iy = np.floor((np.asarray(ys) - self.origin.y) / self.resolution + _CELL_EPS).astype(np.int64)
        ok = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        return ix, iy, ok

    def occupied_mask(self) -> np.ndarray:
        return self.cells > self.occupied_threshold

    def clamp(self) -> None:
        np.clip(self.cells, self.log_odds_min, self.log_odds_max, out=self.cells)

    def grow_to_include(self, xmin: float, ymin: float, xmax: float, ymax: float,
                        block: float = 10.0) -> bool:
        """Expand the grid (in `block`-sized steps) so the box fits. Returns True if grown."""
        ox, oy = self.origin.x, self.origin.y
        w_m = self.width * self.resolution
        h_m = self.height * self.resolution
        pad_left = max(0.0, ox - xmin)
        pad_down = max(0.0, oy - ymin)
        pad_right = max(0.0, xmax - (ox + w_m))
        pad_up = max(0.0, ymax - (oy + h_m))
        if not (pad_left or pad_down or pad_right or pad_up):
            return False
        blocks = [math.ceil(p / block) * block for p in (pad_left, pad_down, pad_right, pad_up)]
        add_cells = [int(round(b / self.resolution)) for b in blocks]
        left, down, right, up = add_cells
        new = np.zeros((self.height + down + up, self.width + left + right))
        new[down:down + self.height, left:left + self.width] = self.cells
        self.cells = new
        self.origin = Pose2D(ox - blocks[0], oy - blocks[1], 0.0)
        return True

    def export_values(self) -> np.ndarray:
        """Map cells to 0 (free), 100 (occupied), 50 (unknown)."""
        out = np.full(self.cells.shape, 50, dtype=int)
        out[self.cells > self.occupied_threshold] = 100
        out[self.cells < 0.0] = 0
        return out

    def save_ascii(self, path: str) -> None:
        """ASCII PGM-style export with the map geometry in a comment header."""
        vals = self.export_values()
        with open(path, "w") as f:
            f.write("P2\n")
            f.write(f"# res={self.resolution!r} ox={self.origin.x!r} oy={self.origin.y!r}\n")
            f.write(f"{self.width} {self.height}\n100\n")
            for iy in range(self.height - 1, -1, -1):  # image convention: top row first
                f.write(" ".join(str(v) for v in vals[iy]) + "\n")

    @classmethod
    def load_ascii(cls, path: str) -> "OccupancyGrid":
        """Inverse of save_ascii (lossy: 0/50/100 -> log-odds min/0/max)."""
        with open(path) as f:
            magic = f.readline().strip()
            if magic != "P2":
                raise ValueError(f"not an ASCII grid file: magic {magic!r}")
            header = f.readline().strip()
            meta = dict(kv.split("=") for kv in header.lstrip("# ").split())
            width, height = (int(v) for v in f.readline().split())
            f.readline()  # maxval
            rows = [[int(v) for v in f.readline().split()] for _ in range(height)]
        vals = np.array(rows[::-1])
        if vals.shape != (height, width):
            raise ValueError("grid payload does not match declared size")
        grid = cls.empty(float(meta["res"]), (float(meta["ox"]), float(meta["oy"])), width, height)
        grid.cells[vals == 100] = grid.log_odds_max
        grid.cells[vals == 0] = grid.log_odds_min
        return grid


def bresenham_cells(ix0: int, iy0: int, ix1: int, iy1: int) -> np.ndarray:
    """All cells on the Bresenham line from (ix0, iy0) to (ix1, iy1), inclusive.

    Vectorised closed form of the classic integer error-accumulator walk
    (err initialised to major//2); one cell per major-axis step.
    """
    dx = abs(ix1 - ix0)
    dy = abs(iy1 - iy0)
    sx = 1 if ix1 >= ix0 else -1
    sy = 1 if iy1 >= iy0 else -1
    if dx == 0 and dy == 0:
        return np.array([[ix0, iy0]], dtype=np.int64)
    if dx >= dy:
        k = np.arange(dx + 1, dtype=np.int64)
        minor = np.maximum(0, (k * dy - dx // 2 + dx - 1) // dx)
        xs = ix0 + sx * k
        ys = iy0 + sy * minor
    else:
        k = np.arange(dy + 1, dtype=np.int64)
        minor = np.maximum(0, (k * dx - dy // 2 + dy - 1) // dy)
        ys = iy0 + sy * k
        xs = ix0 + sx * minor
    return np.stack([xs, ys], axis=1)
