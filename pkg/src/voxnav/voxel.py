"""Dense 3D occupancy grids: geometry, discretization, raycasting, block I/O.

Cell values are floats in [0, 1]; the sentinel -1.0 marks a cell that has
never been observed. Cells are stored x-major (x slowest, then y, then z),
which is the C order of a (Dx, Dy, Dz) array and also the on-disk order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import OutOfBoundsError, UndefinedRatioError

UNKNOWN = -1.0

DEFAULT_OCCUPANCY_THRESHOLD = 0.5

_MAGIC = b"OCGR"
_FORMAT_VERSION = 1

GridIndex = tuple[int, int, int]


def _as_dims(dims) -> tuple[int, int, int]:
    d = tuple(int(v) for v in dims)
    if len(d) != 3:
        raise ValueError(f"dims must have 3 components, got {dims!r}")
    return d


@dataclass(frozen=True)
class Region:
    """An axis-aligned block of voxels inside a grid."""

    offset: GridIndex
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "offset", _as_dims(self.offset))
        object.__setattr__(self, "dims", _as_dims(self.dims))
        if any(o < 0 for o in self.offset):
            raise ValueError(f"region offset must be non-negative, got {self.offset}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"region dims must be positive, got {self.dims}")

    def fits(self, grid_dims: tuple[int, int, int]) -> bool:
        return all(o + d <= g for o, d, g in zip(self.offset, self.dims, grid_dims))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + d) for o, d in zip(self.offset, self.dims))


class _GridBase:
    """Shared geometry for occupancy and trinary grids."""

    cells: np.ndarray
    resolution: float
    origin: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.cells.shape

    @property
    def n_cells(self) -> int:
        return self.cells.size

    @property
    def extents(self) -> np.ndarray:
        """Physical size of the grid in meters, per axis."""
        return np.asarray(self.dims, dtype=np.float64) * self.resolution

    def in_bounds(self, index) -> bool:
        i, j, k = index
        dx, dy, dz = self.dims
        return 0 <= i < dx and 0 <= j < dy and 0 <= k < dz

    def contains_point(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        rel = p - self.origin
        return bool(np.all(rel >= 0.0) and np.all(rel < self.extents))

    def world_to_index(self, p) -> GridIndex:
        """Index of the cell containing world point ``p`` (floor rule)."""
        p = np.asarray(p, dtype=np.float64)
        idx = np.floor((p - self.origin) / self.resolution).astype(np.int64)
        if not self.in_bounds(idx):
            raise OutOfBoundsError(f"point {p.tolist()} is outside the grid")
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def index_to_world(self, index) -> np.ndarray:
        """World coordinates of the center of cell ``index``."""
        if not self.in_bounds(index):
            raise OutOfBoundsError(f"index {tuple(index)} is outside the grid")
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.resolution


@dataclass
class OccupancyGrid(_GridBase):
    """Dense voxel grid of occupancy probabilities with an UNKNOWN sentinel."""

    cells: np.ndarray
    resolution: float
    origin: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float32)
        if self.cells.ndim != 3:
            raise ValueError("cells must be a 3-d array")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.resolution = float(self.resolution)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()

    @classmethod
    def new(cls, dims, resolution: float, origin=(0.0, 0.0, 0.0)) -> "OccupancyGrid":
        """All-UNKNOWN grid of the given shape."""
        dims = _as_dims(dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"grid dims must all be >= 1, got {dims}")
        if resolution <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        cells = np.full(dims, UNKNOWN, dtype=np.float32)
        return cls(cells=cells, resolution=resolution, origin=origin)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution, self.origin)

    def known_mask(self) -> np.ndarray:
        return self.cells != UNKNOWN

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def occupied_mask(self, threshold: float = DEFAULT_OCCUPANCY_THRESHOLD) -> np.ndarray:
        return self.cells > threshold

    def validate_values(self) -> None:
        c = self.cells
        bad = ~((c == UNKNOWN) | ((c >= 0.0) & (c <= 1.0)))
        if bad.any():
            raise ValueError(f"{int(bad.sum())} cells are neither UNKNOWN nor in [0, 1]")

    def discretize(self, threshold: float = DEFAULT_OCCUPANCY_THRESHOLD) -> "TrinaryGrid":
        """Map cells to {-1, 0, 1}: UNKNOWN -> -1, > threshold -> 1, else 0.

        A value exactly at the threshold maps to 0 (free).
        """
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        tri = np.where(self.cells > threshold, 1, 0).astype(np.int8)
        tri[self.cells == UNKNOWN] = -1
        return TrinaryGrid(cells=tri, resolution=self.resolution, origin=self.origin)

    def extract_block(self, region: Region) -> "OccupancyGrid":
        """Copy of the cells in ``region``; origin derived from the offset."""
        if not region.fits(self.dims):
            raise ValueError(f"region {region} does not fit in grid dims {self.dims}")
        block = self.cells[region.slices()].copy()
        origin = self.origin + np.asarray(region.offset, dtype=np.float64) * self.resolution
        return OccupancyGrid(cells=block, resolution=self.resolution, origin=origin)

    def write_block(self, region: Region, block: "OccupancyGrid") -> None:
        """Overwrite exactly the cells in ``region`` with ``block``'s cells."""
        if not region.fits(self.dims):
            raise ValueError(f"region {region} does not fit in grid dims {self.dims}")
        if tuple(block.dims) != tuple(region.dims):
            raise ValueError(f"block dims {block.dims} != region dims {region.dims}")
        self.cells[region.slices()] = block.cells

    def save(self, path) -> None:
        write_grid(path, self)

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        return read_grid(path)


@dataclass
class TrinaryGrid(_GridBase):
    """Grid discretized to -1 (unknown), 0 (free), 1 (occupied)."""

    cells: np.ndarray
    resolution: float
    origin: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 3:
            raise ValueError("cells must be a 3-d array")
        bad = ~np.isin(self.cells, (-1, 0, 1))
        if bad.any():
            raise ValueError("trinary cells may only hold -1, 0 or 1")
        self.resolution = float(self.resolution)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()

    def to_occupancy(self) -> OccupancyGrid:
        """Re-interpret trinary values as occupancy values (-1 stays UNKNOWN)."""
        return OccupancyGrid(self.cells.astype(np.float32), self.resolution, self.origin)


def new_grid(dims, resolution: float, origin=(0.0, 0.0, 0.0)) -> OccupancyGrid:
    return OccupancyGrid.new(dims, resolution, origin)


def known_ratio(partial: OccupancyGrid, target: OccupancyGrid) -> float:
    """Known cells of ``partial`` divided by known cells of ``target``."""
    if partial.dims != target.dims:
        raise ValueError(f"geometry mismatch: {partial.dims} vs {target.dims}")
    denom = target.known_count()
    if denom == 0:
        raise UndefinedRatioError("target map has no known cells")
    return partial.known_count() / denom


# ---------------------------------------------------------------------------
# Raycasting
# ---------------------------------------------------------------------------

class RayMode(Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


class StopCause(Enum):
    HIT_OCCUPIED = 0
    HIT_UNKNOWN = 1
    MAX_RANGE = 2
    OUT_OF_BOUNDS = 3


@dataclass
class RaycastResult:
    visited: list[GridIndex]
    terminal: GridIndex | None
    cause: StopCause


def _check_direction(direction: np.ndarray) -> None:
    n = float(np.linalg.norm(direction))
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"direction must be a unit vector, |d| = {n}")


def raycast(
    grid: OccupancyGrid,
    start,
    direction,
    max_range: float,
    mode: RayMode,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> RaycastResult:
    """Walk a ray through the grid by exact voxel traversal.

    The cell containing ``start`` is processed first and may itself stop the
    ray. FORWARD rays stop at the first cell with value > ``threshold``;
    REVERSE rays additionally stop at the first UNKNOWN cell. Cells are
    entered only while the boundary-crossing parameter stays <= ``max_range``.
    ``visited`` holds every traversed cell that did not stop the ray.
    """
    start = np.asarray(start, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    _check_direction(d)
    if max_range <= 0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    idx = list(grid.world_to_index(start))

    res = grid.resolution
    origin = grid.origin
    step = [0, 0, 0]
    t_max = [np.inf, np.inf, np.inf]
    t_delta = [np.inf, np.inf, np.inf]
    for a in range(3):
        if d[a] > 0.0:
            step[a] = 1
            t_max[a] = ((idx[a] + 1) * res + origin[a] - start[a]) / d[a]
            t_delta[a] = res / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            t_max[a] = (idx[a] * res + origin[a] - start[a]) / d[a]
            t_delta[a] = res / -d[a]

    cells = grid.cells
    dims = grid.dims
    visited: list[GridIndex] = []
    while True:
        v = cells[idx[0], idx[1], idx[2]]
        here = (idx[0], idx[1], idx[2])
        if mode is RayMode.REVERSE and v == UNKNOWN:
            return RaycastResult(visited, here, StopCause.HIT_UNKNOWN)
        if v > threshold:
            return RaycastResult(visited, here, StopCause.HIT_OCCUPIED)
        visited.append(here)

        axis = 0
        if t_max[1] < t_max[axis]:
            axis = 1
        if t_max[2] < t_max[axis]:
            axis = 2
        t_next = t_max[axis]
        if t_next > max_range:
            return RaycastResult(visited, None, StopCause.MAX_RANGE)
        idx[axis] += step[axis]
        if not (0 <= idx[axis] < dims[axis]):
            return RaycastResult(visited, None, StopCause.OUT_OF_BOUNDS)
        t_max[axis] += t_delta[axis]


@dataclass
class BatchRaycastResult:
    """Outcome of casting many rays from one start point in lockstep."""

    visited_ray: np.ndarray   # (M,) ray id of each visited free cell
    visited: np.ndarray       # (M, 3) visited free cells, traversal order per ray
    terminal: np.ndarray      # (R, 3) terminal cell per ray, -1 where none
    cause: np.ndarray         # (R,) StopCause values
    t_terminal: np.ndarray    # (R,) ray parameter at termination

    def visited_by_ray(self, ray: int) -> np.ndarray:
        return self.visited[self.visited_ray == ray]


def raycast_batch(
    grid: OccupancyGrid,
    start,
    directions: np.ndarray,
    max_range,
    mode: RayMode,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> BatchRaycastResult:
    """Vectorized lockstep equivalent of :func:`raycast` for many directions.

    Produces exactly the same visited cells, terminals and causes per ray as
    the scalar traversal; ``max_range`` may be a scalar or one value per ray.
    """
    start = np.asarray(start, dtype=np.float64)
    dirs = np.asarray(directions, dtype=np.float64)
    if dirs.ndim != 2 or dirs.shape[1] != 3:
        raise ValueError("directions must have shape (R, 3)")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("all directions must be unit vectors")
    R = dirs.shape[0]
    ranges = np.broadcast_to(np.asarray(max_range, dtype=np.float64), (R,)).copy()
    if np.any(ranges <= 0):
        raise ValueError("max_range must be positive")

    idx0 = grid.world_to_index(start)
    res = grid.resolution
    origin = grid.origin
    dims = np.asarray(grid.dims, dtype=np.int64)
    cells_flat = grid.cells.reshape(-1)

    idx = np.tile(np.asarray(idx0, dtype=np.int64), (R, 1))
    step = np.where(dirs > 0.0, 1, np.where(dirs < 0.0, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_pos = ((idx + 1) * res + origin - start) / dirs
        t_neg = (idx * res + origin - start) / dirs
        t_max = np.where(dirs > 0.0, t_pos, np.where(dirs < 0.0, t_neg, np.inf))
        t_delta = np.where(dirs != 0.0, res / np.abs(dirs), np.inf)

    active = np.ones(R, dtype=bool)
    cause = np.zeros(R, dtype=np.int64)
    terminal = np.full((R, 3), -1, dtype=np.int64)
    t_term = np.zeros(R, dtype=np.float64)
    visited_ray: list[np.ndarray] = []
    visited_cells: list[np.ndarray] = []
    ray_ids = np.arange(R)

    while active.any():
        act = np.flatnonzero(active)
        cur = idx[act]
        flat = (cur[:, 0] * dims[1] + cur[:, 1]) * dims[2] + cur[:, 2]
        v = cells_flat[flat]

        stop_unknown = (v == UNKNOWN) if mode is RayMode.REVERSE else np.zeros(len(act), dtype=bool)
        stop_occ = (v > threshold) & ~stop_unknown
        stopped = stop_unknown | stop_occ
        if stopped.any():
            hit = act[stopped]
            cause[hit] = np.where(stop_unknown[stopped], StopCause.HIT_UNKNOWN.value,
                                  StopCause.HIT_OCCUPIED.value)
            terminal[hit] = idx[hit]
            active[hit] = False

        alive = act[~stopped]
        if len(alive) == 0:
            continue
        visited_ray.append(ray_ids[alive].copy())
        visited_cells.append(idx[alive].copy())

        axis = np.argmin(t_max[alive], axis=1)
        t_next = t_max[alive, axis]
        over = t_next > ranges[alive]
        if over.any():
            done = alive[over]
            cause[done] = StopCause.MAX_RANGE.value
            t_term[done] = ranges[done]
            active[done] = False
        adv = alive[~over]
        if len(adv) == 0:
            continue
        ax = axis[~over]
        idx[adv, ax] += step[adv, ax]
        t_enter = t_next[~over]
        oob = (idx[adv, ax] < 0) | (idx[adv, ax] >= dims[ax])
        if oob.any():
            out = adv[oob]
            cause[out] = StopCause.OUT_OF_BOUNDS.value
            t_term[out] = t_enter[oob]
            active[out] = False
            adv = adv[~oob]
            ax = ax[~oob]
            t_enter = t_enter[~oob]
        t_term[adv] = t_enter
        t_max[adv, ax] += t_delta[adv, ax]

    if visited_cells:
        vr = np.concatenate(visited_ray)
        vc = np.concatenate(visited_cells)
        order = np.argsort(vr, kind="stable")
        vr = vr[order]
        vc = vc[order]
    else:
        vr = np.zeros(0, dtype=np.int64)
        vc = np.zeros((0, 3), dtype=np.int64)
    return BatchRaycastResult(vr, vc, terminal, cause, t_term)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` unit vectors approximately evenly distributed over the sphere."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * (np.pi * (3.0 - np.sqrt(5.0)))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Binary voxel file format
# ---------------------------------------------------------------------------

def write_grid(path, grid: OccupancyGrid) -> None:
    """Write the OCGR binary format (little-endian, f32 cells, -1 = UNKNOWN)."""
    path = Path(path)
    header = struct.pack(
        "<4sI3Id3d",
        _MAGIC,
        _FORMAT_VERSION,
        *grid.dims,
        grid.resolution,
        *grid.origin.tolist(),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.cells, dtype="<f4").tobytes())


def read_grid(path) -> OccupancyGrid:
    path = Path(path)
    header_size = struct.calcsize("<4sI3Id3d")
    with open(path, "rb") as f:
        header = f.read(header_size)
        if len(header) != header_size:
            raise ValueError(f"{path}: truncated header")
        magic, version, dx, dy, dz, res, ox, oy, oz = struct.unpack("<4sI3Id3d", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        n = dx * dy * dz
        raw = f.read(4 * n)
        if len(raw) != 4 * n:
            raise ValueError(f"{path}: truncated cell data")
    cells = np.frombuffer(raw, dtype="<f4").reshape(dx, dy, dz).copy()
    grid = OccupancyGrid(cells=cells, resolution=res, origin=(ox, oy, oz))
    grid.validate_values()
    return grid
