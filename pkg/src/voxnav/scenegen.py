"""Procedural ground-truth scenes: walled corridors and rooms with box obstacles.

Scenes are fully known (no UNKNOWN cells), wrapped in boundary walls, and
deterministic functions of their spec: the same spec and seed always
reproduce the same cell array, start and goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SceneGenerationError
from .voxel import OccupancyGrid

MAX_SCENE_CELLS = 40_000_000  # memory guard: ~160 MB of f32 cells


class SceneKind(Enum):
    CORRIDOR = "corridor"
    SQUARE_ROOM = "square_room"
    BOX_FIELD = "box_field"


@dataclass
class SceneSpec:
    kind: SceneKind
    extents: tuple[float, float, float]
    resolution: float
    obstacle_count: int = 0
    obstacle_size: tuple[float, float] = (0.3, 1.0)
    seed: int = 0
    clearance: float = 0.3

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = SceneKind(self.kind.lower())
        self.extents = tuple(float(v) for v in self.extents)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be non-negative")
        lo, hi = self.obstacle_size
        if not 0 < lo <= hi:
            raise ValueError(f"obstacle size range must satisfy 0 < min <= max, got {self.obstacle_size}")
        if self.clearance < 0:
            raise ValueError("clearance must be non-negative")

    def grid_dims(self) -> tuple[int, int, int]:
        dims = tuple(int(round(e / self.resolution)) for e in self.extents)
        if any(d < 4 for d in dims):
            raise ValueError(f"extents {self.extents} at resolution {self.resolution} are too small: {dims}")
        n = dims[0] * dims[1] * dims[2]
        if n > MAX_SCENE_CELLS:
            raise ValueError(f"scene would need {n} cells, over the {MAX_SCENE_CELLS} budget")
        return dims

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["extents"] = tuple(d["extents"])
        d["obstacle_size"] = tuple(d["obstacle_size"])
        return cls(**d)


@dataclass
class Scene:
    grid: OccupancyGrid
    start: np.ndarray
    goal: np.ndarray
    spec: SceneSpec

    def save(self, stem: Path) -> None:
        """Write <stem>.ocgr plus a <stem>.json sidecar with spec/start/goal."""
        stem = Path(stem)
        self.grid.save(stem.with_suffix(".ocgr"))
        sidecar = {
            "spec": self.spec.to_dict(),
            "start": [float(v) for v in self.start],
            "goal": [float(v) for v in self.goal],
        }
        stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, stem: Path) -> "Scene":
        stem = Path(stem)
        grid = OccupancyGrid.load(stem.with_suffix(".ocgr"))
        meta = json.loads(stem.with_suffix(".json").read_text())
        return cls(
            grid=grid,
            start=np.asarray(meta["start"], dtype=np.float64),
            goal=np.asarray(meta["goal"], dtype=np.float64),
            spec=SceneSpec.from_dict(meta["spec"]),
        )


_PLACEMENT_RETRIES = 200


def _sample_box(rng: np.random.Generator, spec: SceneSpec, dims) -> tuple[slice, slice, slice]:
    """Random axis-aligned box in cell coordinates, clipped to the interior."""
    res = spec.resolution
    lo, hi = spec.obstacle_size
    size = np.maximum(1, np.round(rng.uniform(lo, hi, size=3) / res).astype(int))
    # floor-standing columns dominate; BOX_FIELD also floats some boxes
    floats = spec.kind is SceneKind.BOX_FIELD and rng.random() < 0.3
    interior = [d - 2 for d in dims]
    size = np.minimum(size, interior)
    ix = rng.integers(1, max(2, dims[0] - 1 - size[0] + 1))
    iy = rng.integers(1, max(2, dims[1] - 1 - size[1] + 1))
    if floats:
        iz = rng.integers(1, max(2, dims[2] - 1 - size[2] + 1))
    else:
        iz = 1
        size[2] = min(int(round(rng.uniform(0.5, 1.0) * (dims[2] - 2))) or 1, dims[2] - 2)
    return (slice(ix, ix + size[0]), slice(iy, iy + size[1]), slice(iz, iz + size[2]))


def _endpoint_bands(spec: SceneSpec, dims) -> tuple[tuple, tuple]:
    """Cell-index sampling bands for start (low side) and goal (high side)."""
    margin = max(2, int(np.ceil(spec.clearance / spec.resolution)) + 1)
    zc = (margin, max(margin + 1, dims[2] - margin))
    if spec.kind is SceneKind.CORRIDOR:
        # travel along the long axis
        long_axis = 0 if dims[0] >= dims[1] else 1
        short = 1 - long_axis
        band = max(margin + 1, int(0.1 * dims[long_axis]))
        lo = [(margin, band), (margin, dims[short] - margin), zc]
        hi = [(dims[long_axis] - band, dims[long_axis] - margin), (margin, dims[short] - margin), zc]
        if long_axis == 1:
            lo[0], lo[1] = lo[1], lo[0]
            hi[0], hi[1] = hi[1], hi[0]
        return tuple(lo), tuple(hi)
    band = max(margin + 1, int(0.15 * dims[0]))
    lo = ((margin, band), (margin, dims[1] - margin), zc)
    hi = ((dims[0] - band, dims[0] - margin), (margin, dims[1] - margin), zc)
    return lo, hi


def _sample_clear_point(rng, grid: OccupancyGrid, free_dist: np.ndarray, band, clearance: float):
    for _ in range(_PLACEMENT_RETRIES):
        idx = tuple(int(rng.integers(b0, b1)) for (b0, b1) in band)
        if free_dist[idx] > clearance:
            return idx
    return None


def generate_scene(spec: SceneSpec) -> Scene:
    """Build a walled scene with seeded random boxes and a reachable start/goal.

    Retries obstacle layouts until start and goal can be placed with the
    requested clearance and are connected through free space.
    """
    dims = spec.grid_dims()

    for attempt in range(20):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(attempt,)))
        grid = OccupancyGrid.new(dims, spec.resolution)
        cells = grid.cells
        cells[:] = 0.0
        cells[0, :, :] = cells[-1, :, :] = 1.0
        cells[:, 0, :] = cells[:, -1, :] = 1.0
        cells[:, :, 0] = cells[:, :, -1] = 1.0
        for _ in range(spec.obstacle_count):
            cells[_sample_box(rng, spec, dims)] = 1.0

        free = cells == 0.0
        free_dist = ndimage.distance_transform_edt(free, sampling=spec.resolution)
        lo_band, hi_band = _endpoint_bands(spec, dims)
        s_idx = _sample_clear_point(rng, grid, free_dist, lo_band, spec.clearance)
        g_idx = _sample_clear_point(rng, grid, free_dist, hi_band, spec.clearance)
        if s_idx is None or g_idx is None:
            continue
        labels, _ = ndimage.label(free)
        if labels[s_idx] != labels[g_idx]:
            continue
        return Scene(
            grid=grid,
            start=grid.index_to_world(s_idx),
            goal=grid.index_to_world(g_idx),
            spec=spec,
        )
    raise SceneGenerationError(
        f"could not place start/goal with clearance {spec.clearance} after 20 layouts (seed {spec.seed})"
    )


def occupied_fraction(scene: Scene) -> float:
    """Occupied cells divided by total cells."""
    return float(np.count_nonzero(scene.grid.cells > 0.5)) / scene.grid.n_cells
