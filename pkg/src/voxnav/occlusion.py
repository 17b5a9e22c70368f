"""Self-supervised occlusion pairs: observe a known scene from virtual paths.

A partial map is synthesized from a fully (or mostly) known target map by
casting reverse rays from scan points placed along random collision-free
straight paths, fusing the simulated scans, and accepting the result only
when its known-cell ratio falls strictly inside a configured window. Noise
is applied to the fused partial map afterwards.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import OcclusionGenerationError, PathSamplingError
from .scenegen import SceneSpec, generate_scene
from .voxel import (
    UNKNOWN,
    OccupancyGrid,
    RayMode,
    StopCause,
    fibonacci_sphere,
    known_ratio,
    raycast_batch,
)

log = logging.getLogger(__name__)


@dataclass
class OcclusionParams:
    t_max: int = 40
    scan_interval: float = 1.0
    rays_per_scan: int = 2048
    scan_max_range: float = 6.0
    r_min: float = 0.25
    r_max: float = 0.90
    pairs_per_scene: int = 1
    path_clearance: float = 0.2
    path_retries: int = 50
    target_defect_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.r_min < self.r_max <= 1.0:
            raise ValueError(f"need 0 < r_min < r_max <= 1, got ({self.r_min}, {self.r_max})")
        if self.scan_interval <= 0:
            raise ValueError("scan_interval must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.rays_per_scan < 1:
            raise ValueError("rays_per_scan must be >= 1")
        if not 0.0 <= self.target_defect_rate < 1.0:
            raise ValueError("target_defect_rate must lie in [0, 1)")


@dataclass
class NoiseParams:
    gaussian_sigma: float = 0.0
    pepper_rate: float = 0.0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be non-negative")
        if not 0.0 <= self.pepper_rate <= 1.0:
            raise ValueError("pepper_rate must lie in [0, 1]")


@dataclass
class PairMetadata:
    scene_id: str
    seed: int
    known_ratio: float
    paths_used: int = 0


@dataclass
class DataPair:
    target: OccupancyGrid
    partial: OccupancyGrid
    metadata: PairMetadata


def _free_mask(grid: OccupancyGrid, threshold: float = 0.5) -> np.ndarray:
    c = grid.cells
    return (c != UNKNOWN) & (c <= threshold)


def sample_virtual_path(
    target: OccupancyGrid,
    params: OcclusionParams,
    rng: np.random.Generator,
    free_dist: np.ndarray | None = None,
) -> np.ndarray:
    """Scan points along a random collision-free straight segment.

    Points sit at multiples of ``scan_interval`` from the segment start, and
    the far endpoint is always appended so short paths still cover both ends.
    Returns an (n, 3) array of world points.
    """
    free = _free_mask(target)
    free_idx = np.argwhere(free)
    if len(free_idx) == 0:
        raise PathSamplingError("target map has no free cells")
    if free_dist is None:
        free_dist = ndimage.distance_transform_edt(free, sampling=target.resolution)

    res = target.resolution
    check_step = res / 2.0
    for _ in range(params.path_retries):
        pick = free_idx[rng.integers(0, len(free_idx), size=2)]
        p0 = target.index_to_world(tuple(pick[0]))
        p1 = target.index_to_world(tuple(pick[1]))
        length = float(np.linalg.norm(p1 - p0))
        if length < 1e-9:
            continue
        n_checks = int(np.ceil(length / check_step)) + 1
        ts = np.linspace(0.0, 1.0, n_checks)
        pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
        cell = np.floor((pts - target.origin) / res).astype(np.int64)
        if free_dist[cell[:, 0], cell[:, 1], cell[:, 2]].min() <= params.path_clearance:
            continue
        n_scans = int(np.floor(length / params.scan_interval))
        dists = [k * params.scan_interval for k in range(n_scans + 1)]
        if length - dists[-1] > 1e-9:
            dists.append(length)
        u = (p1 - p0) / length
        return p0[None, :] + np.asarray(dists)[:, None] * u[None, :]
    raise PathSamplingError(f"no collision-free segment found in {params.path_retries} tries")


def simulate_observation(
    target: OccupancyGrid,
    scan_point,
    params: OcclusionParams,
    directions: np.ndarray | None = None,
) -> OccupancyGrid:
    """What a spherical virtual sensor at ``scan_point`` would see of ``target``.

    Rays stop at occupied or unknown target cells; traversed cells are marked
    free (0), occupied terminals are marked occupied (1), the rest stays
    UNKNOWN.
    """
    scan_point = np.asarray(scan_point, dtype=np.float64)
    idx = target.world_to_index(scan_point)
    v = target.cells[idx]
    if v == UNKNOWN or v > 0.5:
        raise ValueError(f"scan point {scan_point.tolist()} is not in known free space")
    if directions is None:
        directions = fibonacci_sphere(params.rays_per_scan)
    out = OccupancyGrid.new(target.dims, target.resolution, target.origin)
    batch = raycast_batch(target, scan_point, directions, params.scan_max_range, RayMode.REVERSE)
    vc = batch.visited
    out.cells[vc[:, 0], vc[:, 1], vc[:, 2]] = 0.0
    hits = batch.terminal[batch.cause == StopCause.HIT_OCCUPIED.value]
    out.cells[hits[:, 0], hits[:, 1], hits[:, 2]] = 1.0
    return out


def fuse_map(accum: OccupancyGrid, scan: OccupancyGrid) -> OccupancyGrid:
    """First-write-wins fusion: unknown cells of ``accum`` take ``scan`` values."""
    if accum.dims != scan.dims:
        raise ValueError(f"geometry mismatch: {accum.dims} vs {scan.dims}")
    out = accum.copy()
    mask = out.cells == UNKNOWN
    out.cells[mask] = scan.cells[mask]
    return out


def generate_occluded_map(
    target: OccupancyGrid,
    params: OcclusionParams,
    rng: np.random.Generator,
    scene_id: str = "",
    seed: int = 0,
) -> DataPair:
    """Accumulate virtual-path scans until the known ratio enters the window.

    Scans from successive paths fuse into one partial map, so the known ratio
    only grows; once it exceeds the upper bound the attempt cannot recover
    and the generation fails early.
    """
    free = _free_mask(target)
    free_dist = ndimage.distance_transform_edt(free, sampling=target.resolution)
    directions = fibonacci_sphere(params.rays_per_scan)
    partial = OccupancyGrid.new(target.dims, target.resolution, target.origin)
    paths = 0
    for _ in range(params.t_max):
        try:
            scan_points = sample_virtual_path(target, params, rng, free_dist=free_dist)
        except PathSamplingError:
            continue
        paths += 1
        for p in scan_points:
            scan = simulate_observation(target, p, params, directions=directions)
            partial = fuse_map(partial, scan)
        ratio = known_ratio(partial, target)
        if params.r_min < ratio < params.r_max:
            return DataPair(
                target=target,
                partial=partial,
                metadata=PairMetadata(scene_id=scene_id, seed=seed, known_ratio=ratio, paths_used=paths),
            )
        if ratio >= params.r_max:
            break
    raise OcclusionGenerationError(
        f"no acceptable partial map within {params.t_max} attempts (scene {scene_id!r})"
    )


def add_noise(grid: OccupancyGrid, noise: NoiseParams, rng: np.random.Generator) -> OccupancyGrid:
    """Pepper-resample or Gaussian-perturb known cells; UNKNOWN stays untouched."""
    out = grid.copy()
    known = out.cells != UNKNOWN
    n = int(known.sum())
    if n == 0:
        return out
    values = out.cells[known].astype(np.float64)
    pepper = rng.random(n) < noise.pepper_rate
    uniform = rng.uniform(0.0, 1.0, size=n)
    gauss = rng.normal(0.0, noise.gaussian_sigma, size=n) if noise.gaussian_sigma > 0 else np.zeros(n)
    perturbed = np.clip(values + gauss, 0.0, 1.0)
    out.cells[known] = np.where(pepper, uniform, perturbed).astype(np.float32)
    return out


def apply_defects(target: OccupancyGrid, rate: float, rng: np.random.Generator) -> OccupancyGrid:
    """Set a random fraction of known target cells to UNKNOWN."""
    out = target.copy()
    if rate <= 0:
        return out
    mask = rng.random(out.dims) < rate
    out.cells[mask] = UNKNOWN
    return out


@dataclass
class DatasetManifest:
    seed: int
    train_fraction: float
    occlusion: dict
    noise: dict
    pairs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def ids_for_split(self, split: str) -> list[str]:
        return [p["id"] for p in self.pairs if p["split"] == split]


def generate_dataset(
    scene_specs: list[SceneSpec],
    occlusion: OcclusionParams,
    noise: NoiseParams,
    train_fraction: float,
    out_dir,
    seed: int = 0,
) -> DatasetManifest:
    """Write (target, partial) voxel-file pairs plus a JSON manifest.

    The train/validation split is drawn at scene granularity so no scene
    contributes pairs to both splits. Generation failures are logged and the
    affected pair is skipped.
    """
    if not scene_specs:
        raise ValueError("need at least one scene spec")
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    out_dir = Path(out_dir)
    pairs_dir = out_dir / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)

    n_scenes = len(scene_specs)
    split_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    perm = split_rng.permutation(n_scenes)
    n_train = int(np.ceil(train_fraction * n_scenes))
    if train_fraction < 1.0 and n_scenes >= 2:
        n_train = min(n_train, n_scenes - 1)
    train_scenes = set(int(i) for i in perm[:n_train])

    manifest = DatasetManifest(
        seed=seed,
        train_fraction=train_fraction,
        occlusion=asdict(occlusion),
        noise=asdict(noise),
    )
    for si, spec in enumerate(scene_specs):
        scene = generate_scene(spec)
        split = "train" if si in train_scenes else "val"
        for pi in range(occlusion.pairs_per_scene):
            pair_id = f"s{si:04d}_p{pi:02d}"
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, si, pi)))
            target = apply_defects(scene.grid, occlusion.target_defect_rate, rng)
            try:
                pair = generate_occluded_map(target, occlusion, rng, scene_id=f"s{si:04d}", seed=seed)
            except OcclusionGenerationError as exc:
                log.warning("skipping pair %s: %s", pair_id, exc)
                continue
            noisy = add_noise(pair.partial, noise, rng)
            target_file = f"pairs/{pair_id}.target.ocgr"
            partial_file = f"pairs/{pair_id}.partial.ocgr"
            pair.target.save(out_dir / target_file)
            noisy.save(out_dir / partial_file)
            manifest.pairs.append(
                {
                    "id": pair_id,
                    "scene_id": f"s{si:04d}",
                    "scene_seed": spec.seed,
                    "split": split,
                    "known_ratio": pair.metadata.known_ratio,
                    "paths_used": pair.metadata.paths_used,
                    "target": target_file,
                    "partial": partial_file,
                }
            )
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


def load_pair(out_dir, entry: dict) -> DataPair:
    out_dir = Path(out_dir)
    target = OccupancyGrid.load(out_dir / entry["target"])
    partial = OccupancyGrid.load(out_dir / entry["partial"])
    meta = PairMetadata(
        scene_id=entry["scene_id"], seed=entry.get("scene_seed", 0),
        known_ratio=entry["known_ratio"], paths_used=entry.get("paths_used", 0),
    )
    return DataPair(target=target, partial=partial, metadata=meta)
