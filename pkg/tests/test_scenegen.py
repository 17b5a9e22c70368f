import numpy as np
import pytest
from scipy import ndimage

from voxnav.scenegen import Scene, SceneKind, SceneSpec, generate_scene, occupied_fraction
from voxnav.voxel import UNKNOWN


def box_field_spec(**kw):
    base = dict(
        kind=SceneKind.BOX_FIELD,
        extents=(4.0, 4.0, 2.0),
        resolution=0.1,
        obstacle_count=6,
        obstacle_size=(0.3, 1.0),
        seed=1,
        clearance=0.25,
    )
    base.update(kw)
    return SceneSpec(**base)


class TestGenerateScene:
    def test_corridor_dims_and_walls(self):
        spec = SceneSpec(
            kind=SceneKind.CORRIDOR,
            extents=(3.0, 30.0, 2.0),
            resolution=0.1,
            obstacle_count=10,
            seed=3,
        )
        scene = generate_scene(spec)
        assert scene.grid.dims == (30, 300, 20)
        c = scene.grid.cells
        assert np.all(c[0] == 1.0) and np.all(c[-1] == 1.0)
        assert np.all(c[:, 0] == 1.0) and np.all(c[:, -1] == 1.0)
        assert np.all(c[:, :, 0] == 1.0) and np.all(c[:, :, -1] == 1.0)

    def test_no_unknown_cells(self):
        scene = generate_scene(box_field_spec(seed=7))
        assert not np.any(scene.grid.cells == UNKNOWN)

    def test_empty_interior_when_no_obstacles(self):
        scene = generate_scene(box_field_spec(obstacle_count=0))
        assert np.all(scene.grid.cells[1:-1, 1:-1, 1:-1] == 0.0)

    def test_deterministic(self):
        a = generate_scene(box_field_spec(seed=11))
        b = generate_scene(box_field_spec(seed=11))
        assert np.array_equal(a.grid.cells, b.grid.cells)
        assert np.array_equal(a.start, b.start)
        assert np.array_equal(a.goal, b.goal)

    def test_different_seeds_differ(self):
        a = generate_scene(box_field_spec(seed=1))
        b = generate_scene(box_field_spec(seed=2))
        assert not np.array_equal(a.grid.cells, b.grid.cells) or not np.array_equal(a.start, b.start)

    def test_start_goal_clearance(self):
        spec = box_field_spec(seed=5, clearance=0.3)
        scene = generate_scene(spec)
        free = scene.grid.cells == 0.0
        dist = ndimage.distance_transform_edt(free, sampling=spec.resolution)
        assert dist[scene.grid.world_to_index(scene.start)] > spec.clearance
        assert dist[scene.grid.world_to_index(scene.goal)] > spec.clearance

    @pytest.mark.parametrize("seed", range(8))
    def test_start_goal_connected(self, seed):
        scene = generate_scene(box_field_spec(seed=seed, obstacle_count=10))
        free = scene.grid.cells == 0.0
        labels, _ = ndimage.label(free)
        assert (
            labels[scene.grid.world_to_index(scene.start)]
            == labels[scene.grid.world_to_index(scene.goal)]
        )


class TestOccupiedFraction:
    def test_walls_only_matches_shell_count(self):
        spec = box_field_spec(obstacle_count=0)
        scene = generate_scene(spec)
        dx, dy, dz = scene.grid.dims
        shell = dx * dy * dz - (dx - 2) * (dy - 2) * (dz - 2)
        assert occupied_fraction(scene) == pytest.approx(shell / (dx * dy * dz))

    def test_fully_occupied(self):
        scene = generate_scene(box_field_spec(obstacle_count=0))
        scene.grid.cells[:] = 1.0
        assert occupied_fraction(scene) == 1.0

    def test_obstacles_increase_fraction(self):
        empty = generate_scene(box_field_spec(obstacle_count=0))
        filled = generate_scene(box_field_spec(obstacle_count=8))
        assert occupied_fraction(filled) > occupied_fraction(empty)


class TestSceneIO:
    def test_save_load_round_trip(self, tmp_path):
        scene = generate_scene(box_field_spec(seed=13))
        scene.save(tmp_path / "scene_013")
        back = Scene.load(tmp_path / "scene_013")
        assert np.array_equal(back.grid.cells, scene.grid.cells)
        assert np.array_equal(back.start, scene.start)
        assert np.array_equal(back.goal, scene.goal)
        assert back.spec == scene.spec


class TestSpecValidation:
    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            SceneSpec(kind=SceneKind.BOX_FIELD, extents=(4, 4, 2), resolution=-0.1)

    def test_bad_size_range(self):
        with pytest.raises(ValueError):
            box_field_spec(obstacle_size=(1.0, 0.5))

    def test_kind_from_string(self):
        spec = box_field_spec()
        spec2 = SceneSpec(**{**spec.to_dict()})
        assert spec2.kind is SceneKind.BOX_FIELD

    def test_too_small_extents(self):
        with pytest.raises(ValueError):
            SceneSpec(kind=SceneKind.BOX_FIELD, extents=(0.2, 4, 2), resolution=0.1).grid_dims()
