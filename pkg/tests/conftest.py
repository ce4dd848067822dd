import numpy as np
import pytest

from muviecast.dataset import make_sample, write_image, write_scene
from muviecast.geometry import BackendSpec, PlaneSweepBackend
from muviecast.synthetic import (make_cube_scene, make_plane_scene,
                                 make_style_image)


@pytest.fixture(scope="session")
def plane_fixture():
    """(scene, per-view ground-truth depths) for a fronto-parallel plane."""
    return make_plane_scene()


@pytest.fixture(scope="session")
def cube_fixture():
    return make_cube_scene()


@pytest.fixture(scope="session")
def style_image():
    return make_style_image()


@pytest.fixture(scope="session")
def backend():
    return PlaneSweepBackend(BackendSpec())


@pytest.fixture(scope="session")
def plane_estimate(plane_fixture, backend):
    scene, gt_depths = plane_fixture
    sample = make_sample(scene, ref_index=0, window=3)
    return backend.estimate(sample), sample, gt_depths[0]


@pytest.fixture(scope="session")
def cube_scene_dir(tmp_path_factory, cube_fixture, style_image):
    """Cube scene written to disk, for CLI and IO round-trip tests."""
    root = tmp_path_factory.mktemp("cube")
    scene, _ = cube_fixture
    write_scene(scene, root / "scene")
    write_image(root / "style.png", style_image)
    return root


@pytest.fixture(scope="session")
def image_folder(tmp_path_factory, cube_fixture):
    """Plain folder of images (no cameras), for pretraining."""
    folder = tmp_path_factory.mktemp("imgs")
    scene, _ = cube_fixture
    for i, im in enumerate(scene.images):
        write_image(folder / f"{i:08d}.png", im)
    return folder
