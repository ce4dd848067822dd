import numpy as np

from muviecast.synthetic import (look_at_extrinsics, make_cube_scene,
                                 make_plane_scene, make_style_image,
                                 multi_octave_texture, quantize_to_8bit)


def test_plane_scene_geometry(plane_fixture):
    scene, gt_depths = plane_fixture
    assert len(scene) == 3
    assert (scene.height, scene.width) == (128, 160)
    assert scene.height % 32 == 0 and scene.width % 32 == 0
    for img, depth in zip(scene.images, gt_depths):
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert (depth > 0).all()
    # fronto-parallel plane: reference view depth is the plane depth
    np.testing.assert_allclose(gt_depths[0], 3.6, atol=1e-5)
    cam = scene.cameras[0]
    hyp = cam.depth_hypotheses()
    assert hyp[0] <= 3.6 <= hyp[-1]
    assert not np.isclose(3.6, (hyp[0] + hyp[-1]) / 2, atol=cam.depth_interval / 4)


def test_cube_scene_geometry(cube_fixture):
    scene, gt_depths = cube_fixture
    assert len(scene) == 4
    assert (scene.height, scene.width) == (128, 160)
    for cam, depth in zip(scene.cameras, gt_depths):
        hyp = cam.depth_hypotheses()
        assert (depth > hyp[0] - cam.depth_interval).all()
        assert (depth < hyp[-1] + cam.depth_interval).all()
    # the cube sticks out of the background: two distinct depth bands
    spread = gt_depths[0].max() - gt_depths[0].min()
    assert spread > 1.0


def test_scenes_are_deterministic():
    a, _ = make_plane_scene()
    b, _ = make_plane_scene()
    for x, y in zip(a.images, b.images):
        np.testing.assert_array_equal(x, y)


def test_look_at_extrinsics_properties():
    E = look_at_extrinsics([1.0, 0.5, -4.0], [0.0, 0.0, 0.0])
    R = E[:3, :3]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    # camera center maps to the camera-frame origin
    center = R.T @ -E[:3, 3]
    np.testing.assert_allclose(center, [1.0, 0.5, -4.0], atol=1e-12)
    # the target lands on the optical axis (x=y=0, z>0)
    cam_pt = R @ np.array([0.0, 0.0, 0.0]) + E[:3, 3]
    np.testing.assert_allclose(cam_pt[:2], 0.0, atol=1e-12)
    assert cam_pt[2] > 0


def test_style_image_contract(style_image):
    assert style_image.shape == (128, 160, 3)
    assert style_image.dtype == np.float32
    assert style_image.min() >= 0.0 and style_image.max() <= 1.0
    other = make_style_image(seed=5)
    assert np.abs(other - style_image).mean() > 0.05


def test_quantize_round_trip():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8, 3))
    q = quantize_to_8bit(img)
    np.testing.assert_array_equal(q, quantize_to_8bit(q))
    assert np.abs(q - img).max() <= 0.5 / 255.0 + 1e-9


def test_texture_is_seeded_and_bounded():
    u, v = np.meshgrid(np.linspace(0, 10, 32), np.linspace(0, 10, 16))
    t1 = multi_octave_texture(u, v, seed=4)
    t2 = multi_octave_texture(u, v, seed=4)
    np.testing.assert_array_equal(t1, t2)
    assert t1.shape == (16, 32, 3)
    assert t1.min() >= 0.05 - 1e-9 and t1.max() <= 0.95 + 1e-9
    t3 = multi_octave_texture(u, v, seed=5)
    assert np.abs(t3 - t1).mean() > 0.01
