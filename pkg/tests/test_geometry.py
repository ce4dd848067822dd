from types import SimpleNamespace

import numpy as np
import pytest
import torch

from muviecast.dataset import CameraParams, make_sample
from muviecast.errors import ConfigError, LoadError, ValidationError
from muviecast.geometry import (BackendSpec, DepthEstimate, PlaneSweepBackend,
                                binomial_downsample, build_backend, estimate,
                                homography_warp)
from muviecast.losses import depth_loss, volume_loss


def _stereo_pair(tx=0.05):
    K = np.array([[100.0, 0.0, 32.0], [0.0, 100.0, 24.0], [0.0, 0.0, 1.0]])
    ref = CameraParams(K, np.eye(4), 1.0, 0.1, 8)
    E = np.eye(4)
    E[0, 3] = tx
    src = CameraParams(K, E, 1.0, 0.1, 8)
    return src, ref


def test_warp_identity():
    rng = np.random.default_rng(0)
    img = rng.random((48, 64, 3)).astype(np.float32)
    _, ref = _stereo_pair()
    warped, mask = homography_warp(img, ref, ref, depth=2.0)
    assert isinstance(warped, np.ndarray)
    np.testing.assert_allclose(warped, img, atol=1e-5)
    np.testing.assert_allclose(mask, 1.0)


def test_warp_pure_translation_shifts_by_fx_tx_over_d():
    # a camera offset tx at depth d moves every sample by fx*tx/d pixels
    ramp = np.tile(np.arange(64, dtype=np.float32), (48, 1))
    src, ref = _stereo_pair(tx=0.05)
    warped, mask = homography_warp(ramp, src, ref, depth=2.0)
    shift = 100.0 * 0.05 / 2.0
    inside = mask[4:-4, 4:-4] > 0
    diff = (warped - ramp)[4:-4, 4:-4][inside]
    np.testing.assert_allclose(diff, shift, atol=1e-4)


def test_warp_round_trip_on_plane(plane_fixture):
    scene, gt_depths = plane_fixture
    warped, mask = homography_warp(scene.images[1], scene.cameras[1],
                                   scene.cameras[0], gt_depths[0])
    m = mask > 0
    assert m.mean() > 0.5
    rmse = float(np.sqrt(((warped - scene.images[0]) ** 2)[m].mean()))
    assert rmse < 0.02


def test_warp_scalar_depth_matches_map():
    rng = np.random.default_rng(1)
    img = rng.random((48, 64)).astype(np.float32)
    src, ref = _stereo_pair()
    a, _ = homography_warp(img, src, ref, 2.0)
    b, _ = homography_warp(img, src, ref, np.full((48, 64), 2.0))
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert a.ndim == 2                       # HxW in, HxW out


def test_warp_tensor_input_carries_gradients():
    src, ref = _stereo_pair()
    img = torch.rand(3, 48, 64, requires_grad=True)
    warped, mask = homography_warp(img, src, ref, 2.0)
    assert torch.is_tensor(warped) and warped.shape == (3, 48, 64)
    warped.sum().backward()
    assert img.grad is not None
    assert torch.isfinite(img.grad).all()


def test_warp_validation():
    src, ref = _stereo_pair()
    img = np.zeros((8, 8), np.float32)
    with pytest.raises(ValidationError):
        homography_warp(img, src, ref, -1.0)
    with pytest.raises(ValidationError):
        homography_warp(img, src, ref, np.zeros((8, 8)))
    fake = SimpleNamespace(intrinsics=np.zeros((3, 3)), extrinsics=np.eye(4))
    with pytest.raises(ValidationError):
        homography_warp(img, fake, ref, 1.0)


def test_binomial_downsample_alignment():
    x = torch.zeros(1, 1, 8, 8)
    x[0, 0, 4, 4] = 1.0
    y = binomial_downsample(x)
    assert y.shape == (1, 1, 4, 4)
    # input pixel 2j is the center of output pixel j
    flat = y[0, 0]
    assert flat.argmax().item() == 2 * 4 + 2
    const = binomial_downsample(torch.full((1, 2, 8, 8), 0.7))
    torch.testing.assert_close(const, torch.full((1, 2, 4, 4), 0.7))


def test_backend_spec_validation():
    with pytest.raises(ConfigError):
        BackendSpec(num_stages=0, stage_hypotheses=())
    with pytest.raises(ConfigError):
        BackendSpec(stage_hypotheses=(9, None))
    with pytest.raises(ConfigError):
        BackendSpec(groupwise_groups=5)
    with pytest.raises(ConfigError):
        BackendSpec(kind="magic")
    with pytest.raises(ConfigError):
        PlaneSweepBackend(BackendSpec(num_stages=2, stage_hypotheses=(9, None)))
    with pytest.raises(ConfigError):
        PlaneSweepBackend(BackendSpec(stage_hypotheses=(9, 9, 17)))


def test_backend_parameter_counts():
    assert PlaneSweepBackend(BackendSpec(feature_base=21)).parameter_count() \
        == 972_838
    assert PlaneSweepBackend(BackendSpec(feature_base=10)).parameter_count() \
        == 254_450


def test_backend_is_frozen_and_reproducible(backend):
    assert all(not p.requires_grad for p in backend.parameters())
    assert not backend.training
    assert backend.downsample_factor == 32
    again = PlaneSweepBackend(BackendSpec())
    for a, b in zip(backend.state_dict().values(), again.state_dict().values()):
        torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_backend_seed_changes_weights():
    a = PlaneSweepBackend(BackendSpec(init_seed=1))
    b = PlaneSweepBackend(BackendSpec(init_seed=2))
    diff = any(not torch.equal(p, q) for p, q in
               zip(a.state_dict().values(), b.state_dict().values()))
    assert diff


def test_backend_weights_round_trip(tmp_path, backend):
    path = tmp_path / "backend.pt"
    torch.save(backend.state_dict(), path)
    loaded = PlaneSweepBackend(BackendSpec(weights_path=str(path)))
    assert loaded.parameter_count() == backend.parameter_count()
    with pytest.raises(LoadError):
        PlaneSweepBackend(BackendSpec(weights_path=str(tmp_path / "no.pt")))
    wrong = tmp_path / "wrong.pt"
    torch.save(PlaneSweepBackend(BackendSpec(feature_base=10)).state_dict(), wrong)
    with pytest.raises(LoadError):
        PlaneSweepBackend(BackendSpec(weights_path=str(wrong)))


def test_estimate_input_validation(backend, plane_fixture):
    scene, _ = plane_fixture
    sample = make_sample(scene, 0, window=3)
    with pytest.raises(ValidationError):
        backend.estimate_images(sample.images[:1], sample.cameras[:1],
                                sample.depth_hypotheses)
    with pytest.raises(ValidationError):
        backend.estimate_images(
            [im[:100] for im in sample.images], sample.cameras,
            sample.depth_hypotheses)      # 100 x 160: height not /32
    for bad in ([-1.0, 1.0], [0.0, 1.0], [1.0, float("nan")]):
        with pytest.raises(ValidationError):
            backend.estimate_images(sample.images, sample.cameras, bad)


def test_estimate_structure(plane_estimate, plane_fixture):
    est, sample, _ = plane_estimate
    scene, _ = plane_fixture
    H, W = scene.height, scene.width
    assert isinstance(est, DepthEstimate)
    assert len(est.stages) == 3
    for level, stage in enumerate(est.stages):
        f = 2 ** (level + 1)
        assert stage.depth_map.shape == (H // f, W // f)
        assert stage.probability_volume.shape[1:] == (H // f, W // f)
        assert stage.hypotheses.shape == stage.probability_volume.shape
        assert stage.valid_mask.dtype == torch.bool
        sums = stage.probability_volume.sum(0)
        assert (sums - 1.0).abs().max().item() <= 1e-4
    cam = sample.ref_camera
    assert est.stages[2].interval == pytest.approx(cam.depth_interval)
    assert est.stages[1].interval == pytest.approx(cam.depth_interval / 2)
    assert est.stages[0].interval == pytest.approx(cam.depth_interval / 4)
    assert est.depth_map is est.stages[0].depth_map


def test_estimate_hits_plane_depth(plane_estimate):
    est, sample, gt = plane_estimate
    stage = est.stages[0]
    h, w = stage.depth_map.shape
    gt_t = torch.from_numpy(gt.astype(np.float32))
    gt_s = torch.nn.functional.interpolate(
        gt_t.reshape(1, 1, *gt.shape), size=(h, w), mode="bilinear",
        align_corners=False).reshape(h, w)
    err = (stage.depth_map - gt_s).abs()
    good = (err[stage.valid_mask] <= sample.ref_camera.depth_interval)
    assert good.float().mean().item() >= 0.95


def test_estimate_source_order_invariance(backend, plane_fixture):
    scene, _ = plane_fixture
    sample = make_sample(scene, 0, window=3)
    fwd = backend.estimate_images(sample.images, sample.cameras,
                                  sample.depth_hypotheses)
    rev = backend.estimate_images(
        [sample.images[0], sample.images[2], sample.images[1]],
        [sample.cameras[0], sample.cameras[2], sample.cameras[1]],
        sample.depth_hypotheses)
    diff = (fwd.depth_map - rev.depth_map).abs().max().item()
    assert diff <= 1e-5


def test_estimate_counter_tracks_calls(backend, plane_fixture):
    scene, _ = plane_fixture
    sample = make_sample(scene, 0, window=2)
    before = PlaneSweepBackend.estimate_calls
    backend.estimate(sample)
    assert PlaneSweepBackend.estimate_calls == before + 1


_FAKE_BACKEND = '''
import torch


def estimate(sample):
    import numpy as np
    h, w = np.asarray(sample.ref_image).shape[:2]
    d = float(sample.depth_hypotheses[len(sample.depth_hypotheses) // 2])
    return [
        {"depth_map": torch.full((h // 2, w // 2), d), "interval": 0.1},
        {"depth_map": torch.full((h // 4, w // 4), d), "interval": 0.2},
        {"depth_map": torch.full((h // 8, w // 8), d), "interval": 0.4},
    ]
'''


def test_external_backend_adapter(tmp_path, monkeypatch, plane_fixture):
    (tmp_path / "fake_depth_mod.py").write_text(_FAKE_BACKEND)
    monkeypatch.syspath_prepend(str(tmp_path))
    scene, _ = plane_fixture
    sample = make_sample(scene, 0, window=3)
    backend = build_backend(BackendSpec(kind="external:fake_depth_mod"))
    est = backend.estimate(sample)
    assert len(est.stages) == 3
    assert est.stages[0].probability_volume is None
    assert est.stages[0].valid_mask.all()
    assert backend.parameter_count() == 0
    # depth-only stages: the volume term degrades to zero, depth term works
    assert volume_loss(est, est).item() == 0.0
    assert depth_loss(est, est).item() == 0.0
    via_images = backend.estimate_images(sample.images, sample.cameras,
                                         sample.depth_hypotheses)
    torch.testing.assert_close(via_images.depth_map, est.depth_map)


def test_external_backend_errors(tmp_path, monkeypatch):
    with pytest.raises(LoadError):
        build_backend(BackendSpec(kind="external:not_a_real_module_xyz"))
    (tmp_path / "hollow_mod.py").write_text("x = 1\n")
    monkeypatch.syspath_prepend(str(tmp_path))
    with pytest.raises(LoadError):
        build_backend(BackendSpec(kind="external:hollow_mod"))


def test_module_level_estimate_caches(plane_fixture):
    scene, _ = plane_fixture
    sample = make_sample(scene, 0, window=2)
    spec = BackendSpec(feature_base=10)
    a = estimate(sample, spec)
    b = estimate(sample, spec)
    torch.testing.assert_close(a.depth_map, b.depth_map, rtol=0, atol=0)
