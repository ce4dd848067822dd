import math
from types import SimpleNamespace

import pytest
import torch

from muviecast.errors import ConfigError, ValidationError
from muviecast.losses import (LossWeights, canny_loss, canny_map,
                              content_loss, depth_loss, gram_matrix,
                              gram_style_loss, image_geometry_loss,
                              in_stats_style_loss, laplace_loss, laplace_map,
                              nnfm_loss, smooth_l1, sobel_loss, sobel_map,
                              stage_weight, total_loss, tv_loss, volume_loss)


def _stage(depth, volume):
    return SimpleNamespace(depth_map=depth, probability_volume=volume)


def test_smooth_l1_pinned_values():
    a = torch.zeros(4)
    assert smooth_l1(a, torch.full((4,), 0.5)).item() == pytest.approx(0.125)
    assert smooth_l1(a, torch.full((4,), 2.0)).item() == pytest.approx(1.5)
    assert smooth_l1(a, a).item() == 0.0


def test_smooth_l1_validation():
    with pytest.raises(ValidationError):
        smooth_l1(torch.zeros(3), torch.zeros(4))
    with pytest.raises(ValidationError):
        smooth_l1(torch.zeros(0), torch.zeros(0))


def test_content_loss_unit_shift():
    fr = {"relu2_2": torch.rand(8, 4, 4)}
    ft = {"relu2_2": fr["relu2_2"] + 1.0}
    assert content_loss(ft, fr, ["relu2_2"]).item() == pytest.approx(1.0)
    assert content_loss(fr, fr, ["relu2_2"]).item() == 0.0


def test_content_loss_sums_layers():
    fr = {"a": torch.zeros(2, 3, 3), "b": torch.zeros(2, 3, 3)}
    ft = {"a": torch.ones(2, 3, 3), "b": torch.full((2, 3, 3), 2.0)}
    assert content_loss(ft, fr, ["a", "b"]).item() == pytest.approx(5.0)
    with pytest.raises(ValidationError):
        content_loss(ft, fr, [])
    with pytest.raises(ValidationError):
        content_loss(ft, fr, ["missing"])


def test_gram_matrix_constant_map():
    g = gram_matrix(torch.full((1, 5, 7), 2.0))
    # flat @ flat.T / (C*H*W) = 4*35/35
    torch.testing.assert_close(g, torch.tensor([[4.0]]))


def test_gram_matrix_is_symmetric_psd():
    feat = torch.randn(6, 5, 5, generator=torch.Generator().manual_seed(0))
    g = gram_matrix(feat)
    torch.testing.assert_close(g, g.T)
    eig = torch.linalg.eigvalsh(g)
    assert eig.min().item() >= -1e-6


def test_gram_matrix_rejects_batches():
    with pytest.raises(ValidationError):
        gram_matrix(torch.zeros(2, 3, 4, 4))


def test_gram_style_loss_identity_and_mismatch():
    fs = {"relu3_3": torch.rand(4, 6, 6)}
    assert gram_style_loss(fs, fs, ["relu3_3"]).item() == 0.0
    ft = {"relu3_3": torch.rand(5, 6, 6)}
    with pytest.raises(ValidationError):
        gram_style_loss(ft, fs, ["relu3_3"])


def test_in_stats_loss_unit_mean_shift():
    fs = {"relu1_1": torch.zeros(1, 4, 4)}
    ft = {"relu1_1": torch.ones(1, 4, 4)}
    # means differ by 1, stds are equal: (1-0)^2 summed over one channel
    assert in_stats_style_loss(ft, fs, ["relu1_1"]).item() == pytest.approx(1.0)
    assert in_stats_style_loss(fs, fs, ["relu1_1"]).item() == 0.0


def test_in_stats_uses_population_std():
    ft = {"x": torch.tensor([[[0.0, 2.0]]])}
    fs = {"x": torch.tensor([[[1.0, 1.0]]])}
    # mu matches at 1; population std is 1 vs 0 (eps inside the sqrt
    # nudges the zero-variance side to ~1e-4)
    val = in_stats_style_loss(ft, fs, ["x"]).item()
    assert val == pytest.approx(1.0, abs=1e-3)


def test_sobel_map_of_constant_is_flat():
    mag = sobel_map(torch.full((3, 8, 8), 0.4))
    assert mag.abs().max().item() < 1e-5


def test_sobel_map_of_ramp():
    x = torch.arange(8, dtype=torch.float32).view(1, 1, 8).expand(1, 8, 8) * 0.1
    mag = sobel_map(x)
    # interior response of the 3x3 operator on slope 0.1 is 8 * 0.1
    torch.testing.assert_close(mag[0, 0, 2:6, 2:6],
                               torch.full((4, 4), 0.8), atol=1e-5, rtol=0)
    assert mag[0, 0, 4, 0].item() < 1e-5    # reflect pad kills border gradient


def test_laplace_map_annihilates_ramps():
    x = torch.arange(8, dtype=torch.float32).view(1, 1, 8).expand(1, 8, 8) * 0.1
    lap = laplace_map(x)
    assert lap[:, :, 2:6, 2:6].abs().max().item() < 1e-6


def test_canny_map_peaks_at_step_edge():
    img = torch.zeros(1, 16, 16)
    img[:, :, 8:] = 1.0
    edges = canny_map(img)
    near = edges[0, 0, :, 6:10].mean().item()
    far = edges[0, 0, :, 0:3].mean().item()
    assert near > 10.0 * max(far, 1e-9)


def test_edge_losses_zero_on_identical_images():
    img = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(1))
    for fn in (sobel_loss, laplace_loss, canny_loss):
        assert fn(img, img.clone()).item() <= 1e-7


def test_image_geometry_loss_weights_and_skipping():
    r = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(2))
    t = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(3))
    s = sobel_loss(r, t).item()
    l = laplace_loss(r, t).item()
    got = image_geometry_loss(r, t, grad_weight=2.0, laplace_weight=0.5,
                              canny_weight=0.0).item()
    assert got == pytest.approx(2.0 * s + 0.5 * l, rel=1e-5)
    with pytest.raises(ConfigError):
        image_geometry_loss(r, t, grad_weight=-1.0)
    with pytest.raises(ValidationError):
        image_geometry_loss(r, torch.rand(3, 8, 8))


def test_stage_weights_halve_toward_coarse():
    assert [stage_weight(k) for k in range(3)] == [8.0, 4.0, 2.0]


def test_volume_loss_skips_missing_volumes_and_detaches():
    ref_vol = torch.rand(5, 4, 4, requires_grad=True)
    tgt_vol = torch.rand(5, 4, 4, requires_grad=True)
    d = torch.rand(4, 4)
    ref = [_stage(d, ref_vol), _stage(d, None)]
    tgt = [_stage(d, tgt_vol), _stage(d, None)]
    loss = volume_loss(ref, tgt)
    expected = stage_weight(0) * smooth_l1(tgt_vol, ref_vol.detach())
    assert loss.item() == pytest.approx(expected.item())
    loss.backward()
    assert tgt_vol.grad is not None
    assert ref_vol.grad is None             # reference is a fixed target

    all_missing = [_stage(d, None)]
    assert volume_loss(all_missing, all_missing).item() == 0.0
    with pytest.raises(ValidationError):
        volume_loss(ref, tgt[:1])


def test_depth_loss_stage_weighting():
    d0r, d0t = torch.zeros(4, 4), torch.full((4, 4), 0.5)
    d1r, d1t = torch.zeros(2, 2), torch.full((2, 2), 0.5)
    ref = [_stage(d0r, None), _stage(d1r, None)]
    tgt = [_stage(d0t, None), _stage(d1t, None)]
    # smooth_l1(0.5) = 0.125 per stage, weighted 8 and 4
    assert depth_loss(ref, tgt).item() == pytest.approx(12.0 * 0.125)
    with pytest.raises(ValidationError):
        depth_loss(ref, tgt[:1])


def test_depth_loss_reference_detached():
    dr = torch.rand(4, 4, requires_grad=True)
    dt = torch.rand(4, 4, requires_grad=True)
    depth_loss([_stage(dr, None)], [_stage(dt, None)]).backward()
    assert dt.grad is not None and dr.grad is None


def test_tv_loss_pinned_example():
    img = torch.tensor([[[0.0, 1.0]]])
    assert tv_loss(img).item() == pytest.approx(1.0)
    assert tv_loss(torch.full((3, 5, 5), 0.3)).item() == 0.0


def test_nnfm_loss_self_match_and_mismatch():
    feat = torch.rand(8, 3, 3, generator=torch.Generator().manual_seed(4))
    assert nnfm_loss(feat, feat).item() == pytest.approx(0.0, abs=1e-6)
    scaled = nnfm_loss(feat, 3.0 * feat).item()   # cosine ignores scale
    assert scaled == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValidationError):
        nnfm_loss(feat, torch.rand(4, 3, 3))


def test_total_loss_pinned_sum():
    comps = {"content": 1.0, "style": 2.0, "imgeom": 3.0,
             "volume": 4.0, "depth": 5.0}
    assert total_loss(comps, LossWeights()).item() == pytest.approx(15.0)
    w = LossWeights(content=2.0, style=0.0, imgeom=1.0, volume=0.5, depth=1.0)
    assert total_loss(comps, w).item() == pytest.approx(2 + 0 + 3 + 2 + 5)
    assert total_loss({}, LossWeights()).item() == 0.0


def test_total_loss_rejects_unknown_and_nan():
    with pytest.raises(ConfigError):
        total_loss({"mystery": 1.0}, LossWeights())
    with pytest.raises(ValidationError, match="style"):
        total_loss({"content": 1.0, "style": float("nan")}, LossWeights())


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(content=-0.1)
    with pytest.raises(ConfigError):
        LossWeights(style_loss_kind="other")
    assert LossWeights(style_loss_kind="in_stats").style_loss_kind == "in_stats"


def test_losses_follow_dtype():
    img = torch.rand(3, 8, 8, dtype=torch.float64)
    assert sobel_map(img).dtype == torch.float64
    assert canny_map(img).dtype == torch.float64
    assert tv_loss(img).dtype == torch.float64
