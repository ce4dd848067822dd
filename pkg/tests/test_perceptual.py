import numpy as np
import pytest
import torch

from muviecast.errors import ConfigError, LoadError, ValidationError
from muviecast.perceptual import (DEFAULT_TAPS, TAP_NAMES, FeatureSet,
                                  FeatureTapSpec, PerceptualExtractor,
                                  extract)


@pytest.fixture(scope="module")
def vgg16():
    return PerceptualExtractor("vgg16_trim")


@pytest.fixture(scope="module")
def vgg19():
    return PerceptualExtractor("vgg19_trim")


def test_parameter_counts(vgg16, vgg19):
    assert vgg16.parameter_count() == 7_635_264
    assert vgg19.parameter_count() == 3_505_728


def test_tap_names_per_backbone():
    assert TAP_NAMES["vgg16_trim"][-1] == "relu4_3"
    assert TAP_NAMES["vgg19_trim"][-1] == "relu4_1"
    assert "relu3_3" in TAP_NAMES["vgg16_trim"]
    assert TAP_NAMES["vgg19_trim"].count("relu3_4") == 1


def test_tap_spec_defaults_and_validation():
    spec = FeatureTapSpec("vgg16_trim")
    assert spec.content_layers == DEFAULT_TAPS["vgg16_trim"]["content"]
    assert spec.style_layers == DEFAULT_TAPS["vgg16_trim"]["style"]
    # all_layers folds duplicates while keeping order
    spec2 = FeatureTapSpec("vgg19_trim")
    assert spec2.all_layers.count("relu4_1") == 1
    with pytest.raises(ConfigError):
        FeatureTapSpec("vgg13")
    with pytest.raises(ConfigError):
        FeatureTapSpec("vgg16_trim", content_layers=["relu9_9"])
    with pytest.raises(ConfigError):
        FeatureTapSpec("vgg19_trim", style_layers=["relu4_3"])  # 16-only tap


def test_seeded_init_is_reproducible():
    a = PerceptualExtractor("vgg16_trim").state_dict()
    b = PerceptualExtractor("vgg16_trim").state_dict()
    assert set(a) == set(b)
    for k in a:
        torch.testing.assert_close(a[k], b[k], rtol=0, atol=0)


def test_backbones_are_frozen(vgg16):
    assert all(not p.requires_grad for p in vgg16.parameters())
    assert not vgg16.training


def test_feature_shapes(vgg16):
    img = torch.rand(1, 3, 64, 96)
    feats = vgg16(img, ["relu1_2", "relu2_2", "relu3_3", "relu4_3"])
    assert feats["relu1_2"].shape == (1, 64, 64, 96)
    assert feats["relu2_2"].shape == (1, 128, 32, 48)
    assert feats["relu3_3"].shape == (1, 256, 16, 24)
    assert feats["relu4_3"].shape == (1, 512, 8, 12)
    assert feats.names() == ["relu1_2", "relu2_2", "relu3_3", "relu4_3"]


def test_feature_set_missing_layer(vgg16):
    feats = vgg16(torch.rand(1, 3, 32, 32), ["relu1_1"])
    assert "relu1_1" in feats
    with pytest.raises(ValidationError):
        feats["relu4_3"]


def test_accepts_numpy_and_chw(vgg19):
    img = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
    f1 = vgg19(img, ["relu2_1"])["relu2_1"]
    t = torch.from_numpy(img).permute(2, 0, 1)
    f2 = vgg19(t, ["relu2_1"])["relu2_1"]
    torch.testing.assert_close(f1, f2)


def test_input_validation(vgg16):
    with pytest.raises(ValidationError):
        vgg16(torch.rand(1, 3, 16, 16), ["relu1_1"])   # too small
    with pytest.raises(ValidationError):
        vgg16(torch.rand(1, 4, 32, 32), ["relu1_1"])   # not RGB
    with pytest.raises(ConfigError):
        vgg16(torch.rand(1, 3, 32, 32), ["relu7_7"])


def test_float64_follows_dtype(vgg16):
    feats = vgg16(torch.rand(1, 3, 32, 32, dtype=torch.float64), ["relu1_2"])
    assert feats["relu1_2"].dtype == torch.float64


def test_extract_convenience(vgg16):
    spec = FeatureTapSpec("vgg16_trim")
    img = torch.rand(3, 32, 32)
    feats = extract(img, spec, extractor=vgg16)
    # collection order follows network depth, not the spec listing
    assert set(feats.names()) == set(spec.all_layers)
    with pytest.raises(ConfigError):
        extract(img, FeatureTapSpec("vgg19_trim"), extractor=vgg16)


def test_weights_round_trip(tmp_path, vgg19):
    path = tmp_path / "vgg19_trim.pt"
    torch.save(vgg19.state_dict(), path)
    loaded = PerceptualExtractor("vgg19_trim", weights_path=path)
    img = torch.rand(1, 3, 32, 32)
    torch.testing.assert_close(loaded(img, ["relu4_1"])["relu4_1"],
                               vgg19(img, ["relu4_1"])["relu4_1"])


def test_weights_with_features_prefix(tmp_path, vgg16):
    # full-model checkpoints carry classifier weights we don't have
    state = dict(vgg16.state_dict())
    state["classifier.0.weight"] = torch.zeros(2)
    path = tmp_path / "full.pt"
    torch.save(state, path)
    loaded = PerceptualExtractor("vgg16_trim", weights_path=path)
    assert loaded.parameter_count() == vgg16.parameter_count()


def test_weights_errors(tmp_path):
    with pytest.raises(LoadError):
        PerceptualExtractor("vgg16_trim", weights_path=tmp_path / "no.pt")
    bad = tmp_path / "bad.pt"
    torch.save({"0.weight": torch.zeros(1)}, bad)
    with pytest.raises(LoadError):
        PerceptualExtractor("vgg16_trim", weights_path=bad)


def test_feature_set_detach(vgg16):
    img = torch.rand(1, 3, 32, 32, requires_grad=True)
    feats = vgg16(img, ["relu1_1"]).detach()
    assert not feats["relu1_1"].requires_grad
