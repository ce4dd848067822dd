import pytest
import yaml

from muviecast.config import (ARCH_PRESETS, DEFAULTS, WEIGHTS_DIR_ENV,
                              dump_config, load_config, resolve_weights_path)
from muviecast.errors import ConfigError


def test_defaults_load_clean():
    cfg = load_config()
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS        # callers may mutate their copy
    assert cfg["arch"] == "casmvsnet_unet"
    assert cfg["loss"]["tv"] == 0.0


def test_arch_presets_complete():
    assert set(ARCH_PRESETS) == {"casmvsnet_unet", "casmvsnet_adain",
                                 "patchmatchnet_unet", "patchmatchnet_adain"}
    for preset in ARCH_PRESETS.values():
        assert preset["transfer"] in ("unet", "adain")
        assert preset["perceptual"] in ("vgg16_trim", "vgg19_trim")
        assert preset["style_loss"] in ("gram", "in_stats")
        assert preset["feature_base"] in (21, 10)
        assert preset["learning_rate"] > 0


def test_yaml_file_overrides_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("epochs: 4\nloss:\n  style: 5.0\n")
    cfg = load_config(path)
    assert cfg["epochs"] == 4
    assert cfg["loss"]["style"] == 5.0
    assert cfg["loss"]["content"] == 1.0      # untouched siblings keep defaults


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("epochs: 4\n")
    cfg = load_config(path, overrides={"epochs": "7", "loss.depth": "0.5"})
    assert cfg["epochs"] == 7                 # coerced from string to int
    assert cfg["loss"]["depth"] == 0.5


def test_override_none_and_typed_values():
    cfg = load_config(overrides={"learning_rate": "0.01", "scene": "a/b",
                                 "transfer.init_weights_path": "null"})
    assert cfg["learning_rate"] == 0.01
    assert cfg["scene"] == "a/b"
    assert cfg["transfer"]["init_weights_path"] is None


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(overrides={"epohcs": "3"})
    with pytest.raises(ConfigError, match="loss.styel"):
        load_config(overrides={"loss.styel": "1"})
    path = tmp_path / "bad.yaml"
    path.write_text("momentum: 0.9\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("epochs: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(broken)
    listy = tmp_path / "list.yaml"
    listy.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(listy)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == DEFAULTS


def test_value_validation():
    with pytest.raises(ConfigError, match="arch"):
        load_config(overrides={"arch": "vgg"})
    with pytest.raises(ConfigError):
        load_config(overrides={"color_adjust": "maybe"})
    with pytest.raises(ConfigError):
        load_config(overrides={"epochs": "0"})
    with pytest.raises(ConfigError):
        load_config(overrides={"window": "1"})
    with pytest.raises(ConfigError):
        load_config(overrides={"resolution_scale": "0"})
    with pytest.raises(ConfigError):
        load_config(overrides={"geometry.backend": "sfm"})
    ok = load_config(overrides={"geometry.backend": "external:my.mod"})
    assert ok["geometry"]["backend"] == "external:my.mod"


def test_resolve_weights_path(tmp_path, monkeypatch):
    monkeypatch.delenv(WEIGHTS_DIR_ENV, raising=False)
    assert resolve_weights_path(None, "vgg16_trim.pt") is None
    assert resolve_weights_path("explicit.pt", "vgg16_trim.pt") == "explicit.pt"
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(tmp_path))
    assert resolve_weights_path(None, "vgg16_trim.pt") is None  # not on disk
    target = tmp_path / "vgg16_trim.pt"
    target.write_bytes(b"\x00")
    assert resolve_weights_path(None, "vgg16_trim.pt") == str(target)
    assert resolve_weights_path("explicit.pt", "vgg16_trim.pt") == "explicit.pt"


def test_dump_config_round_trips():
    cfg = load_config(overrides={"epochs": "3"})
    text = dump_config(cfg)
    assert yaml.safe_load(text) == cfg
