import pytest

from mergelabel.config import ConfigError, RunConfig, format_value, model_config_from_lines, model_config_lines, parse_value
from mergelabel.model import ModelConfig


def test_values_round_trip_through_text():
    for kind, value in [("int", 7), ("float", 0.75), ("bool", True), ("bool", False), ("tuple[int, ...]", (4, 6, 8))]:
        assert parse_value(kind, format_value(value)) == value


def test_unknown_key_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError, match="unknown config key"):
        cfg.set("not_a_key", "1")
    with pytest.raises(ConfigError):
        cfg.update_from_text("d=8\nbogus=3\n")


def test_bad_value_and_bad_line_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError, match="bad value"):
        cfg.set("epochs", "many")
    with pytest.raises(ConfigError, match="not a boolean"):
        cfg.set("static_layer", "maybe")
    with pytest.raises(ConfigError, match="expected key=value"):
        cfg.update_from_text("d 8\n")


def test_ablation_switches_map_to_model_fields():
    cfg = RunConfig()
    for key in ("no_static_layer", "no_article_theme", "unnormalized_embed_update", "linear_combination", "sentence_boundary_clipping"):
        cfg.set(key, "true")
    m = cfg.model
    assert not m.static_layer and not m.article_theme and not m.normalized_embed_update
    assert m.linear_combination and m.sentence_clipping


def test_later_settings_override_earlier():
    cfg = RunConfig()
    cfg.update_from_text("# comment\nepochs=5\nd=8\n\n")
    cfg.set("epochs", "9")
    assert cfg.epochs == 9 and cfg.model.d == 8


def test_effective_config_echo_is_loadable(tmp_path):
    cfg = RunConfig()
    cfg.update_from_text("d=8\nk_levels=4,6\nL=2\nseed=3\ntrain=a.txt\nflat_eval=true\n")
    cfg.dump(tmp_path / "c.txt")
    back = RunConfig.load(tmp_path / "c.txt")
    assert back.model == cfg.model and back.lines() == cfg.lines()
    assert back.seed == 3 and back.train == "a.txt" and back.flat_eval and back.test is None


def test_invalid_model_combination_reported():
    cfg = RunConfig()
    cfg.set("L", "3")
    cfg.set("k_levels", "4,6")
    with pytest.raises(ConfigError, match="invalid model config"):
        cfg.model


def test_model_config_lines_round_trip():
    c = ModelConfig(d=8, k_levels=(4, 4, 6), lr=1e-3, static_layer=False)
    assert model_config_from_lines(model_config_lines(c)) == c
    with pytest.raises(ConfigError):
        model_config_from_lines(["wat=1"])
