import pytest

from scenemix.config import (RunConfig, apply_overrides, config_items, load_config,
                             parse_config_text, save_config, set_key)
from scenemix.errors import ConfigError


def test_defaults_reproduce_reference_run():
    cfg = RunConfig()
    assert cfg.seed == 0
    assert cfg.lr == 0.001
    assert cfg.m_specific == 2
    assert cfg.m_shared == 8
    assert cfg.world.n_scenarios == 20
    assert cfg.world.target_ctr == 0.05


def test_set_key_coercion():
    cfg = RunConfig()
    set_key(cfg, "epochs", "7")
    set_key(cfg, "lr", "0.5")
    set_key(cfg, "bias_net_enabled", "false")
    set_key(cfg, "transform_enabled", "1")
    set_key(cfg, "out_dir", "/tmp/x")
    assert cfg.epochs == 7 and cfg.lr == 0.5
    assert cfg.bias_net_enabled is False and cfg.transform_enabled is True
    assert cfg.out_dir == "/tmp/x"


def test_world_keys_use_dotted_prefix():
    cfg = RunConfig()
    set_key(cfg, "world.n_scenarios", "6")
    set_key(cfg, "world.tau", "0.25")
    assert cfg.world.n_scenarios == 6
    assert cfg.world.tau == 0.25


def test_unknown_keys_and_bad_values_rejected():
    cfg = RunConfig()
    for key, value in (("no_such_key", "1"), ("world.no_such", "1"), ("world", "x")):
        with pytest.raises(ConfigError):
            set_key(cfg, key, value)
    with pytest.raises(ConfigError):
        set_key(cfg, "epochs", "two")
    with pytest.raises(ConfigError):
        set_key(cfg, "lr", "fast")
    with pytest.raises(ConfigError):
        set_key(cfg, "bias_net_enabled", "maybe")


def test_roundtrip_through_file(tmp_path):
    cfg = RunConfig()
    cfg.seed = 11
    cfg.lr = 0.0375
    cfg.fairness_loss_enabled = False
    cfg.world.n_users = 77
    p = tmp_path / "run.cfg"
    save_config(p, cfg)
    back = load_config(p)
    assert back == cfg
    # a second save of the loaded config is byte-identical
    p2 = tmp_path / "run2.cfg"
    save_config(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_parse_skips_comments_and_blanks():
    cfg = parse_config_text("# comment\n\nseed = 9\nworld.n_items = 12\n")
    assert cfg.seed == 9
    assert cfg.world.n_items == 12


def test_parse_error_carries_location():
    with pytest.raises(ConfigError, match="runs.cfg:2"):
        parse_config_text("seed=1\nnonsense line\n", source="runs.cfg")


def test_load_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.cfg")


def test_apply_overrides():
    cfg = RunConfig()
    apply_overrides(cfg, ["seed=3", "world.n_days=4", "attention_mode=mean"])
    assert cfg.seed == 3
    assert cfg.world.n_days == 4
    assert cfg.attention_mode == "mean"
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["seed"])


def test_config_items_cover_every_field():
    cfg = RunConfig()
    items = dict(config_items(cfg))
    assert "world" not in items
    assert items["lr"] == "0.001"
    assert items["transform_enabled"] == "true"
    assert items["world.n_scenarios"] == "20"
    # every emitted key can be parsed back
    text = "\n".join(f"{k}={v}" for k, v in items.items())
    assert parse_config_text(text) == cfg
