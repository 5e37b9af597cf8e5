from pathlib import Path

import pytest

import cvae_beam
from cvae_beam.config import (
    CONFIG_DIR,
    FULL_CONFIG,
    OUTPUT_ENV,
    ExperimentConfig,
    config_hash,
    derive_seed,
    dump_config,
    load_config,
    output_root,
)
from cvae_beam.cvae import Variant
from cvae_beam.errors import ConfigError


def test_shipped_configs_load():
    desk = load_config(CONFIG_DIR / "settings.yaml")
    full = load_config(full_scale=True)
    assert desk.channel.n_antennas == 16 and desk.channel.n_ues == 4
    assert full.channel.n_antennas == 32 and full.channel.n_ues == 10
    assert desk.cvae.variant is Variant.OFFLINE
    assert desk.cvae.train.lr_decay_epochs == (3, 7)


def test_configs_ship_inside_the_package():
    package_dir = Path(cvae_beam.__file__).resolve().parent
    assert CONFIG_DIR == package_dir / "configs"
    assert (CONFIG_DIR / "settings.yaml").is_file() and FULL_CONFIG.is_file()


def test_empty_mapping_gives_defaults():
    assert ExperimentConfig.from_dict({}) == ExperimentConfig()
    assert ExperimentConfig.from_dict(None) == ExperimentConfig()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"chanel": {}})
    with pytest.raises(ConfigError, match="section 'solver'"):
        ExperimentConfig.from_dict({"solver": {"rhoo": 1.0}})


def test_cross_section_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"channel": {"n_antennas": 4}, "feedback": {"n_ports": 8}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"evaluation": {"rate_unit": "dB"}})


def test_dump_and_reload(tmp_path, tiny_cfg):
    path = dump_config(tiny_cfg, tmp_path / "cfg" / "config.yaml")
    again = load_config(path)
    assert again == tiny_cfg
    assert config_hash(again) == config_hash(tiny_cfg)


def test_hash_tracks_content(tiny_cfg):
    assert len(config_hash(tiny_cfg)) == 16
    assert config_hash(tiny_cfg) != config_hash(tiny_cfg.with_overrides(master_seed=8))


def test_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("channel: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_derive_seed():
    a = derive_seed(2024, "channel")
    assert a == derive_seed(2024, "channel", 0)
    assert 0 <= a < 2 ** 63
    assert a != derive_seed(2024, "channel", 1)
    assert a != derive_seed(2025, "channel")
    assert a != derive_seed(2024, "feedback")


def test_output_root_env(monkeypatch, tiny_cfg, tmp_path):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(output_root(tiny_cfg)) == "outputs"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert output_root(tiny_cfg) == tmp_path
