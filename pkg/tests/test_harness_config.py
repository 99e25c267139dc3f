from pathlib import Path

import pytest

from dipdefense.errors import ConfigurationError
from dipdefense.harness.config import (
    HOME_ENV,
    apply_overrides,
    config_from_sections,
    load_experiment_config,
    parse_bool,
    resolve_output_dir,
)

from harness_fixtures import make_setup


def test_load_full_config(tmp_path):
    cfg = load_experiment_config(make_setup(tmp_path, attacks={"p": {"method": "pgd", "epsilon": 8, "steps": 7}}))
    assert cfg.dataset.directory == str(tmp_path / "data")
    assert cfg.adapter == "synthetic-linear" and cfg.adapter_options["path"] == str(tmp_path / "clf.npz")
    assert cfg.generator.num_scales == 2 and cfg.generator.max_iterations == 40
    assert cfg.detection.grid_sections_n == 10 and cfg.reconstruction.beta == 0.5
    (spec,) = cfg.attacks
    assert spec.name == "p" and spec.config.method == "PGD" and spec.config.steps == 7
    assert spec.config.epsilon == pytest.approx(8 / 255)


def test_defaults_follow_the_published_setup():
    cfg = config_from_sections({})
    assert (cfg.detection.tau, cfg.detection.warmup_t0, cfg.detection.max_pairs_k) == (0.7, 50, 15)
    assert cfg.reconstruction.beta == 0.5
    assert cfg.generator.learning_rate == 0.01 and cfg.generator.max_iterations == 1000


def test_overrides(tmp_path):
    ini = make_setup(tmp_path)
    cfg = load_experiment_config(ini, ["detection.tau=0.5", "generator.noise_scale=1/100", "seed=3",
                                       "attack:fgsm8.epsilon=4"])
    assert cfg.detection.tau == 0.5 and cfg.seed == 3
    assert cfg.generator.noise_scale == pytest.approx(0.01)
    assert cfg.attacks[0].config.epsilon_255 == pytest.approx(4)
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["novalue"])


def test_generator_preset_with_override():
    cfg = config_from_sections({"generator": {"preset": "imagenet", "max_iterations": "500"}})
    assert cfg.generator.num_scales == 5 and cfg.generator.max_iterations == 500


def test_bad_configs(tmp_path):
    with pytest.raises(ConfigurationError):
        config_from_sections({"bogus": {}})
    with pytest.raises(ConfigurationError):
        config_from_sections({"detection": {"tau": "2"}})
    with pytest.raises(ConfigurationError):
        config_from_sections({"detection": {"nope": "2"}})
    with pytest.raises(ConfigurationError):
        config_from_sections({"attack:x": {"method": "PGD"}})
    with pytest.raises(ConfigurationError):
        config_from_sections({"attack:x": {"epsilon": "8", "colour": "red"}})
    with pytest.raises(ConfigurationError):
        config_from_sections({"dataset": {"extra": "1"}})
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "missing.ini")


def test_hash_tracks_config(tmp_path):
    ini = make_setup(tmp_path)
    a = load_experiment_config(ini)
    assert a.config_hash() == load_experiment_config(ini).config_hash()
    assert a.config_hash() != load_experiment_config(ini, ["reconstruction.beta=0.2"]).config_hash()
    # where results go does not change what they are
    assert a.config_hash() == load_experiment_config(ini, ["experiment.output_dir=elsewhere"]).config_hash()


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(HOME_ENV, str(tmp_path))
    assert resolve_output_dir("runs/a") == tmp_path / "runs" / "a"
    assert resolve_output_dir("/abs/x") == Path("/abs/x")
    monkeypatch.delenv(HOME_ENV)
    assert str(resolve_output_dir("runs/a")) == "runs/a"


def test_parse_bool():
    assert parse_bool("Yes") and not parse_bool("0")
    with pytest.raises(ConfigurationError):
        parse_bool("maybe")
