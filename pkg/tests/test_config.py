import argparse

import pytest

from svrbench.config import (
    SEED_KEYS,
    SETTINGS,
    add_setting_arguments,
    channel_config,
    derive_seeds,
    experiment_config,
    parse_bool,
    parse_int_tuple,
    read_config_file,
    resolve_settings,
    train_config,
    world_config,
)
from svrbench.errors import ConfigError


def test_defaults_without_any_source():
    settings = resolve_settings(environ={})
    assert settings["dim"] == 32
    assert settings["hidden_dims"] == (512, 512)
    assert settings["length_norm"] is False
    assert not settings.explicit
    assert [settings[k] for k in SEED_KEYS] == list(derive_seeds(0, len(SEED_KEYS)))


def test_precedence_flags_over_file_over_environment(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("dim=16\nsteps=50\n")
    environ = {"SVRBENCH_DIM": "8", "SVRBENCH_STEPS": "10", "SVRBENCH_BATCH_SIZE": "7"}

    settings = resolve_settings({"dim": "24", "steps": None}, str(config), environ)
    assert settings["dim"] == 24
    assert settings["steps"] == 50
    assert settings["batch_size"] == 7
    assert settings["n_speakers"] == 400
    assert {"dim", "steps", "batch_size"} <= settings.explicit


def test_config_file_accepts_prefixed_and_dashed_keys(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("SVRBENCH_N_SPEAKERS=50\nhidden-dims=64,32\n")
    values = read_config_file(str(config))
    assert values == {"n_speakers": "50", "hidden_dims": "64,32"}
    settings = resolve_settings(config_path=str(config), environ={})
    assert settings["hidden_dims"] == (64, 32)


def test_unknown_config_key_is_an_error(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("dimension=16\n")
    with pytest.raises(ConfigError):
        resolve_settings(config_path=str(config), environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_config_file(str(tmp_path / "absent.env"))


def test_invalid_values_are_config_errors():
    with pytest.raises(ConfigError):
        resolve_settings({"dim": "many"}, environ={})
    with pytest.raises(ConfigError):
        resolve_settings(environ={"SVRBENCH_ACTIVATION": "sigmoid"})
    with pytest.raises(ConfigError):
        train_config(resolve_settings({"steps": "0"}, environ={}))
    with pytest.raises(ConfigError):
        world_config(resolve_settings({"n_speakers": "1"}, environ={}))


def test_seed_derivation():
    assert derive_seeds(7, 4) == derive_seeds(7, 4)
    assert derive_seeds(7, 4) != derive_seeds(8, 4)
    assert len(set(derive_seeds(7, 4))) == 4
    with pytest.raises(ConfigError):
        derive_seeds(-1, 2)


def test_explicit_seed_keys_win_over_derived_ones():
    settings = resolve_settings({"seed": "3", "train_seed": "99"}, environ={})
    derived = derive_seeds(3, len(SEED_KEYS))
    assert settings["train_seed"] == 99
    assert settings["world_seed"] == derived[0]
    assert train_config(settings).seed == 99


def test_parsers():
    assert parse_bool("Yes") is True
    assert parse_bool("0") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")
    assert parse_int_tuple("256, 128") == (256, 128)


def test_channel_from_scenario_and_overrides():
    noise = channel_config(resolve_settings({"scenario": "noise"}, environ={}))
    assert noise.kind == "additive_noise"
    assert noise.sigma == 0.8

    tuned = channel_config(resolve_settings({"nuisance_rank": "0", "bias_spread": "0.5"}, environ={}))
    assert tuned.kind == "affine_channel"
    assert tuned.nuisance_rank == 0
    assert tuned.bias_spread == 0.5
    assert tuned.rotation == 0.6

    projection = channel_config(resolve_settings({"channel": "rank_projection", "dim": "10"}, environ={}))
    assert projection.rank == 5


def test_experiment_config_validation():
    settings = resolve_settings({"methods": "baseline,svr", "modes": "degraded"}, environ={})
    cfg = experiment_config(settings, "out")
    assert cfg.methods == ("baseline", "svr")
    assert cfg.modes == ("degraded",)
    with pytest.raises(ConfigError):
        experiment_config(resolve_settings({"methods": "baseline,magic"}, environ={}), "out")
    with pytest.raises(ConfigError):
        experiment_config(resolve_settings({"modes": ""}, environ={}), "out")


def test_setting_flags_default_to_none():
    parser = argparse.ArgumentParser()
    add_setting_arguments(parser, groups=("plda",), keys=("seed",))
    args = parser.parse_args(["--plda-iters", "4", "--length-norm"])
    assert args.plda_iters == "4"
    assert args.length_norm == "true"
    assert args.seed is None
    assert "steps" not in vars(args)
    assert set(vars(args)) <= set(SETTINGS)
