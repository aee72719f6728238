import pytest

from mfppo.config import (
    VALID_KEYS,
    dump_config,
    merge_overrides,
    parse_config_text,
    parse_value,
    resolve,
)
from mfppo.exceptions import ConfigurationError


def test_defaults_follow_environment():
    four = resolve({})
    assert four["env.name"] == "four_rooms"
    assert (four["algo.alpha"], four["algo.eps_iteration"], four["algo.eps_episode"]) == (0.5, 0.01, 0.2)
    assert four["nn.hidden"] == (32, 32) and four["nn.lr"] == 1e-3
    assert four["train.iterations"] == 100 and four["train.episodes"] == 20
    assert four["train.gamma"] == 0.99
    maze = resolve({"env.name": "maze"})
    assert (maze["algo.alpha"], maze["algo.eps_iteration"]) == (0.6, 0.05)
    assert maze["nn.hidden"] == (64, 64) and maze["nn.lr"] == 6e-4
    assert maze["train.episodes"] == 200 and maze["train.batch_size"] == 500
    assert maze["train.minibatches"] == 4 and maze["train.gamma"] == 0.9


def test_baselines_drop_network_keys():
    fp = resolve({"algo.name": "fp"})
    assert "nn.lr" not in fp and fp["train.iterations"] == 200
    with pytest.raises(ConfigurationError, match="only apply"):
        resolve({"algo.name": "bp", "algo.alpha": 0.3})


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigurationError) as info:
        parse_value("nn.width", "3")
    assert "nn.lr" in str(info.value) and "train.seed" in str(info.value)


def test_value_parsing():
    assert parse_value("nn.hidden", "16, 8") == (16, 8)
    assert parse_value("train.normalize_advantages", "yes") is True
    assert parse_value("train.seed", " 4 ") == 4
    assert parse_value("algo.alpha", "0.25") == 0.25
    with pytest.raises(ConfigurationError):
        parse_value("train.seed", "four")
    with pytest.raises(ConfigurationError):
        parse_value("train.normalize_advantages", "maybe")


def test_text_format_round_trip():
    config = resolve({"train.seed": 3, "nn.hidden": (8,)})
    text = dump_config(config)
    assert parse_config_text(text) == config
    assert resolve(parse_config_text(text)) == config


def test_comments_and_duplicates():
    parsed = parse_config_text("; header comment\ntrain.seed = 2 ; inline\n\nenv.name = maze\n")
    assert parsed == {"train.seed": 2, "env.name": "maze"}
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config_text("train.seed = 1\ntrain.seed = 2\n")
    with pytest.raises(ConfigurationError, match="key = value"):
        parse_config_text("train.seed 1\n")


def test_merge_conflicts():
    assert merge_overrides({"train.seed": 1}, {"train.seed": 1, "algo.alpha": 0.0}) == {
        "train.seed": 1,
        "algo.alpha": 0.0,
    }
    with pytest.raises(ConfigurationError, match="conflicting"):
        merge_overrides({"train.seed": 1}, {"train.seed": 2})


def test_bad_environment_and_algorithm(tmp_path):
    with pytest.raises(ConfigurationError, match="env.name"):
        resolve({"env.name": str(tmp_path / "missing.grid")})
    with pytest.raises(ConfigurationError, match="algo.name"):
        resolve({"algo.name": "sarsa"})
    bad = tmp_path / "bad.grid"
    bad.write_text("horizon = 2\n\n..G\n")
    with pytest.raises(ConfigurationError, match="bad.grid"):
        resolve({"env.name": str(bad)})


def test_custom_wall_map(tmp_path):
    path = tmp_path / "strip.grid"
    path.write_text("horizon = 3\ngamma = 0.5\nc_pos = 2\nc_move = 0\nc_pop = 1\ncrowd_eps = 1e-8\n\nS.G\n")
    config = resolve({"env.name": str(path)})
    assert config["train.gamma"] == 0.5 and config["env.c_pos"] == 2.0
    assert config["nn.hidden"] == (32, 32)


def test_every_default_is_a_valid_key():
    for algo in ("mfppo", "fp"):
        assert set(resolve({"algo.name": algo})) <= set(VALID_KEYS)
