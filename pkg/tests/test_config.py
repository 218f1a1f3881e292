import pytest

from slicechain.config import (
    ConfigError,
    build_config,
    env_overrides,
    known_keys,
    parse_value,
    render_toml,
)
from slicechain.workload import ScenarioConfig


def test_every_field_is_settable():
    keys = set(known_keys())
    assert {"sr_rate", "consensus.service", "consensus.batch_size", "consensus.net.latency_max"} <= keys
    assert "consensus" not in keys and "consensus.net" not in keys


@pytest.mark.parametrize("text,value", [
    ("150", 150), ("1.5", 1.5), ("true", True), ('"raft"', "raft"), ("raft", "raft"),
    ("[1, 2]", [1, 2]), ("0.1,4", [0.1, 4]),
])
def test_parse_value(text, value):
    assert parse_value(text) == value


def test_defaults():
    assert build_config() == ScenarioConfig()


def test_precedence_file_env_override(tmp_path):
    path = tmp_path / "base.toml"
    path.write_text("sr_rate = 10.0\nseed = 1\nduration_s = 3.0\n[consensus]\nbatch_size = 5\n")
    env = {"SLICECHAIN_SR_RATE": "20", "SLICECHAIN_CONSENSUS__BATCH_SIZE": "6", "OTHER": "x"}
    cfg = build_config(path, [("sr_rate", "30")], env)
    assert cfg.sr_rate == 30 and cfg.consensus.batch_size == 6
    assert cfg.seed == 1 and cfg.duration_s == 3.0
    assert build_config(path, [], env).sr_rate == 20
    assert build_config(path).sr_rate == 10


def test_env_names():
    assert env_overrides({"SLICECHAIN_CONSENSUS__NET__DROP_PROBABILITY": "0.1"}) == \
        [("consensus.net.drop_probability", "0.1")]


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = 1\n\n[consensus]\nbatch_size = 5\nbogus = 2\n")
    with pytest.raises(ConfigError) as info:
        build_config(path)
    assert info.value.where == f"{path}:5"
    assert "consensus.bogus" in str(info.value)


def test_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = 1\nsr_rate = = 3\n")
    with pytest.raises(ConfigError) as info:
        build_config(path)
    assert info.value.where == f"{path}:2"


def test_invalid_value_blames_its_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = 1\n[consensus]\nservice = \"pbft\"\n")
    with pytest.raises(ConfigError) as info:
        build_config(path)
    assert info.value.where == f"{path}:3"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        build_config(tmp_path / "nope.toml")


def test_bad_override_and_env():
    with pytest.raises(ConfigError, match="--set nope"):
        build_config(None, [("nope", "1")])
    with pytest.raises(ConfigError, match="SLICECHAIN_NOPE"):
        build_config(None, [], {"SLICECHAIN_NOPE": "1"})
    with pytest.raises(ConfigError):
        build_config(None, [("sr_rate", "-1")])


def test_render_round_trip(tmp_path):
    cfg = build_config(None, [("consensus.service", "kafka"), ("demand_range", "0.5,3"),
                              ("consensus.net.drop_probability", "0.05")])
    path = tmp_path / "out.toml"
    path.write_text(render_toml(cfg))
    assert build_config(path) == cfg
