import pytest

from flowmark.config import RunConfig
from flowmark.errors import ConfigError
from flowmark.training import StageWeights


def test_defaults_match_published_schedule():
    config = RunConfig()
    schedule = config.schedule()
    assert schedule.stage1_weights == StageWeights(1.0, 10.0, 0.0)
    assert schedule.stage2_weights == StageWeights(1.0, 2.0, 0.0001)
    assert schedule.learning_rate == pytest.approx(1e-4)
    assert schedule.betas == (0.5, 0.999)
    assert schedule.decay_factor == 0.5
    assert schedule.decay_every_epochs == 20
    assert config.codec_blocks == 16
    assert config.proxy_blocks == 8


def test_file_roundtrip(tmp_path):
    config = RunConfig(seed=9, payload_bits=96, stage1_steps=50)
    path = config.to_file(tmp_path / "run.cfg")
    again = RunConfig.from_file(path)
    assert again == config


def test_parse_overrides_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "seed = 4\n"
        "learning_rate = 0.001\n"
        "\n"
        "channels = identity,gaussian\n"
    )
    config = RunConfig.from_file(path)
    assert config.seed == 4
    assert config.learning_rate == pytest.approx(1e-3)
    assert config.channel_list() == ("identity", "gaussian")


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("not_a_key = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)
    with pytest.raises(ConfigError):
        RunConfig().set_key("nope", "1")
    with pytest.raises(ConfigError):
        RunConfig().set_key("seed", "abc")


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "none.cfg")


def test_bad_line_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_template_and_qp_views():
    config = RunConfig(payload_bits=64)
    assert config.template().kind == "square"
    assert RunConfig(payload_bits=96).template().side == 16
    assert RunConfig(pretrain_qps="22, 32").qp_list() == (22, 32)
    with pytest.raises(ConfigError):
        RunConfig(pretrain_qps="a,b").qp_list()
