import pytest

from roadmtl import config as cfgmod
from roadmtl.errors import ConfigError


@pytest.mark.parametrize("make", [cfgmod.RunConfig, cfgmod.desk_config])
def test_round_trip_is_byte_identical(make):
    text = cfgmod.dumps(make())
    assert cfgmod.dumps(cfgmod.loads(text)) == text


def test_defaults_carry_training_schedule():
    cfg = cfgmod.RunConfig()
    assert cfg.train.total_steps == 100000 and cfg.train.val_every == 1000
    assert (cfg.train.source_batch, cfg.train.target_batch) == (16, 32)
    assert cfg.train.sgd_lr == 2.5e-4 and cfg.train.nesterov_momentum == 0.9 and cfg.train.weight_decay == 5e-4
    assert cfg.discriminator.lr == 1e-4 and cfg.discriminator.betas == (0.9, 0.99)
    assert cfg.loss_weights.mr_start_step == 15000 and cfg.loss_weights.road_class_weight == 2.287


def test_unknown_keys_and_sections_rejected():
    text = cfgmod.dumps(cfgmod.RunConfig())
    with pytest.raises(ConfigError, match="bogus"):
        cfgmod.loads(text.replace("[train]\n", "[train]\nbogus = 1\n"))
    with pytest.raises(ConfigError, match="extra"):
        cfgmod.loads(text + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("[train\n")


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        cfgmod.loads("[train]\nmode = \"joint\"\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("[train]\ntotal_steps = 1000\nval_every = 300\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("[loss_weights]\nlambda_mr = -1.0\n")


def test_mode_aliases():
    assert cfgmod.normalize_mode("multi_task") == "mtl"
    assert cfgmod.normalize_mode("transfer_learning") == "tl"
    assert cfgmod.normalize_mode("single_task") == "st"


def test_save_load(tmp_path):
    cfg = cfgmod.desk_config(seed=7)
    cfgmod.save(cfg, tmp_path / "run.toml")
    assert cfgmod.load(tmp_path / "run.toml") == cfg
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "missing.toml")
