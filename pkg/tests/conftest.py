import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from roadmtl.backbone import BackboneConfig  # noqa: E402
from roadmtl.config import desk_config  # noqa: E402
from roadmtl.mti import ModelConfig, RoadMTLNet  # noqa: E402


def tiny_model_config(target_size=(64, 64), width=8):
    return ModelConfig(BackboneConfig(channels=[8, 8, 8, 8]), width=width, target_size=target_size,
                       compact_steer_width=4)


def tiny_model(seed=0, **kw):
    torch.manual_seed(seed)
    return RoadMTLNet(tiny_model_config(**kw))


def tiny_run_config(**train):
    """Desk configuration shrunk to 32x64 images and 2+2 sample batches."""
    defaults = dict(total_steps=10, source_batch=2, target_batch=2, val_every=5)
    defaults.update(train)
    cfg = desk_config(**defaults)
    cfg.backbone = BackboneConfig(channels=[4, 4, 4, 4])
    cfg.model.width = 4
    cfg.model.compact_steer_width = 4
    cfg.discriminator.base_channels = 2
    cfg.data.source_size = (32, 64)
    cfg.data.target_size = (32, 64)
    return cfg


@pytest.fixture(scope="session")
def tiny_data():
    from roadmtl.experiment import make_desk_data

    return make_desk_data(seed=0, n_source=12, n_target=12, n_val=4, source_size=(48, 64), target_size=(32, 64))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
