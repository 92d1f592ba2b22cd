import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from lanhdr.config import ModelConfig, RunConfig  # noqa: E402


def small_model_config(**kw) -> ModelConfig:
    base = dict(kq_channels=8, value_channels=8, extractor_layers=2, hal_channels=4, feat_channels=8,
                lan_out_channels=4, merge_channels=8, fft_blocks=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def small_cfg():
    return small_model_config()


@pytest.fixture
def run_cfg(tmp_path):
    cfg = RunConfig(model=small_model_config())
    cfg.loss.lambda_per = 0.0
    cfg.data.crop_size = 32
    cfg.train.batch_size = 1
    cfg.train.ckpt_dir = str(tmp_path / "ckpt")
    cfg.train.ckpt_every = 5
    return cfg.validate()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield
    torch.use_deterministic_algorithms(False)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
