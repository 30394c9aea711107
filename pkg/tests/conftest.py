import numpy as np
import pytest
import torch

from gaitreg.core.config import Config
from gaitreg.data.dataset import generate_synthetic_dataset

torch.set_num_threads(1)


def tiny_config(**kw) -> Config:
    """A configuration small enough for second-scale training runs."""
    base = dict(image_height=64, image_width=32, gsp_channels=(4, 8, 8, 8), latent_dim=16,
                gaitnet_channels=(4, 8, 8), hpm_scales=3, strip_dim=8, reid_channels=(8, 8, 16, 16),
                reid_dim=32, sc_dim=16, set_cardinality=4, steps_per_epoch=2, p1_epochs=2, p1_P=3, p1_K=2,
                p2a_epochs=1, p2a_milestones=(), p2b_epochs=1, p2b_milestones=(), p2_P=2, p3_epochs=2,
                p3_milestones=(), p3_P=3, p3_K=2)
    base.update(kw)
    return Config(**base)


@pytest.fixture(scope="session")
def tiny_data():
    """8 identities (4 train), 2 outfits, 2 cameras, one 10-frame track each."""
    return generate_synthetic_dataset(8, 2, 2, 1, 10, 0, height=64, width=32)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
