import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gpimdp.config import Config
from gpimdp.pipeline import build_offline


def small_config(**overrides) -> Config:
    """Benchmark pipeline at desk-test scale (coarse grid, small dataset)."""
    cfg = Config()
    cfg.cells_per_dim = [10, 10]
    cfg.samples_per_action = 150
    cfg.episodes = 5
    cfg.step_bound = 60
    cfg.ell = 40
    cfg.resynth_every = 30
    cfg.seed = 7
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def offline_small():
    return build_offline(small_config())
