import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regiondrosonet.drosonet import DrosoNetConfig
from regiondrosonet.ensemble import Ensemble, EnsembleConfig
from regiondrosonet.partition import PartitionPlan

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_scenes(n, width=64, height=32, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, (height, width), dtype=np.uint8) for _ in range(n)]


@pytest.fixture
def small_config():
    return EnsembleConfig(
        grids=PartitionPlan.from_pairs([(1, 1), (1, 2)]),
        z_per_region=2,
        k_votes=2,
        drosonet=DrosoNetConfig(d_hidden=64, epochs=60, learning_rate=0.01),
        master_seed=7,
    )


@pytest.fixture
def trained_small(small_config):
    images = random_scenes(6, seed=3)
    model = Ensemble.build(small_config, len(images)).train_all(images)
    return model, images
