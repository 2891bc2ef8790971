import numpy as np
import pytest

from eventpose.events import EventStream
from eventpose.network import PoseNet, toy_config
from eventpose.scene import DatasetConfig, SceneConfig, make_dataset, synth_sequence


def random_stream(rng, n, width=64, height=48, t_max=100_000):
    """Events with sorted timestamps and uniform pixel/polarity draws."""
    t = np.sort(rng.integers(0, t_max, size=n))
    return EventStream(
        rng.integers(0, width, size=n),
        rng.integers(0, height, size=n),
        t,
        rng.choice(np.array([-1, 1], dtype=np.int8), size=n),
        width,
        height,
    )


@pytest.fixture(scope="session")
def toy_net():
    return PoseNet(toy_config(), seed=0, dtype=np.float32)


@pytest.fixture(scope="session")
def short_sequence():
    return synth_sequence(SceneConfig(duration_s=0.12, seed=3))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = DatasetConfig(motions=("wave", "box"), duration_s=0.09, seed=5)
    make_dataset(cfg, root)
    return root
