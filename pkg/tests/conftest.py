import numpy as np
import pytest

from shapegan.config import TrainConfig
from shapegan.synth import build_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 domains x 12 images at 32x32; enough for batch-4 training."""
    root = tmp_path_factory.mktemp("tiny-data")
    build_dataset(root, domains=2, n_per_domain=12, size=32, seed=5,
                  paired_eval_fraction=0.25)
    return load_dataset(root)


@pytest.fixture
def micro_config():
    return TrainConfig(
        batch_size=4,
        max_iterations=3,
        unet_pretrain_iters=2,
        checkpoint_every=2,
        seed=11,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.Generator(np.random.PCG64(1234))
