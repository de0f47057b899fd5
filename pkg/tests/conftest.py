import numpy as np
import pytest

from scenecrnn.layers import ModelConfig

SR = 22050


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Reduced shapes used by gradient checks: M=64, T=4, H=4, C=3."""
    return ModelConfig(n_freq=64, n_frames=4, n_classes=3, conv_filters=(2, 3, 4), hidden=4, att_size=5,
                       conv_dropout=0.0, rnn_dropout=0.0)


def white_noise(rng, seconds, sigma=0.1, sr=SR):
    return sigma * rng.standard_normal(int(round(seconds * sr)))
