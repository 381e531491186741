import numpy as np
import pytest

from inversion import InversionConfig
from models.decoders import GridToyModel, LinearDecoder, MlpDecoder
from models.layers import init_dense_params
from util.synth import SynthSpec, synth_dataset
from util.tensor_core import Rng

SHAPE = (1, 4, 4)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_dataset():
    return synth_dataset(SynthSpec("gaussian-blobs", SHAPE, 2, 32, 7))


@pytest.fixture
def mlp_model():
    params = init_dense_params("", [3, 8, 8, 16], Rng(3))
    return MlpDecoder("mlp-test", 3, SHAPE, params)


@pytest.fixture
def conditional_mlp():
    # 2 latent dims + 3 one-hot classes
    params = init_dense_params("", [5, 8, 8, 16], Rng(4))
    return MlpDecoder("mlp-cond", 2, SHAPE, params, num_classes=3)


@pytest.fixture
def linear_model():
    params = init_dense_params("", [3, 16], Rng(5))
    return LinearDecoder("linear-test", 3, SHAPE, params)


@pytest.fixture
def grid_model():
    codebook = synth_dataset(SynthSpec("striped-patterns", SHAPE, 2, 12, 9)).images
    return GridToyModel("grid-test", codebook)


@pytest.fixture
def fast_inversion():
    return InversionConfig(restarts=2, steps_per_restart=60, learning_rate=0.1)


def central_difference(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = eps
        grad.flat[i] = (f(x + step) - f(x - step)) / (2.0 * eps)
    return grad
