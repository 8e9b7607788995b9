from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from fracspike import NetworkSpec, NeuronParams

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]
DATA = REPO / "data"
MNIST_FILES = {
    "train_images": DATA / "mnist-subset-train-images-idx3-ubyte.gz",
    "train_labels": DATA / "mnist-subset-train-labels-idx1-ubyte.gz",
    "test_images": DATA / "mnist-subset-test-images-idx3-ubyte.gz",
    "test_labels": DATA / "mnist-subset-test-labels-idx1-ubyte.gz",
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_network(dims=(4, 8, 2), alpha=1.0, smooth=False, seed=0, scale=3.0, **neuron):
    params = dict(tau_alpha=2.0, theta=0.5)
    params.update(neuron)
    spec = NetworkSpec.build(list(dims), alpha, NeuronParams(alpha=alpha, **params), seed=seed, smooth=smooth)
    return spec.with_weights([W * scale for W in spec.weights()])


def random_frames(T, B, F, seed=0, p=0.5):
    return (np.random.default_rng(seed).random((T, B, F)) < p).astype(np.float64)
