import numpy as np
import pytest

from segrobust.data import SynthSpec, gen_synthetic_dataset
from segrobust.models import Segmenter, ToyModelSpec


def threshold_instance(a=10.0, b=4.5, size=3):
    """Two-class PatchLinear model with a closed-form decision threshold.

    Class 0 logit is ``a * x[..., 0]`` (centre tap only), class 1 logit is the
    constant ``b``. On the constant image x = 0.5 every pixel is class 0 and
    flips once channel 0 drops below b / a, so the minimal l-inf perturbation
    that flips every pixel is ``0.5 - b / a``.
    """
    spec = ToyModelSpec(variant="PatchLinear", classes=2)
    model = Segmenter(spec, np.zeros(Segmenter(spec).num_params))
    p = model.params.copy()
    off, _ = model._shapes["conv0.weight"]
    w = np.zeros((3, 3, 3, 2))
    w[1, 1, 0, 0] = a
    p[off:off + w.size] = w.ravel()
    off, _ = model._shapes["conv0.bias"]
    p[off + 1] = b
    x = np.full((size, size, 3), 0.5)
    y = np.zeros((size, size), dtype=np.int64)
    return model.with_params(p), x, y, 0.5 - b / a


@pytest.fixture(scope="session")
def small_data():
    """A tiny synthetic split pair (8 train / 4 test, 16x16)."""
    spec = SynthSpec(size=16, large_radius=(4, 6), small_radius=(1, 2), small_count=2,
                     n_train=8, n_test=4, seed=3)
    return gen_synthetic_dataset(spec)


@pytest.fixture(scope="session")
def tiny_model():
    return Segmenter(ToyModelSpec(variant="TinyConvNet", seed=7))
