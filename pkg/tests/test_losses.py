import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segrobust.losses import LOSS_KINDS, compute_loss, loss_ce, loss_cossim, loss_sea_bce, \
    loss_sea_jsd, loss_sea_mce, loss_sea_msl
from segrobust.models import ToyModelSpec, build_model, grad_check
from segrobust.tensor_core import IGNORE, ContractError, onehot


def px(*logits):
    return np.array([[list(logits)]], dtype=np.float64)


def test_ce_examples():
    assert math.isclose(loss_ce(px(0, 0), np.array([[0]])).value, math.log(2), rel_tol=1e-12)
    assert math.isclose(loss_ce(px(10, -10), np.array([[0]])).value, 2.06e-9, rel_tol=1e-2)
    r = loss_ce(px(1, 2), np.array([[IGNORE]]))
    assert r.value == 0.0 and not np.any(r.logit_gradient)


def test_cossim_examples():
    y = np.array([[0, 1], [2, 1]])
    assert math.isclose(loss_cossim(onehot(y, 3), y).value, 1.0)
    assert math.isclose(loss_cossim(-onehot(y, 3), y).value, -1.0)
    z = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    assert math.isclose(loss_cossim(z, np.array([[0, 1]])).value, 1 / math.sqrt(2), rel_tol=1e-12)


def test_bce_examples():
    z = np.array([[[2.0, 0.0], [0.5, 0.0]]])
    y = np.array([[0, 0]])
    assert math.isclose(loss_sea_bce(z, y, lam=1.0).value, loss_ce(z, y).value)
    assert loss_sea_bce(z, y, lam=0.0).value == 0.0
    # mixed: pixel 0 correct, pixel 1 wrong
    z = np.array([[[2.0, 0.0], [0.0, 1.0]]])
    ce0 = math.log(1 + math.exp(-2.0))
    ce1 = math.log(1 + math.exp(1.0))
    assert math.isclose(loss_sea_bce(z, y, lam=0.5).value, (0.5 * ce0 + 0.5 * ce1) / 2, rel_tol=1e-12)
    with pytest.raises(ContractError):
        loss_sea_bce(z, y, lam=1.5)


def test_mce_examples():
    y = np.array([[0, 1]])
    wrong = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    assert loss_sea_mce(wrong, y).value == 0.0
    right = np.array([[[1.0, 0.0], [0.0, 3.0]]])
    assert loss_sea_mce(right, y).value == loss_ce(right, y).value
    half = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    assert math.isclose(loss_sea_mce(half, y).value, math.log(1 + math.exp(-1.0)), rel_tol=1e-12)


def test_jsd_examples():
    assert abs(loss_sea_jsd(px(200, 0), np.array([[0]])).value) < 1e-12
    expected = 0.5 * math.log(4 / 3) + 0.5 * (0.5 * math.log(2 / 3) + 0.5 * math.log(2))
    assert math.isclose(expected, 0.21576, abs_tol=1e-5)
    assert math.isclose(loss_sea_jsd(px(0, 0), np.array([[0]])).value, expected, rel_tol=1e-12)


def test_msl_examples():
    assert loss_sea_msl(px(1, 0), np.array([[0]])).value == 1.0
    assert math.isclose(loss_sea_msl(px(4, 3), np.array([[0]])).value, 0.8)
    # (3, 4) with y = 0 is misclassified, so only the correct-pixel branch of the
    # formula applies when the mask is supplied explicitly
    assert math.isclose(loss_sea_msl(px(3, 4), np.array([[0]]), correct=np.array([[True]])).value, 0.6)
    r = loss_sea_msl(px(0, 1), np.array([[0]]))
    assert r.value == 0.0 and not np.any(r.logit_gradient)


@pytest.mark.parametrize("kind", LOSS_KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_on_random_instances(kind, seed):
    model = build_model(ToyModelSpec(variant="PatchLinear", seed=seed))
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (6, 6, 3))
    y = rng.integers(0, 3, (6, 6))
    y[rng.uniform(size=y.shape) < 0.1] = IGNORE
    kw = {"lam": 0.7} if kind == "sea-bce" else {}
    assert grad_check(model, kind, x, y, **kw) < 1e-4


def _ignore_fixture(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, 4, 3))
    y = rng.integers(0, 3, (4, 4))
    y[0] = IGNORE
    return rng, z, y


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_ignore_invariance(kind):
    rng, z, y = _ignore_fixture(0)
    z2 = z.copy()
    z2[0] = rng.normal(size=z2[0].shape) * 5
    a, b = compute_loss(kind, z, y), compute_loss(kind, z2, y)
    assert a.value == b.value
    assert np.array_equal(a.logit_gradient, b.logit_gradient)
    assert not np.any(a.logit_gradient[0])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 30))
def test_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 3, 3)) * scale
    y = rng.integers(0, 3, (3, 3))
    assert 0.0 <= loss_sea_jsd(z, y).value <= math.log(2) + 1e-12
    assert -1 - 1e-12 <= loss_cossim(z, y).value <= 1 + 1e-12
    assert -1 - 1e-12 <= loss_sea_msl(z, y).value <= 1 + 1e-12


@given(st.integers(0, 2**32 - 1))
def test_mce_equals_ce_when_all_correct(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 3, 3))
    y = np.argmax(z, axis=-1)
    y[0, 0] = IGNORE
    assert loss_sea_mce(z, y).value == loss_ce(z, y).value


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown loss"):
        compute_loss("hinge", px(0, 0), np.array([[0]]))
