import numpy as np
import pytest
from conftest import central_difference

from util.errors import ShapeMismatchError
from util.metrics import MetricId, distance, distance_array, distance_gradient, distance_gradient_array, ssim
from util.tensor_core import Tensor

METRICS = list(MetricId)


def random_pair(seed: int, shape=(1, 8, 8)):
    gen = np.random.default_rng(seed)
    return gen.uniform(0.0, 1.0, shape), gen.uniform(0.0, 1.0, shape)


def test_mse_example():
    d = distance(MetricId.MSE, Tensor([0.2, 0.4, 0.6]), Tensor([0.1, 0.4, 0.8]))
    assert d == pytest.approx(0.0166667, abs=1e-6)


def test_ssim_distance_of_constant_images():
    d = distance(MetricId.SSIM_DISTANCE, Tensor.zeros((1, 8, 8)), Tensor(np.ones((1, 8, 8))))
    assert d == pytest.approx(1.0 - 1e-4 / (1.0 + 1e-4), abs=1e-9)
    assert d == pytest.approx(0.9999, abs=1e-6)


@pytest.mark.parametrize("metric", METRICS)
def test_identity_symmetry_nonnegativity(metric):
    a, b = random_pair(0, (3, 8, 8))
    assert distance_array(metric, a, a) == pytest.approx(0.0, abs=1e-12)
    assert distance_array(metric, a, b) == pytest.approx(distance_array(metric, b, a), rel=1e-12)
    assert distance_array(metric, a, b) >= 0.0


def test_ssim_is_one_for_identical_images():
    a, _ = random_pair(3)
    assert ssim(a, a) == pytest.approx(1.0)


def test_mse_gradient_formula_and_stationary_point():
    a, b = random_pair(1)
    np.testing.assert_allclose(distance_gradient_array(MetricId.MSE, a, b), 2.0 * (a - b) / a.size)
    g = distance_gradient(MetricId.MSE, Tensor(a), Tensor(a))
    assert not np.any(g.numpy())


def test_mae_subgradient_is_zero_at_ties():
    a = np.array([0.5, 0.2])
    b = np.array([0.5, 0.4])
    np.testing.assert_allclose(distance_gradient_array(MetricId.MAE, a, b), [0.0, -0.5])


@pytest.mark.parametrize("metric", METRICS)
def test_gradient_matches_finite_differences(metric):
    eps = 1e-6 if metric is MetricId.MAE else 1e-4
    checked = ok = 0
    for seed in range(20):
        a, b = random_pair(seed)
        analytic = distance_gradient_array(metric, a, b)
        numeric = central_difference(lambda v: distance_array(metric, v, b), a, eps)
        for i in range(a.size):
            if abs(numeric.flat[i]) <= 1e-6:
                continue
            if metric is MetricId.MAE and abs(a.flat[i] - b.flat[i]) <= 1e-6:
                continue
            checked += 1
            ok += abs(analytic.flat[i] - numeric.flat[i]) <= 1e-4 * abs(numeric.flat[i])
    assert ok >= 0.99 * checked


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        distance(MetricId.MSE, Tensor.zeros((1, 4, 4)), Tensor.zeros((1, 4, 5)))
    with pytest.raises(ShapeMismatchError):
        distance_gradient_array(MetricId.SSIM_DISTANCE, np.zeros((1, 2, 2)), np.zeros((3, 2, 2)))


def test_metric_parse():
    assert MetricId.parse("SSIM") is MetricId.SSIM_DISTANCE
    assert MetricId.parse(MetricId.MAE) is MetricId.MAE
    with pytest.raises(ValueError, match="lpips"):
        MetricId.parse("lpips")
