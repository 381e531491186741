import numpy as np
import pytest
from conftest import SHAPE

from inversion import InversionConfig, exhaustive_invert, invert, reverse_engineer
from models.decoders import LinearDecoder, ModelInput
from models.training import sample_inputs
from util.errors import ShapeMismatchError, UnsupportedArchitectureError
from util.metrics import MetricId, distance
from util.tensor_core import Rng, Tensor


def without_timing(result) -> dict:
    d = result.to_dict()
    d.pop("wall_time")
    return d


def orthonormal_linear(seed: int = 0) -> LinearDecoder:
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(16, 3)))
    return LinearDecoder("lin-orth", 3, SHAPE, {"W1": q, "b1": np.zeros(16)}, output_activation="identity")


def test_linear_inversion_matches_least_squares():
    m = orthonormal_linear()
    z0 = np.array([0.6, -0.4, 0.25])
    x = m.forward(ModelInput(Tensor(z0)))
    cfg = InversionConfig(restarts=2, steps_per_restart=2000, learning_rate=0.05, early_stop_loss=1e-14)
    result = reverse_engineer(m, x, MetricId.MSE, cfg)
    w = m.parameters["W1"].astype(np.float64)
    assert result.best_loss < 1e-8
    np.testing.assert_allclose(result.best_input.latent.numpy(), w.T @ x.numpy().reshape(-1), atol=1e-3)


def test_mlp_belongings_reconstruct_well(mlp_model):
    for inp in sample_inputs(mlp_model, 3, Rng(21)):
        x = mlp_model.forward(inp)
        assert reverse_engineer(mlp_model, x).best_loss < 1e-4


@pytest.mark.parametrize("metric", list(MetricId))
def test_result_invariants(mlp_model, fast_inversion, metric):
    x = Tensor(np.random.default_rng(4).uniform(0.0, 1.0, SHAPE))
    result = reverse_engineer(mlp_model, x, metric, fast_inversion)
    assert result.best_loss == distance(metric, mlp_model.forward(result.best_input), x)
    assert result.best_loss == min(result.per_restart_losses)
    assert len(result.per_restart_losses) == fast_inversion.restarts
    assert result.to_dict()["surviving_restarts"] == fast_inversion.restarts
    assert result.steps_used <= fast_inversion.restarts * fast_inversion.steps_per_restart
    assert result.method == "adam"


def test_disjoint_images_reconstruct_worse_than_generated_ones(mlp_model, tiny_dataset):
    cfg = InversionConfig(restarts=2, steps_per_restart=200, learning_rate=0.1)
    belonging = [
        reverse_engineer(mlp_model, mlp_model.forward(inp), MetricId.MSE, cfg).best_loss
        for inp in sample_inputs(mlp_model, 20, Rng(31))
    ]
    cutoff = np.percentile(belonging, 99)
    disjoint = [reverse_engineer(mlp_model, x, MetricId.MSE, cfg).best_loss for x, _ in tiny_dataset]
    assert np.mean([loss > cutoff for loss in disjoint]) >= 0.90


def test_conditional_inversion_enumerates_classes(conditional_mlp, fast_inversion):
    target = ModelInput(Tensor([0.3, -0.5]), 2)
    x = conditional_mlp.forward(target)
    result = reverse_engineer(conditional_mlp, x, MetricId.MSE, fast_inversion)
    assert len(result.per_restart_losses) == 3 * fast_inversion.restarts
    assert result.best_input.class_index in (0, 1, 2)
    assert result.best_loss == min(result.per_restart_losses)


def test_inversion_is_deterministic_across_workers(mlp_model):
    x = Tensor(np.random.default_rng(5).uniform(0.0, 1.0, SHAPE))
    cfg = InversionConfig(restarts=6, steps_per_restart=40, learning_rate=0.1, seed=3)
    serial = reverse_engineer(mlp_model, x, MetricId.SSIM_DISTANCE, cfg, num_workers=1)
    again = reverse_engineer(mlp_model, x, MetricId.SSIM_DISTANCE, cfg, num_workers=1)
    parallel = reverse_engineer(mlp_model, x, MetricId.SSIM_DISTANCE, cfg, num_workers=4)
    assert without_timing(serial) == without_timing(again) == without_timing(parallel)


def test_all_restarts_diverging_is_an_error():
    m = orthonormal_linear()
    x = Tensor(np.full(SHAPE, 0.5))
    cfg = InversionConfig(restarts=2, steps_per_restart=5, learning_rate=1e200)
    with pytest.raises(ArithmeticError, match="diverged"):
        reverse_engineer(m, x, MetricId.MSE, cfg)


def test_exhaustive_inversion_finds_codebook_entries(grid_model):
    for k in range(grid_model.size):
        result = exhaustive_invert(grid_model, Tensor(grid_model.codebook[k]))
        assert result.best_loss == 0.0
        assert result.best_input.latent.to_list() == [float(k)]
        assert result.method == "exhaustive"


def test_exhaustive_inversion_agrees_with_brute_force(grid_model, tiny_dataset):
    for metric in MetricId:
        for i in range(5):
            x = tiny_dataset.image(i)
            result = exhaustive_invert(grid_model, x, metric)
            brute = min(distance(metric, Tensor(grid_model.codebook[k]), x) for k in range(grid_model.size))
            assert result.best_loss == pytest.approx(brute, abs=1e-12)
            if metric is MetricId.MSE:
                assert result.best_loss > 0.0


def test_invert_dispatches_by_architecture(grid_model, mlp_model, fast_inversion):
    x = Tensor(grid_model.codebook[0])
    assert invert(grid_model, x).method == "exhaustive"
    assert invert(mlp_model, x, cfg=fast_inversion).method == "adam"


def test_architecture_and_shape_errors(grid_model, mlp_model):
    x = Tensor(grid_model.codebook[0])
    with pytest.raises(UnsupportedArchitectureError):
        reverse_engineer(grid_model, x)
    with pytest.raises(UnsupportedArchitectureError):
        exhaustive_invert(mlp_model, x)
    with pytest.raises(ShapeMismatchError):
        reverse_engineer(mlp_model, Tensor.zeros((1, 8, 8)))


def test_config_hash_tracks_settings():
    a = InversionConfig()
    assert a.config_hash() == InversionConfig.from_dict(a.to_dict()).config_hash()
    assert a.config_hash() != InversionConfig(restarts=4).config_hash()
    assert len(a.config_hash()) == 16
    with pytest.raises(ValueError):
        InversionConfig(restarts=0)
    with pytest.raises(ValueError):
        InversionConfig(learning_rate=0.0)
