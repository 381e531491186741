import numpy as np
import pytest
from conftest import SHAPE, central_difference

from models.checkpoint import load_model, save_model
from models.decoders import GridToyModel, LinearDecoder, ModelInput
from models.training import TrainConfig, generate, sample_inputs, train_decoder
from util.errors import ArtifactMissingError, ShapeMismatchError, TensorFormatError, UnsupportedArchitectureError
from util.synth import Dataset, SynthSpec, synth_dataset
from util.tensor_core import Rng, Tensor


def test_grid_forward_returns_codebook_entry(grid_model):
    out = grid_model.forward(ModelInput(Tensor([3.0])))
    assert out.bit_equal(Tensor(grid_model.codebook[3]))


def test_grid_rejects_non_integer_or_out_of_range_index(grid_model):
    with pytest.raises(ValueError):
        grid_model.forward(ModelInput(Tensor([1.5])))
    with pytest.raises(ValueError):
        grid_model.forward(ModelInput(Tensor([float(grid_model.size)])))


def test_linear_forward_is_squashed_weight_column():
    w = np.zeros((16, 3))
    w[:3, :3] = np.eye(3)
    w[5, 0] = 0.7
    m = LinearDecoder("lin", 3, SHAPE, {"W1": w, "b1": np.zeros(16)})
    out = m.forward(ModelInput(Tensor([1.0, 0.0, 0.0])))
    expected = 1.0 / (1.0 + np.exp(-w[:, 0]))
    np.testing.assert_allclose(out.numpy().reshape(-1), expected, atol=1e-6)


def test_mlp_forward_is_deterministic_and_in_unit_range(mlp_model):
    inputs = sample_inputs(mlp_model, 16, Rng(0))
    first = generate(mlp_model, inputs)
    second = generate(mlp_model, inputs)
    for a, b in zip(first, second):
        assert a.bit_equal(b)
        assert a.shape == SHAPE
        assert a.numpy().min() >= 0.0 and a.numpy().max() <= 1.0


def test_forward_validates_input(mlp_model, conditional_mlp):
    with pytest.raises(ShapeMismatchError):
        mlp_model.forward(ModelInput(Tensor([0.0, 0.0])))
    with pytest.raises(ValueError):
        mlp_model.forward(ModelInput(Tensor([0.0, 0.0, 0.0]), 1))
    with pytest.raises(ValueError):
        conditional_mlp.forward(ModelInput(Tensor([0.0, 0.0])))
    with pytest.raises(ValueError):
        conditional_mlp.forward(ModelInput(Tensor([0.0, 0.0]), 3))


def test_linear_gradient_is_weight_transpose():
    gen = np.random.default_rng(1)
    w = gen.normal(size=(16, 3))
    m = LinearDecoder("lin", 3, SHAPE, {"W1": w, "b1": gen.normal(size=16)}, output_activation="identity")
    g = gen.normal(size=SHAPE)
    upstream = Tensor(g)
    grad = m.input_gradient(ModelInput(Tensor([0.3, -0.2, 0.1])), upstream)
    expected = m.parameters["W1"].astype(np.float64).T @ upstream.numpy().reshape(-1)
    np.testing.assert_allclose(grad.numpy(), expected, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("fixture", ["mlp_model", "conditional_mlp", "linear_model"])
def test_input_gradient_matches_finite_differences(fixture, request):
    m = request.getfixturevalue(fixture)
    gen = np.random.default_rng(2)
    ci = 1 if m.conditional else None
    checked = ok = 0
    for _ in range(20):
        z = gen.normal(size=m.d_z)
        g = gen.normal(size=SHAPE)
        analytic = m.input_gradient_array(z, ci, g)
        numeric = central_difference(lambda v: float(np.sum(m.forward_array(v, ci) * g)), z)
        for a, n in zip(analytic, numeric):
            if abs(n) <= 1e-6:
                continue
            checked += 1
            ok += abs(a - n) <= 1e-4 * abs(n)
    assert checked > 0
    assert ok >= 0.99 * checked


def test_zero_upstream_gives_zero_gradient(mlp_model):
    grad = mlp_model.input_gradient(ModelInput(Tensor([0.1, 0.2, 0.3])), Tensor.zeros(SHAPE))
    assert not np.any(grad.numpy())


def test_grid_has_no_input_gradient(grid_model):
    with pytest.raises(UnsupportedArchitectureError):
        grid_model.input_gradient(ModelInput(Tensor([0.0])), Tensor.zeros(SHAPE))


def test_grid_training_memorizes_dataset(tiny_dataset):
    m = train_decoder(TrainConfig("grid", 1, SHAPE), tiny_dataset, Rng(0))
    assert isinstance(m, GridToyModel)
    assert np.array_equal(m.codebook, tiny_dataset.images)
    assert m.training_meta.dataset_id == tiny_dataset.dataset_id


def test_mlp_training_reduces_loss():
    ds = synth_dataset(SynthSpec("gaussian-blobs", (1, 8, 8), 4, 64, 3))
    cfg = TrainConfig("mlp", 4, (1, 8, 8), hidden=(16, 16))
    m = train_decoder(cfg, ds, Rng(5), epochs=30, learning_rate=0.01, progress=False)
    meta = m.training_meta
    assert meta.final_loss < meta.initial_loss
    assert (meta.dataset_id, meta.seed, meta.epochs) == (ds.dataset_id, 5, 30)


def test_training_is_deterministic(tiny_dataset):
    cfg = TrainConfig("mlp", 2, SHAPE, hidden=(8, 8))
    a = train_decoder(cfg, tiny_dataset, Rng(9), epochs=3, progress=False)
    b = train_decoder(cfg, tiny_dataset, Rng(9), epochs=3, progress=False)
    assert a.parameters.keys() == b.parameters.keys()
    for k in a.parameters:
        assert a.parameters[k].tobytes() == b.parameters[k].tobytes()


def test_conditional_training_uses_labels(tiny_dataset):
    cfg = TrainConfig("linear", 2, SHAPE, num_classes=2)
    m = train_decoder(cfg, tiny_dataset, Rng(1), epochs=2, progress=False)
    assert m.conditional and m.input_dim == 4


def test_training_rejects_bad_datasets(tiny_dataset):
    empty = Dataset("empty", np.zeros((0, *SHAPE)))
    with pytest.raises(ValueError):
        train_decoder(TrainConfig("mlp", 2, SHAPE), empty, Rng(0), progress=False)
    with pytest.raises(ShapeMismatchError):
        train_decoder(TrainConfig("mlp", 2, (1, 8, 8)), tiny_dataset, Rng(0), progress=False)
    with pytest.raises(ValueError):
        train_decoder(TrainConfig("mlp", 2, SHAPE, num_classes=1), tiny_dataset, Rng(0), progress=False)


def test_sample_inputs(mlp_model, conditional_mlp):
    a = sample_inputs(mlp_model, 100, Rng(4))
    b = sample_inputs(mlp_model, 100, Rng(4))
    assert all(x.latent.bit_equal(y.latent) for x, y in zip(a, b))
    assert all(0 <= i.class_index < 3 for i in sample_inputs(conditional_mlp, 200, Rng(4)))
    with pytest.raises(ValueError):
        sample_inputs(mlp_model, 0, Rng(4))


def test_sampled_latents_are_standard_normal(mlp_model):
    latents = np.stack([i.latent.numpy() for i in sample_inputs(mlp_model, 3334, Rng(17))])
    assert abs(latents.reshape(-1)[:10_000].mean()) <= 0.05


def test_grid_sample_inputs_are_valid_indices(grid_model):
    for inp in sample_inputs(grid_model, 50, Rng(2)):
        grid_model.forward(inp)


@pytest.mark.parametrize("fixture", ["mlp_model", "conditional_mlp", "linear_model", "grid_model"])
def test_checkpoint_roundtrip(fixture, request, tmp_path):
    m = request.getfixturevalue(fixture)
    loaded = load_model(save_model(m, tmp_path / "ckpt"))
    assert loaded.describe() == m.describe()
    for inp in sample_inputs(m, 32, Rng(8)):
        assert loaded.forward(inp).bit_equal(m.forward(inp))


def test_checkpoint_errors(mlp_model, tmp_path):
    with pytest.raises(ArtifactMissingError, match="manifest.json"):
        load_model(tmp_path / "nowhere")
    path = save_model(mlp_model, tmp_path / "ckpt")
    with open(path / "weights.bin", "ab") as f:
        f.write(b"\x00")
    with pytest.raises(TensorFormatError, match="trailing"):
        load_model(path)
