"""
Desk-scale decoder training.

Differentiable decoders are trained as the generator half of a plain autoencoder
(MSE reconstruction, Adam); the encoder is thrown away afterwards. The grid model memorizes
its dataset verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from loguru import logger
from tqdm import tqdm

from models.decoders import MODEL_CLASSES, GenerativeModel, GridToyModel, ModelInput, TrainingMeta
from models.layers import dense_stack, init_dense_params
from util.errors import ShapeMismatchError
from util.optim import Adam
from util.synth import Dataset
from util.tensor_core import Rng, Tensor


@dataclass
class TrainConfig:
    architecture: str = "mlp"
    d_z: int = 8
    image_shape: tuple[int, int, int] = (1, 8, 8)
    num_classes: int | None = None
    hidden: tuple[int, int] = (64, 64)
    encoder_hidden: int = 64
    batch_size: int = 32
    output_activation: str = "sigmoid"
    model_id: str | None = None

    def __post_init__(self):
        if self.architecture not in MODEL_CLASSES:
            raise ValueError(f"未知的模型结构：{self.architecture}（可选 {', '.join(MODEL_CLASSES)}）")
        self.image_shape = tuple(int(s) for s in self.image_shape)
        self.hidden = tuple(int(h) for h in self.hidden)


def _decoder_sizes(cfg: TrainConfig, image_size: int) -> list[int]:
    d_in = cfg.d_z + (cfg.num_classes or 0)
    if cfg.architecture == "linear":
        return [d_in, image_size]
    return [d_in, cfg.hidden[0], cfg.hidden[1], image_size]


def _check_dataset(cfg: TrainConfig, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ValueError("训练数据集为空")
    if dataset.image_shape != cfg.image_shape:
        raise ShapeMismatchError(cfg.image_shape, dataset.image_shape, what="dataset image shape")
    if cfg.num_classes is not None:
        if dataset.labels is None:
            raise ValueError("条件模型需要带类别标签的数据集")
        if dataset.labels.min() < 0 or dataset.labels.max() >= cfg.num_classes:
            raise ValueError(f"数据集标签超出 [0, {cfg.num_classes})")


def train_decoder(
    cfg: TrainConfig,
    dataset: Dataset,
    rng: Rng,
    epochs: int = 200,
    learning_rate: float = 0.01,
    progress: bool = True,
) -> GenerativeModel:
    _check_dataset(cfg, dataset)
    model_id = cfg.model_id or f"{cfg.architecture}-{dataset.dataset_id}-s{rng.seed}"

    if cfg.architecture == "grid":
        meta = TrainingMeta(dataset.dataset_id, rng.seed, 0, None, 0.0)
        logger.info(f"grid model {model_id}: memorized {len(dataset)} images")
        return GridToyModel(model_id, dataset.images, meta)

    if epochs < 1:
        raise ValueError(f"epochs 必须 >= 1：{epochs}")
    image_size = int(np.prod(cfg.image_shape))
    dec_sizes = _decoder_sizes(cfg, image_size)
    enc_sizes = [image_size, cfg.encoder_hidden, cfg.d_z]

    init_rng = rng.child(0)
    dec_params = init_dense_params("", dec_sizes, init_rng)
    work = {**dec_params, **init_dense_params("enc_", enc_sizes, init_rng)}
    cls = MODEL_CLASSES[cfg.architecture]
    proto = cls(model_id, cfg.d_z, cfg.image_shape, dec_params, cfg.num_classes, output_activation=cfg.output_activation)
    decoder = proto.network
    encoder = dense_stack("enc_", enc_sizes, "tanh", "identity")

    x_all = dataset.images.reshape(len(dataset), -1).astype(np.float64)
    labels = dataset.labels if cfg.num_classes is not None else None

    def reconstruct(xb, lb):
        z, etape = encoder.forward(xb, work)
        y, dtape = decoder.forward(proto.design(z, lb), work)
        return y, etape, dtape

    def mean_loss() -> float:
        y, _, _ = reconstruct(x_all, labels)
        return float(np.mean((y - x_all) ** 2))

    initial = mean_loss()
    adam = Adam(lr=learning_rate)
    shuffle_rng = rng.child(1)
    batch = max(1, min(cfg.batch_size, len(dataset)))
    for _ in tqdm(range(epochs), desc=f"Training {model_id}", unit="epoch", disable=not progress):
        order = shuffle_rng.permutation(len(dataset))
        for start in range(0, len(dataset), batch):
            idx = order[start : start + batch]
            xb = x_all[idx]
            lb = None if labels is None else labels[idx]
            y, etape, dtape = reconstruct(xb, lb)
            grad_y = 2.0 * (y - xb) / y.size
            grad_in, grads = decoder.backward(dtape, grad_y, work)
            _, enc_grads = encoder.backward(etape, grad_in[:, : cfg.d_z], work)
            grads.update(enc_grads)
            adam.step(work, grads)
    final = mean_loss()
    logger.info(f"{model_id}: training loss {initial:.6f} -> {final:.6f} after {epochs} epochs")

    meta = TrainingMeta(dataset.dataset_id, rng.seed, epochs, initial, final)
    params = {k: work[k] for k in decoder.param_names}
    return cls(model_id, cfg.d_z, cfg.image_shape, params, cfg.num_classes, meta, cfg.output_activation)


def sample_inputs(m: GenerativeModel, n: int, rng: Rng) -> list[ModelInput]:
    """Latents i.i.d. N(0, 1); class indices uniform. Grid models draw a uniform index."""
    if n < 1:
        raise ValueError(f"n 必须 >= 1：{n}")
    if isinstance(m, GridToyModel):
        idx = rng.integers(0, m.size, n)
        return [ModelInput(Tensor([float(k)])) for k in idx]
    latents = rng.normal((n, m.d_z))
    classes = rng.integers(0, m.num_classes, n) if m.conditional else [None] * n
    return [
        ModelInput(Tensor(z), None if c is None else int(c))
        for z, c in zip(latents, classes, strict=True)
    ]


def generate(m: GenerativeModel, inputs: list[ModelInput]) -> list[Tensor]:
    return [m.forward(i) for i in inputs]
