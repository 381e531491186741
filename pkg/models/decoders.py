"""
Deterministic toy generative models with white-box input gradients.

- grid:   a codebook of K images, the input is an index (enumerable input space).
- linear: image = act(W·[z; onehot] + b)
- mlp:    image = sigmoid(W3·tanh(W2·tanh(W1·[z; onehot] + b1) + b2) + b3)

Class-conditional models concatenate a one-hot class vector to the latent before the first
layer. Parameters are stored as read-only float32 arrays; forward passes run in float64 and
round the image to float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from models.layers import Sequential, dense_stack
from util.errors import ShapeMismatchError, UnsupportedArchitectureError
from util.tensor_core import Tensor

MAX_CODEBOOK = 4096


@dataclass(frozen=True)
class ModelInput:
    latent: Tensor
    class_index: int | None = None

    def to_dict(self) -> dict:
        return {"latent": self.latent.to_list(), "class_index": self.class_index}

    @classmethod
    def from_dict(cls, data: dict) -> ModelInput:
        ci = data.get("class_index")
        return cls(Tensor(data["latent"]), None if ci is None else int(ci))


@dataclass
class TrainingMeta:
    dataset_id: str = ""
    seed: int = 0
    epochs: int = 0
    initial_loss: float | None = None
    final_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "seed": self.seed,
            "epochs": self.epochs,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> TrainingMeta:
        data = data or {}
        return cls(
            dataset_id=str(data.get("dataset_id", "")),
            seed=int(data.get("seed", 0)),
            epochs=int(data.get("epochs", 0)),
            initial_loss=data.get("initial_loss"),
            final_loss=data.get("final_loss"),
        )


class GenerativeModel:
    architecture: str = ""
    differentiable: bool = True

    def __init__(
        self,
        model_id: str,
        d_z: int,
        image_shape: tuple[int, int, int],
        parameters: dict[str, np.ndarray],
        num_classes: int | None = None,
        training_meta: TrainingMeta | None = None,
        output_activation: str = "sigmoid",
    ):
        if d_z < 1:
            raise ValueError(f"d_z 必须 >= 1：{d_z}")
        if len(image_shape) != 3 or any(int(s) < 1 for s in image_shape):
            raise ValueError(f"image_shape 必须是 (channels, height, width)：{image_shape}")
        if num_classes is not None and num_classes < 1:
            raise ValueError(f"num_classes 必须 >= 1：{num_classes}")
        self.model_id = model_id
        self.d_z = int(d_z)
        self.image_shape = tuple(int(s) for s in image_shape)
        self.num_classes = None if num_classes is None else int(num_classes)
        self.training_meta = training_meta or TrainingMeta()
        self.output_activation = output_activation
        self.parameters: dict[str, np.ndarray] = {}
        for name, value in parameters.items():
            arr = np.array(value, dtype=np.float32)
            arr.flags.writeable = False
            self.parameters[name] = arr
        self._p64 = {k: v.astype(np.float64) for k, v in self.parameters.items()}
        self.network = self._build_network()
        if self.network is not None:
            missing = [n for n in self.network.param_names if n not in self.parameters]
            if missing:
                raise ValueError(f"{self.architecture} 模型缺少参数：{missing}")

    def _build_network(self) -> Sequential | None:
        raise NotImplementedError

    @property
    def image_size(self) -> int:
        return int(np.prod(self.image_shape))

    @property
    def conditional(self) -> bool:
        return self.num_classes is not None

    @property
    def input_dim(self) -> int:
        return self.d_z + (self.num_classes or 0)

    def parameter_order(self) -> list[str]:
        return list(self.parameters)

    def validate_input(self, latent_shape: tuple[int, ...], class_index: int | None) -> None:
        if latent_shape != (self.d_z,):
            raise ShapeMismatchError((self.d_z,), latent_shape, what="latent shape")
        if self.conditional:
            if class_index is None:
                raise ValueError(f"模型 {self.model_id} 是条件模型，需要 class_index")
            if not 0 <= int(class_index) < self.num_classes:
                raise ValueError(f"class_index {class_index} 超出范围 [0, {self.num_classes})")
        elif class_index is not None:
            raise ValueError(f"模型 {self.model_id} 不是条件模型，不接受 class_index")

    def design(self, latents: np.ndarray, class_indices) -> np.ndarray:
        """(B, d_z) latents -> (B, input_dim) network input."""
        latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        if not self.conditional:
            return latents
        onehot = np.zeros((latents.shape[0], self.num_classes))
        onehot[np.arange(latents.shape[0]), np.asarray(class_indices, dtype=np.int64)] = 1.0
        return np.concatenate([latents, onehot], axis=1)

    def forward_batch(self, latents: np.ndarray, class_indices=None) -> np.ndarray:
        """(B, d_z) -> (B, C, H, W) float64."""
        y, _ = self.network.forward(self.design(latents, class_indices), self._p64)
        return y.reshape((-1, *self.image_shape))

    def forward_array(self, latent: np.ndarray, class_index: int | None = None) -> np.ndarray:
        ci = None if class_index is None else [class_index]
        return self.forward_batch(latent[None, :], ci)[0]

    def forward(self, inp: ModelInput) -> Tensor:
        self.validate_input(inp.latent.shape, inp.class_index)
        return Tensor(self.forward_array(inp.latent.numpy(), inp.class_index))

    def input_gradient_array(
        self, latent: np.ndarray, class_index: int | None, upstream: np.ndarray
    ) -> np.ndarray:
        ci = None if class_index is None else [class_index]
        x = self.design(latent[None, :], ci)
        _, tape = self.network.forward(x, self._p64)
        grad_x, _ = self.network.backward(tape, upstream.reshape(1, -1), self._p64)
        return grad_x[0, : self.d_z]

    def forward_and_gradient(
        self, latent: np.ndarray, class_index: int | None, loss_grad
    ) -> tuple[np.ndarray, np.ndarray]:
        """One tape for both: returns (image, Jᵀ·loss_grad(image))."""
        ci = None if class_index is None else [class_index]
        y, tape = self.network.forward(self.design(latent[None, :], ci), self._p64)
        image = y.reshape(self.image_shape)
        upstream = loss_grad(image)
        grad_x, _ = self.network.backward(tape, upstream.reshape(1, -1), self._p64)
        return image, grad_x[0, : self.d_z]

    def input_gradient(self, inp: ModelInput, upstream: Tensor) -> Tensor:
        if not self.differentiable:
            raise UnsupportedArchitectureError(f"{self.architecture} 模型不支持输入梯度")
        self.validate_input(inp.latent.shape, inp.class_index)
        if upstream.shape != self.image_shape:
            raise ShapeMismatchError(self.image_shape, upstream.shape, what="upstream shape")
        return Tensor(self.input_gradient_array(inp.latent.numpy(), inp.class_index, upstream.numpy()))

    def describe(self) -> dict:
        return {
            "model_id": self.model_id,
            "architecture": self.architecture,
            "d_z": self.d_z,
            "image_shape": list(self.image_shape),
            "num_classes": self.num_classes,
            "output_activation": self.output_activation,
        }

    def __repr__(self) -> str:
        return f"{type(self).__name__}(model_id={self.model_id!r}, d_z={self.d_z}, image_shape={self.image_shape})"


class LinearDecoder(GenerativeModel):
    architecture = "linear"

    def _build_network(self) -> Sequential:
        return dense_stack("", [self.input_dim, self.image_size], "tanh", self.output_activation)


class MlpDecoder(GenerativeModel):
    architecture = "mlp"

    def _build_network(self) -> Sequential:
        h1 = self.parameters["W1"].shape[0]
        h2 = self.parameters["W2"].shape[0]
        return dense_stack("", [self.input_dim, h1, h2, self.image_size], "tanh", self.output_activation)


class GridToyModel(GenerativeModel):
    """forward(k) == codebook[k]; the perfect inverter is exhaustive search."""

    architecture = "grid"
    differentiable = False

    def __init__(self, model_id: str, codebook: np.ndarray, training_meta: TrainingMeta | None = None):
        codebook = np.asarray(codebook, dtype=np.float32)
        if codebook.ndim != 4:
            raise ValueError(f"codebook 必须是 (K, C, H, W)：{codebook.shape}")
        if not 1 <= codebook.shape[0] <= MAX_CODEBOOK:
            raise ValueError(f"codebook 大小必须在 [1, {MAX_CODEBOOK}]：{codebook.shape[0]}")
        super().__init__(
            model_id,
            1,
            codebook.shape[1:],
            {"codebook": codebook},
            training_meta=training_meta,
            output_activation="identity",
        )

    def _build_network(self) -> None:
        return None

    @property
    def codebook(self) -> np.ndarray:
        return self.parameters["codebook"]

    @property
    def size(self) -> int:
        return int(self.codebook.shape[0])

    def index_of(self, latent: np.ndarray) -> int:
        value = float(np.asarray(latent).reshape(-1)[0])
        k = int(round(value))
        if k != value or not 0 <= k < self.size:
            raise ValueError(f"grid 模型的输入必须是 [0, {self.size}) 内的整数索引：{value}")
        return k

    def forward_batch(self, latents: np.ndarray, class_indices=None) -> np.ndarray:
        latents = np.atleast_2d(latents)
        return np.stack([self.codebook[self.index_of(z)].astype(np.float64) for z in latents])

    def forward(self, inp: ModelInput) -> Tensor:
        self.validate_input(inp.latent.shape, inp.class_index)
        return Tensor(self.codebook[self.index_of(inp.latent.data)])

    def input_gradient_array(self, latent, class_index, upstream):
        raise UnsupportedArchitectureError("grid 模型不可微，请使用 exhaustive_invert")

    def forward_and_gradient(self, latent, class_index, loss_grad):
        raise UnsupportedArchitectureError("grid 模型不可微，请使用 exhaustive_invert")


MODEL_CLASSES: dict[str, type[GenerativeModel]] = {
    "grid": GridToyModel,
    "linear": LinearDecoder,
    "mlp": MlpDecoder,
}
