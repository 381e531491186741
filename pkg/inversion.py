"""
Input reverse-engineering: find the model input whose output is closest to an image.

reverse_engineer: Adam on the latent, several random restarts, best loss kept. Conditional
models are inverted once per class and the class-wise minimum is returned.
exhaustive_invert: the perfect inverter for enumerable (grid) models.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from loguru import logger

from models.decoders import GenerativeModel, GridToyModel, ModelInput
from util.errors import ShapeMismatchError, UnsupportedArchitectureError
from util.metrics import MetricId, distance, distance_array, distance_gradient_array
from util.optim import Adam
from util.tensor_core import Rng, Tensor


@dataclass(frozen=True)
class InversionConfig:
    restarts: int = 8
    steps_per_restart: int = 400
    learning_rate: float = 0.05
    early_stop_loss: float = 1e-7
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1 or self.steps_per_restart < 1:
            raise ValueError(f"restarts / steps 必须 >= 1：{self.restarts} / {self.steps_per_restart}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate 必须为正：{self.learning_rate}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed 必须是 64 位无符号整数：{self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> InversionConfig:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class InversionResult:
    best_input: ModelInput
    best_loss: float
    per_restart_losses: list[float]
    steps_used: int
    wall_time: float
    abandoned_restarts: list[int] = field(default_factory=list)
    method: str = "adam"

    @property
    def surviving_restarts(self) -> int:
        return len(self.per_restart_losses)

    def to_dict(self) -> dict:
        return {
            "best_input": self.best_input.to_dict(),
            "best_loss": self.best_loss,
            "per_restart_losses": list(self.per_restart_losses),
            "steps_used": self.steps_used,
            "wall_time": self.wall_time * 1000.0,
            "abandoned_restarts": list(self.abandoned_restarts),
            "surviving_restarts": self.surviving_restarts,
            "method": self.method,
        }


@dataclass
class _RestartOutcome:
    class_index: int | None
    restart: int
    latent: np.ndarray | None
    steps: int
    diverged_at: int | None = None


def _check_target(m: GenerativeModel, x: Tensor) -> None:
    if x.shape != m.image_shape:
        raise ShapeMismatchError(m.image_shape, x.shape, what="image shape")


def _run_restart(
    m: GenerativeModel,
    target: np.ndarray,
    metric: MetricId,
    cfg: InversionConfig,
    class_index: int | None,
    restart: int,
) -> _RestartOutcome:
    rng = Rng(cfg.seed).child(restart)
    params = {"z": rng.normal(m.d_z)}
    adam = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best_loss = math.inf
    best_z: np.ndarray | None = None

    def loss_grad(image: np.ndarray) -> np.ndarray:
        return distance_gradient_array(metric, image, target)

    steps = 0
    for step in range(cfg.steps_per_restart + 1):
        image, grad = m.forward_and_gradient(params["z"], class_index, loss_grad)
        loss = distance_array(metric, image, target)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            return _RestartOutcome(class_index, restart, None, steps, diverged_at=step)
        if loss < best_loss:
            best_loss = loss
            best_z = params["z"].copy()
        # the extra iteration only scores the last update
        if loss <= cfg.early_stop_loss or step == cfg.steps_per_restart:
            break
        adam.step(params, {"z": grad})
        steps += 1
    return _RestartOutcome(class_index, restart, best_z, steps)


def reverse_engineer(
    m: GenerativeModel,
    x: Tensor,
    metric: MetricId | str = MetricId.MSE,
    cfg: InversionConfig | None = None,
    num_workers: int = 1,
) -> InversionResult:
    if not m.differentiable:
        raise UnsupportedArchitectureError(f"{m.architecture} 模型不可微，请使用 exhaustive_invert")
    _check_target(m, x)
    metric = MetricId.parse(metric)
    cfg = cfg or InversionConfig()
    target = x.numpy()
    started = time.perf_counter()

    classes = list(range(m.num_classes)) if m.conditional else [None]
    tasks = [(c, r) for c in classes for r in range(cfg.restarts)]
    if num_workers > 1:
        with ThreadPoolExecutor(num_workers) as executor:
            outcomes = list(executor.map(lambda t: _run_restart(m, target, metric, cfg, *t), tasks))
    else:
        outcomes = [_run_restart(m, target, metric, cfg, c, r) for c, r in tasks]

    best: tuple[float, ModelInput] | None = None
    losses: list[float] = []
    abandoned: list[int] = []
    for i, out in enumerate(outcomes):
        if out.latent is None:
            logger.warning(
                f"restart {out.restart} (class {out.class_index}) abandoned: non-finite loss at step {out.diverged_at}"
            )
            abandoned.append(i)
            continue
        candidate = ModelInput(Tensor(out.latent), out.class_index)
        # scored through the public float32 path so best_loss == distance(forward(best_input), x)
        loss = distance(metric, m.forward(candidate), x)
        losses.append(loss)
        if best is None or loss < best[0]:
            best = (loss, candidate)
    if best is None:
        raise ArithmeticError(f"all {len(outcomes)} restarts diverged while inverting {m.model_id}")

    return InversionResult(
        best_input=best[1],
        best_loss=best[0],
        per_restart_losses=losses,
        steps_used=sum(o.steps for o in outcomes),
        wall_time=time.perf_counter() - started,
        abandoned_restarts=abandoned,
        method="adam",
    )


def exhaustive_invert(m: GenerativeModel, x: Tensor, metric: MetricId | str = MetricId.MSE) -> InversionResult:
    if not isinstance(m, GridToyModel):
        raise UnsupportedArchitectureError(f"exhaustive_invert 只支持可枚举的 grid 模型，得到 {m.architecture}")
    _check_target(m, x)
    metric = MetricId.parse(metric)
    started = time.perf_counter()
    target = x.numpy()
    losses = [distance_array(metric, m.codebook[k], target) for k in range(m.size)]
    k = int(np.argmin(losses))
    best_input = ModelInput(Tensor([float(k)]))
    best_loss = distance(metric, m.forward(best_input), x)
    return InversionResult(
        best_input=best_input,
        best_loss=best_loss,
        per_restart_losses=[best_loss],
        steps_used=m.size,
        wall_time=time.perf_counter() - started,
        method="exhaustive",
    )


def invert(
    m: GenerativeModel,
    x: Tensor,
    metric: MetricId | str = MetricId.MSE,
    cfg: InversionConfig | None = None,
    num_workers: int = 1,
) -> InversionResult:
    if isinstance(m, GridToyModel):
        return exhaustive_invert(m, x, metric)
    return reverse_engineer(m, x, metric, cfg, num_workers)
