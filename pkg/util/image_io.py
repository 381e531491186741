from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from util.errors import ArtifactMissingError, ShapeMismatchError
from util.tensor_core import Tensor, read_tensor, write_tensor


def save_tensor(t: Tensor, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        write_tensor(t, f)
    return path


def load_tensor(path: str | os.PathLike) -> Tensor:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(path, "tensor file")
    with open(path, "rb") as f:
        return read_tensor(f)


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pnm(images: list[Tensor], path: str | os.PathLike, gap: int = 1) -> Path:
    """
    Binary PGM (1 channel) or PPM (3 channels); several images are placed side by side with a
    white gap column between them.
    """
    if not images:
        raise ValueError("至少需要一张图像")
    shape = images[0].shape
    if len(shape) != 3 or shape[0] not in (1, 3):
        raise ValueError(f"PGM/PPM 只支持 (1|3, H, W) 图像：{shape}")
    for img in images[1:]:
        if img.shape != shape:
            raise ShapeMismatchError(shape, img.shape)
    c, h, w = shape
    spacer = np.ones((c, h, gap))
    parts = []
    for i, img in enumerate(images):
        if i:
            parts.append(spacer)
        parts.append(img.numpy())
    canvas = to_bytes(np.concatenate(parts, axis=2))
    width = canvas.shape[2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if c == 1:
        header = f"P5\n{width} {h}\n255\n".encode("ascii")
        body = canvas[0].tobytes()
    else:
        header = f"P6\n{width} {h}\n255\n".encode("ascii")
        body = np.transpose(canvas, (1, 2, 0)).tobytes()
    path.write_bytes(header + body)
    return path
