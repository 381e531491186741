"""
Synthetic image datasets (desk-scale stand-ins for real image corpora).

Every image i is drawn from the child stream rng.child(i), so a spec always produces the same
images and any subset can be regenerated independently.

Dataset directory layout:
    manifest.json   dataset_id, kind, image_shape, classes, count, seed, labels, sources
    images.bin      one RNTZ tensor of shape (count, C, H, W)
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from util.errors import ArtifactMissingError
from util.tensor_core import Rng, Tensor, read_tensor, write_tensor

KINDS = ("gaussian-blobs", "striped-patterns", "mixed")


@dataclass
class SynthSpec:
    kind: str = "gaussian-blobs"
    image_shape: tuple[int, int, int] = (1, 8, 8)
    classes: int = 4
    count: int = 256
    seed: int = 0

    def __post_init__(self):
        self.image_shape = tuple(int(s) for s in self.image_shape)
        if self.kind not in KINDS:
            raise ValueError(f"未知的数据集类型：{self.kind}（可选 {', '.join(KINDS)}）")
        if len(self.image_shape) != 3 or any(s < 1 for s in self.image_shape):
            raise ValueError(f"非法的 image_shape：{self.image_shape}")
        if self.count < 1:
            raise ValueError(f"count 必须 >= 1：{self.count}")
        if self.classes < 1:
            raise ValueError(f"classes 必须 >= 1：{self.classes}")

    @property
    def dataset_id(self) -> str:
        c, h, w = self.image_shape
        return f"{self.kind}-{c}x{h}x{w}-c{self.classes}-n{self.count}-s{self.seed}"


@dataclass
class Dataset:
    dataset_id: str
    images: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4:
            raise ValueError(f"images 必须是 (N, C, H, W)：{self.images.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.images.shape[0],):
                raise ValueError("labels 与 images 数量不一致")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.images.shape[1:])

    def image(self, i: int) -> Tensor:
        return Tensor(self.images[i])

    def label(self, i: int) -> int | None:
        return None if self.labels is None else int(self.labels[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self.image(i), self.label(i)


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return ys, xs


def _blob_image(rng: Rng, shape, label: int, classes: int) -> np.ndarray:
    c, h, w = shape
    ys, xs = _grid(h, w)
    angle = 2.0 * np.pi * label / classes
    cy = (h - 1) / 2 + 0.25 * h * np.sin(angle) + rng.normal(None) * 0.6
    cx = (w - 1) / 2 + 0.25 * w * np.cos(angle) + rng.normal(None) * 0.6
    sigma = rng.uniform(0.8, 2.0)
    amp = rng.uniform(0.6, 1.0)
    background = rng.uniform(0.0, 0.15)
    blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2))
    # weaker second blob anywhere in the frame
    sy, sx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
    s_sigma = rng.uniform(0.6, 1.5)
    s_amp = rng.uniform(0.0, 0.4)
    blob2 = np.exp(-((ys - sy) ** 2 + (xs - sx) ** 2) / (2.0 * s_sigma**2))
    tint = rng.uniform(0.5, 1.0, c)
    img = background + tint[:, None, None] * (amp * blob + s_amp * blob2)[None]
    return np.clip(img, 0.0, 1.0)


def _stripe_image(rng: Rng, shape, label: int, classes: int) -> np.ndarray:
    c, h, w = shape
    ys, xs = _grid(h, w)
    theta = np.pi * label / classes + rng.uniform(-0.15, 0.15)
    freq = rng.uniform(0.6, 1.6)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    contrast = rng.uniform(0.5, 1.0)
    wave = np.sin(freq * (xs * np.cos(theta) + ys * np.sin(theta)) + phase)
    tint = rng.uniform(0.7, 1.0, c)
    img = 0.5 + 0.45 * contrast * tint[:, None, None] * wave[None]
    return np.clip(img, 0.0, 1.0)


def synth_dataset(spec: SynthSpec) -> Dataset:
    root = Rng(spec.seed)
    images = np.empty((spec.count, *spec.image_shape), dtype=np.float32)
    labels = np.empty(spec.count, dtype=np.int64)
    for i in range(spec.count):
        rng = root.child(i)
        label = int(rng.integers(0, spec.classes))
        kind = spec.kind
        if kind == "mixed":
            kind = "gaussian-blobs" if rng.uniform(0.0, 1.0) < 0.5 else "striped-patterns"
        maker = _blob_image if kind == "gaussian-blobs" else _stripe_image
        images[i] = maker(rng, spec.image_shape, label, spec.classes)
        labels[i] = label
    meta = asdict(spec)
    meta["image_shape"] = list(spec.image_shape)
    return Dataset(spec.dataset_id, images, labels, meta)


def overlap_dataset(base: Dataset, fraction: float, fresh: SynthSpec, dataset_id: str | None = None) -> Dataset:
    """len(base) images: round(fraction * n) drawn from base, the rest fresh from `fresh`."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"overlap fraction 必须在 [0, 1]：{fraction}")
    n = len(base)
    shared = int(round(fraction * n))
    order = Rng(fresh.seed).child(0xF00D).permutation(n)[:shared]
    parts = [base.images[np.sort(order)]]
    label_parts = [base.labels[np.sort(order)] if base.labels is not None else np.zeros(shared, np.int64)]
    if n - shared > 0:
        extra = synth_dataset(
            SynthSpec(fresh.kind, fresh.image_shape, fresh.classes, n - shared, fresh.seed)
        )
        parts.append(extra.images)
        label_parts.append(extra.labels)
    meta = dict(base.meta)
    meta.update({"overlap_fraction": fraction, "base": base.dataset_id, "fresh_seed": fresh.seed})
    return Dataset(
        dataset_id or f"{base.dataset_id}-overlap{fraction:g}-s{fresh.seed}",
        np.concatenate(parts),
        np.concatenate(label_parts),
        meta,
    )


def shared_images(a: Dataset, b: Dataset) -> int:
    keys = {img.tobytes() for img in a.images}
    return sum(1 for img in b.images if img.tobytes() in keys)


def save_dataset(ds: Dataset, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "images.bin", "wb") as f:
        write_tensor(Tensor(ds.images), f)
    manifest = {
        "dataset_id": ds.dataset_id,
        "image_shape": list(ds.image_shape),
        "count": len(ds),
        "labels": None if ds.labels is None else ds.labels.tolist(),
        "meta": ds.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return directory


def load_dataset(directory: str | os.PathLike) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    images_path = directory / "images.bin"
    for p in (manifest_path, images_path):
        if not p.exists():
            raise ArtifactMissingError(p, "dataset file")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    with open(images_path, "rb") as f:
        images = read_tensor(f).data
    return Dataset(manifest["dataset_id"], images, manifest.get("labels"), manifest.get("meta") or {})
