"""
Checkpoint = directory with manifest.json + weights.bin.

weights.bin is the named parameter tensors concatenated in manifest order, each one a
complete RNTZ record.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from models.decoders import MODEL_CLASSES, GenerativeModel, GridToyModel, TrainingMeta
from util.errors import ArtifactMissingError, TensorFormatError
from util.tensor_core import Tensor, read_tensor, write_tensor


def save_model(m: GenerativeModel, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    order = m.parameter_order()
    manifest = m.describe()
    manifest["parameters"] = [{"name": n, "shape": list(m.parameters[n].shape)} for n in order]
    manifest["training_meta"] = m.training_meta.to_dict()
    with open(directory / "weights.bin", "wb") as f:
        for name in order:
            write_tensor(Tensor(m.parameters[name]), f)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return directory


def load_model(directory: str | os.PathLike) -> GenerativeModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    weights_path = directory / "weights.bin"
    for p in (manifest_path, weights_path):
        if not p.exists():
            raise ArtifactMissingError(p, "checkpoint file")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    architecture = manifest["architecture"]
    if architecture not in MODEL_CLASSES:
        raise ValueError(f"checkpoint {directory} 的模型结构未知：{architecture}")

    params = {}
    with open(weights_path, "rb") as f:
        for entry in manifest["parameters"]:
            t = read_tensor(f)
            if list(t.shape) != list(entry["shape"]):
                raise TensorFormatError(f"parameter {entry['name']}: shape {t.shape} != manifest {entry['shape']}")
            params[entry["name"]] = t.data
        if f.read(1):
            raise TensorFormatError(f"trailing bytes in {weights_path}")

    meta = TrainingMeta.from_dict(manifest.get("training_meta"))
    if architecture == "grid":
        return GridToyModel(manifest["model_id"], params["codebook"], meta)
    return MODEL_CLASSES[architecture](
        manifest["model_id"],
        manifest["d_z"],
        tuple(manifest["image_shape"]),
        params,
        manifest.get("num_classes"),
        meta,
        manifest.get("output_activation", "sigmoid"),
    )
