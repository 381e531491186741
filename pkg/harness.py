"""
Desk-scale experiment grid.

A workdir holds the model zoo every scenario refers to:
    <workdir>/data/<name>/      synthetic datasets (util.synth layout)
    <workdir>/models/<name>/    checkpoints (models.checkpoint layout)
    <workdir>/zoo.json          what was built and with which seeds

Each scenario attributes `belonging_count` images generated by the target model (positives)
and `other_count` images from a contrast source (negatives), then writes a confusion report,
a JSONL verdict log and a summary with the loss samples.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger

from inversion import InversionConfig
from models.checkpoint import load_model, save_model
from models.decoders import GenerativeModel, GridToyModel
from models.training import TrainConfig, sample_inputs, train_decoder
from origin_attribution import AttributionVerdict, OriginAttribution
from util.errors import ArtifactMissingError, ShapeMismatchError
from util.metrics import MetricId
from util.report import ConfusionReport, emit_report
from util.synth import Dataset, SynthSpec, load_dataset, overlap_dataset, save_dataset, synth_dataset
from util.tensor_core import Rng, Tensor

SCENARIO_NAMES = (
    "vs_training_data",
    "vs_unseen_data",
    "vs_other_architecture",
    "vs_other_dataset",
    "vs_overlapping_dataset",
    "adaptive_filter",
    "calibration_ablation",
    "metric_ablation",
)
OVERLAP_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9)
# a mild edit: the filtered probe stays within a few grey levels of the generated image
FILTER_STRENGTHS = (0.05,)
REFERENCE_MODEL = "ref"
CONDITIONAL_MODEL = "mlp-cond-A"


@dataclass
class FilterParams:
    gains: tuple[float, ...]
    biases: tuple[float, ...]
    gamma: float = 1.0
    # blend weight of the filtered image over the original
    strength: float = 1.0

    def __post_init__(self):
        self.gains = tuple(float(g) for g in self.gains)
        self.biases = tuple(float(b) for b in self.biases)
        if len(self.gains) != len(self.biases):
            raise ValueError("gains 与 biases 的通道数不一致")
        if any(g <= 0 for g in self.gains):
            raise ValueError(f"gain 必须为正：{self.gains}")
        if not self.gamma > 0:
            raise ValueError(f"gamma 必须为正：{self.gamma}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength 必须在 [0, 1] 内：{self.strength}")

    @classmethod
    def identity(cls, channels: int) -> FilterParams:
        return cls((1.0,) * channels, (0.0,) * channels, 1.0)

    @classmethod
    def warm_tint(cls, channels: int, strength: float = 1.0) -> FilterParams:
        """Warm/faded look: lifted blacks, red up, blue down, slight gamma lift."""
        if channels == 1:
            return cls((1.05,), (0.03,), 0.95, strength)
        gains = (1.08, 1.0, 0.92) + (1.0,) * (channels - 3)
        biases = (0.04, 0.02, 0.0) + (0.0,) * (channels - 3)
        return cls(gains[:channels], biases[:channels], 0.95, strength)


def apply_filter(x: Tensor, params: FilterParams) -> Tensor:
    """
    clamp((gain_c * x_c + bias_c) ** gamma, 0, 1) per channel, the base clamped at 0 first, then
    blended with the original: (1 - strength) * x + strength * filtered.
    """
    if x.rank != 3:
        raise ValueError(f"滤镜需要 (C, H, W) 图像：{x.shape}")
    if len(params.gains) != x.shape[0]:
        raise ShapeMismatchError((len(params.gains),), (x.shape[0],), what="filter channel count")
    img = x.numpy()
    gains = np.asarray(params.gains)[:, None, None]
    biases = np.asarray(params.biases)[:, None, None]
    base = np.maximum(gains * img + biases, 0.0)
    filtered = np.clip(base**params.gamma, 0.0, 1.0)
    if params.strength == 1.0:
        return Tensor(filtered)
    return Tensor((1.0 - params.strength) * img + params.strength * filtered)


def separability_level(belonging_losses, other_losses) -> float:
    """Empirical P(loss(other) > loss(belonging)) over all pairs."""
    a = np.asarray(belonging_losses, dtype=np.float64)
    b = np.asarray(other_losses, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("separability 需要两组非空的损失")
    return float(np.mean(b[None, :] > a[:, None]))


@dataclass
class ZooConfig:
    image_shape: tuple[int, int, int] = (1, 8, 8)
    dataset_size: int = 256
    codebook_size: int = 64
    classes: int = 4
    d_z: int = 8
    reference_d_z: int = 16
    hidden: tuple[int, int] = (64, 64)
    reference_hidden: tuple[int, int] = (96, 96)
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    overlap_fractions: tuple[float, ...] = OVERLAP_FRACTIONS


def build_zoo(workdir: str | os.PathLike, cfg: ZooConfig | None = None, progress: bool = True) -> dict:
    cfg = cfg or ZooConfig()
    workdir = Path(workdir)
    # model ids are reused across rebuilds, so cached distributions would go stale
    shutil.rmtree(workdir / "cache", ignore_errors=True)
    s = cfg.seed
    shape = tuple(cfg.image_shape)
    specs = {
        "A": SynthSpec("gaussian-blobs", shape, cfg.classes, cfg.dataset_size, s + 1),
        "A-unseen": SynthSpec("gaussian-blobs", shape, cfg.classes, cfg.dataset_size, s + 2),
        "B": SynthSpec("striped-patterns", shape, cfg.classes, cfg.dataset_size, s + 3),
        "ref": SynthSpec("mixed", shape, cfg.classes, cfg.dataset_size, s + 4),
        "M": SynthSpec("mixed", shape, cfg.classes, cfg.dataset_size, s + 5),
        "A-codebook": SynthSpec("gaussian-blobs", shape, cfg.classes, cfg.codebook_size, s + 6),
    }
    datasets: dict[str, Dataset] = {}
    for name, spec in specs.items():
        datasets[name] = synth_dataset(spec)
        save_dataset(datasets[name], workdir / "data" / name)
    for f in cfg.overlap_fractions:
        fresh = SynthSpec("gaussian-blobs", shape, cfg.classes, cfg.dataset_size, s + 100 + int(round(f * 100)))
        name = f"A-overlap-{f:g}"
        datasets[name] = overlap_dataset(datasets["A"], f, fresh, dataset_id=name)
        save_dataset(datasets[name], workdir / "data" / name)

    def train(name: str, data: str, architecture: str, d_z: int, hidden, seed: int, num_classes: int | None) -> None:
        tc = TrainConfig(architecture, d_z, shape, num_classes, tuple(hidden), model_id=name)
        m = train_decoder(tc, datasets[data], Rng(seed), cfg.epochs, cfg.learning_rate, progress=progress)
        save_model(m, workdir / "models" / name)

    # name: (dataset, architecture, d_z, hidden, seed, num_classes)
    models = {
        "mlp-A": ("A", "mlp", cfg.d_z, cfg.hidden, s + 11, None),
        "linear-A": ("A", "linear", cfg.d_z, cfg.hidden, s + 12, None),
        "mlp-B": ("B", "mlp", cfg.d_z, cfg.hidden, s + 13, None),
        "mlp-M": ("M", "mlp", cfg.d_z, cfg.hidden, s + 14, None),
        "grid-A": ("A-codebook", "grid", 1, cfg.hidden, s + 15, None),
        REFERENCE_MODEL: ("ref", "mlp", cfg.reference_d_z, cfg.reference_hidden, s + 16, None),
        CONDITIONAL_MODEL: ("A", "mlp", cfg.d_z, cfg.hidden, s + 18, cfg.classes),
    }
    for f in cfg.overlap_fractions:
        models[f"mlp-overlap-{f:g}"] = (f"A-overlap-{f:g}", "mlp", cfg.d_z, cfg.hidden, s + 17, None)
    for name, spec in models.items():
        train(name, *spec)

    manifest = {
        "config": {**cfg.__dict__, "image_shape": list(shape), "hidden": list(cfg.hidden)},
        "datasets": {k: v.dataset_id for k, v in datasets.items()},
        "models": {k: {"data": v[0], "architecture": v[1], "num_classes": v[5]} for k, v in models.items()},
    }
    (workdir / "zoo.json").write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    logger.info(f"model zoo ready under {workdir} ({len(datasets)} datasets, {len(models)} models)")
    return manifest


@dataclass
class Scenario:
    name: str
    target: str = "mlp-A"
    contrast: str = "data:A"
    belonging_count: int = 100
    other_count: int = 100
    fractions: tuple[float, ...] = OVERLAP_FRACTIONS
    strengths: tuple[float, ...] = FILTER_STRENGTHS
    metrics: tuple[str, ...] = ("mse", "mae", "ssim")
    min_acc: float | None = None

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise ValueError(f"未知的场景：{self.name}（可选 {', '.join(SCENARIO_NAMES)}）")
        if self.belonging_count < 1 or self.other_count < 1:
            raise ValueError("belonging_count / other_count 必须 >= 1")
        if not self.strengths or any(not 0.0 <= s <= 1.0 for s in self.strengths):
            raise ValueError(f"滤镜强度必须在 [0, 1] 内：{self.strengths}")
        kind, _, ref = self.contrast.partition(":")
        if kind not in ("data", "model") or not ref:
            raise ValueError(f"contrast 必须形如 data:<name> 或 model:<name>：{self.contrast}")


# defaults per scenario; contrast "model:mlp-overlap-{f}" is expanded per fraction
DEFAULT_SCENARIOS: dict[str, dict] = {
    "vs_training_data": {"contrast": "data:A", "min_acc": 0.90},
    "vs_unseen_data": {"contrast": "data:A-unseen", "min_acc": 0.90},
    "vs_other_architecture": {"contrast": "model:linear-A", "min_acc": 0.85},
    "vs_other_dataset": {"contrast": "model:mlp-B", "min_acc": 0.85},
    "vs_overlapping_dataset": {"contrast": "model:mlp-overlap-{f}", "min_acc": None},
    "adaptive_filter": {"contrast": "data:A", "min_acc": 0.75},
    "calibration_ablation": {"target": "mlp-M", "contrast": "data:M", "min_acc": None},
    "metric_ablation": {"contrast": "data:A", "min_acc": None},
}


def default_scenario(name: str, **overrides) -> Scenario:
    if name not in DEFAULT_SCENARIOS:
        raise ValueError(f"未知的场景：{name}（可选 {', '.join(SCENARIO_NAMES)}）")
    params = dict(DEFAULT_SCENARIOS[name])
    params.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(name=name, **params)


@dataclass
class HarnessConfig:
    workdir: Path = Path("workspace")
    out: Path = Path("results")
    cache_dir: Path | None = None
    metric: str = "mse"
    alpha: float = 0.05
    n: int = 100
    inversion: InversionConfig = field(default_factory=InversionConfig)
    seed: int = 0
    num_workers: int = 1
    record_timing: bool = True
    progress: bool = True

    def __post_init__(self):
        self.workdir = Path(self.workdir)
        self.out = Path(self.out)
        if self.cache_dir is None:
            self.cache_dir = self.workdir / "cache"
        self.cache_dir = Path(self.cache_dir)


@dataclass
class ScenarioOutcome:
    report: ConfusionReport
    verdicts: list[AttributionVerdict]
    labels: list[bool]
    separability: float
    calibrated_separability: float
    min_acc: float | None = None

    def summary(self) -> dict:
        pairs = list(zip(self.verdicts, self.labels, strict=True))
        return {
            "report": self.report.to_dict(),
            "separability": self.separability,
            "calibrated_separability": self.calibrated_separability,
            "min_acc": self.min_acc,
            "meets_min_acc": None if self.min_acc is None else self.report.acc >= self.min_acc,
            "belonging_losses": [v.calibrated_loss for v, y in pairs if y],
            "other_losses": [v.calibrated_loss for v, y in pairs if not y],
            "belonging_raw_losses": [v.raw_loss for v, y in pairs if y],
            "other_raw_losses": [v.raw_loss for v, y in pairs if not y],
        }


class ScenarioRunner:
    def __init__(self, cfg: HarnessConfig):
        self.cfg = cfg
        self._models: dict[str, GenerativeModel] = {}
        self._datasets: dict[str, Dataset] = {}

    def model(self, name: str) -> GenerativeModel:
        if name not in self._models:
            path = self.cfg.workdir / "models" / name
            if not path.exists():
                raise ArtifactMissingError(path, "model checkpoint (run `prepare-zoo` or `train` first)")
            self._models[name] = load_model(path)
        return self._models[name]

    def dataset(self, name: str) -> Dataset:
        if name not in self._datasets:
            path = self.cfg.workdir / "data" / name
            if not path.exists():
                raise ArtifactMissingError(path, "dataset (run `prepare-zoo` or `synth-data` first)")
            self._datasets[name] = load_dataset(path)
        return self._datasets[name]

    def belonging_probes(self, m: GenerativeModel, count: int, tag: str) -> list[tuple[str, Tensor]]:
        inputs = sample_inputs(m, count, Rng(self.cfg.seed).child(1))
        return [(f"{tag}/{m.model_id}/{i}", m.forward(inp)) for i, inp in enumerate(inputs)]

    def contrast_probes(self, contrast: str, count: int) -> list[tuple[str, Tensor]]:
        kind, _, name = contrast.partition(":")
        if kind == "model":
            return self.belonging_probes(self.model(name), count, "other")
        ds = self.dataset(name)
        order = Rng(self.cfg.seed).child(2).permutation(len(ds))[:count]
        if count > len(ds):
            logger.warning(f"dataset {name} has only {len(ds)} images, using all of them")
        return [(f"data/{ds.dataset_id}/{int(i)}", ds.image(int(i))) for i in order]

    def evaluate(
        self,
        name: str,
        target: GenerativeModel,
        positives: list[tuple[str, Tensor]],
        negatives: list[tuple[str, Tensor]],
        metric: str | None = None,
        calibrated: bool = True,
        min_acc: float | None = None,
    ) -> ScenarioOutcome:
        reference = self.model(REFERENCE_MODEL) if calibrated else None
        oa = OriginAttribution(
            target,
            reference,
            metric or self.cfg.metric,
            self.cfg.inversion,
            self.cfg.alpha,
            self.cfg.n,
            sample_seed=self.cfg.seed,
            cache_dir=self.cfg.cache_dir,
            num_workers=self.cfg.num_workers,
            calibrated=calibrated,
            record_timing=self.cfg.record_timing,
            progress=self.cfg.progress,
        )
        # enumerable targets are decided exactly; their belonging distribution is degenerate
        dist = None if isinstance(target, GridToyModel) else oa.estimate_belonging_distribution()
        verdicts = oa.attribute_many(dist, positives + negatives, desc=name)
        labels = [True] * len(positives) + [False] * len(negatives)
        mean_ms = float(np.mean([v.wall_time for v in verdicts])) * 1000.0 if self.cfg.record_timing else 0.0
        report = ConfusionReport.from_labels(name, labels, [v.is_belonging for v in verdicts], mean_ms)
        pos, neg = verdicts[: len(positives)], verdicts[len(positives) :]
        # lambda is defined on raw reconstruction losses; the calibrated one is reported alongside
        sep = separability_level([v.raw_loss for v in pos], [v.raw_loss for v in neg])
        cal_sep = separability_level([v.calibrated_loss for v in pos], [v.calibrated_loss for v in neg])
        logger.info(
            f"{name}: TP={report.tp} FP={report.fp} FN={report.fn} TN={report.tn} "
            f"acc={report.acc:.3f} separability={sep:.3f} (calibrated {cal_sep:.3f}) mean_ms={report.mean_ms:.1f}"
        )
        if min_acc is not None and report.acc < min_acc:
            logger.warning(f"{name}: accuracy {report.acc:.3f} below the desk-scale bound {min_acc}")
        return ScenarioOutcome(report, verdicts, labels, sep, cal_sep, min_acc)

    def run(self, s: Scenario) -> list[ScenarioOutcome]:
        target = self.model(s.target)
        positives = self.belonging_probes(target, s.belonging_count, "belonging")

        if s.name == "vs_overlapping_dataset":
            outcomes = []
            for f in s.fractions:
                contrast = s.contrast.replace("{f}", f"{f:g}")
                negatives = self.contrast_probes(contrast, s.other_count)
                outcomes.append(self.evaluate(f"{s.name}@{f:g}", target, positives, negatives, min_acc=s.min_acc))
            return outcomes

        negatives = self.contrast_probes(s.contrast, s.other_count)
        if s.name == "adaptive_filter":
            outcomes = []
            for strength in s.strengths:
                params = FilterParams.warm_tint(target.image_shape[0], strength)
                filtered = [(f"{pid}+filter@{strength:g}", apply_filter(x, params)) for pid, x in positives]
                outcomes.append(
                    self.evaluate(f"{s.name}@{strength:g}", target, filtered, negatives, min_acc=s.min_acc)
                )
            return outcomes
        if s.name == "calibration_ablation":
            return [
                self.evaluate(f"{s.name}/with_calibration", target, positives, negatives, calibrated=True),
                self.evaluate(f"{s.name}/without_calibration", target, positives, negatives, calibrated=False),
            ]
        if s.name == "metric_ablation":
            return [
                self.evaluate(f"{s.name}/{MetricId.parse(m).value}", target, positives, negatives, metric=m)
                for m in s.metrics
            ]
        return [self.evaluate(s.name, target, positives, negatives, min_acc=s.min_acc)]

    def write(self, s: Scenario, outcomes: list[ScenarioOutcome]) -> Path:
        out_dir = self.cfg.out / s.name
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "verdicts.jsonl", "w", encoding="utf-8") as f:
            for outcome in outcomes:
                for v, y in zip(outcome.verdicts, outcome.labels, strict=True):
                    record = v.to_dict()
                    record["scenario"] = outcome.report.scenario
                    record["label"] = "belonging" if y else "non-belonging"
                    f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        summary = {
            "scenario": s.name,
            "target": s.target,
            "contrast": s.contrast,
            "outcomes": [o.summary() for o in outcomes],
        }
        (out_dir / "summary.json").write_text(
            json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        reports = [o.report for o in outcomes]
        emit_report(reports, out_dir / "report.csv", "csv")
        emit_report(reports, out_dir / "report.json", "json")
        return out_dir


def run_scenario(s: Scenario, cfg: HarnessConfig) -> list[ScenarioOutcome]:
    runner = ScenarioRunner(cfg)
    outcomes = runner.run(s)
    out_dir = runner.write(s, outcomes)
    logger.info(f"{s.name}: reports written to {out_dir}")
    return outcomes
