"""
Belonging inference for a white-box generative model.

Offline: generate N images from the model, reverse-engineer each one on the model and on a
reference model, and keep mean/std of the calibrated losses (cached on disk).
Online: reverse-engineer the examined image on both models, calibrate, and run the one-sided
Grubbs test against the cached distribution.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from loguru import logger
from tqdm import tqdm

from inversion import InversionConfig, InversionResult, invert
from models.decoders import GenerativeModel, GridToyModel
from models.training import sample_inputs
from util.dist_cache import DistributionCache
from util.errors import DistributionMismatchError, ShapeMismatchError, UnsupportedArchitectureError
from util.metrics import MetricId
from util.stats import BelongingDistribution, Decision, grubbs_decide
from util.tensor_core import Rng, Tensor

EPS_REF = 1e-9
EXACT_TOLERANCE = 1e-12
UNCALIBRATED_REFERENCE = "uncalibrated"


def calibrate(raw: float, reference: float) -> float:
    if raw < 0 or reference < 0:
        raise ValueError(f"重建损失必须非负：raw={raw}, reference={reference}")
    return raw / max(reference, EPS_REF)


@dataclass
class AttributionVerdict:
    examined_id: str
    model_id: str
    reference_id: str
    raw_loss: float
    reference_loss: float | None
    calibrated_loss: float
    z_statistic: float | None
    threshold: float
    decision: Decision
    metric: str
    alpha: float
    n: int
    mu: float | None = None
    sigma: float | None = None
    inversion_config: dict = field(default_factory=dict)
    calibrated: bool = True
    wall_time: float = 0.0
    best_input: dict | None = None

    @property
    def is_belonging(self) -> bool:
        return self.decision is Decision.BELONGING

    def to_dict(self) -> dict:
        return {
            "examined_id": self.examined_id,
            "model_id": self.model_id,
            "reference_id": self.reference_id,
            "raw_loss": self.raw_loss,
            "reference_loss": self.reference_loss,
            "calibrated_loss": self.calibrated_loss,
            "z_statistic": self.z_statistic,
            "threshold": self.threshold,
            "decision": self.decision.value,
            "metric": self.metric,
            "alpha": self.alpha,
            "n": self.n,
            "mu": self.mu,
            "sigma": self.sigma,
            "inversion_config": self.inversion_config,
            "calibrated": self.calibrated,
            "wall_time": self.wall_time * 1000.0,
            "best_input": self.best_input,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


class OriginAttribution:
    def __init__(
        self,
        model: GenerativeModel,
        reference: GenerativeModel | None,
        metric: MetricId | str = MetricId.MSE,
        inversion_config: InversionConfig | None = None,
        alpha: float = 0.05,
        n: int = 100,
        sample_seed: int = 0,
        cache_dir: str | Path | None = None,
        num_workers: int = 1,
        calibrated: bool = True,
        record_timing: bool = True,
        progress: bool = True,
    ):
        if calibrated and reference is None:
            raise ValueError("校准模式需要 reference 模型")
        if calibrated and reference.image_shape != model.image_shape:
            raise ShapeMismatchError(model.image_shape, reference.image_shape, what="reference image shape")
        if n < 3:
            raise ValueError(f"n 必须 >= 3：{n}")
        self.model = model
        self.reference = reference if calibrated else None
        self.metric = MetricId.parse(metric)
        self.inversion_config = inversion_config or InversionConfig()
        self.alpha = float(alpha)
        self.n = int(n)
        self.sample_seed = int(sample_seed)
        self.cache = DistributionCache(Path(cache_dir)) if cache_dir else None
        self.num_workers = max(1, int(num_workers))
        self.calibrated = calibrated
        self.record_timing = record_timing
        self.progress = progress

    @property
    def reference_id(self) -> str:
        return self.reference.model_id if self.reference is not None else UNCALIBRATED_REFERENCE

    @property
    def config_hash(self) -> str:
        return self.inversion_config.config_hash()

    def _invert(self, m: GenerativeModel, x: Tensor) -> InversionResult:
        return invert(m, x, self.metric, self.inversion_config)

    def score(self, x: Tensor) -> tuple[InversionResult, InversionResult | None, float]:
        """(target inversion, reference inversion, calibrated or raw loss)."""
        raw = self._invert(self.model, x)
        if self.reference is None:
            return raw, None, raw.best_loss
        ref = self._invert(self.reference, x)
        return raw, ref, calibrate(raw.best_loss, ref.best_loss)

    def _map(self, fn, items: list, desc: str) -> list:
        results: list = [None] * len(items)
        with ThreadPoolExecutor(self.num_workers) as executor:
            futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
            for future in tqdm(
                as_completed(futures), total=len(futures), desc=desc, unit="image", disable=not self.progress
            ):
                results[futures[future]] = future.result()
        return results

    def estimate_belonging_distribution(self, rng: Rng | None = None, force: bool = False) -> BelongingDistribution:
        rng = rng or Rng(self.sample_seed)
        if self.cache and not force:
            cached = self.cache.load(self.model.model_id, self.reference_id, self.metric.value, self.config_hash)
            if cached and (cached.n, cached.alpha, cached.calibrated, cached.sample_seed) == (
                self.n,
                self.alpha,
                self.calibrated,
                rng.seed,
            ):
                logger.info(f"belonging distribution cache hit: {self.model.model_id} / {self.reference_id}")
                return cached

        inputs = sample_inputs(self.model, self.n, rng)
        images = [self.model.forward(i) for i in inputs]
        scores = self._map(lambda x: self.score(x)[2], images, f"Belonging distribution {self.model.model_id}")
        dist = BelongingDistribution.from_losses(
            scores,
            model_id=self.model.model_id,
            reference_id=self.reference_id,
            metric=self.metric.value,
            alpha=self.alpha,
            inversion_config_hash=self.config_hash,
            calibrated=self.calibrated,
            sample_seed=rng.seed,
        )
        logger.info(f"{self.model.model_id}: mu={dist.mu:.6g} sigma={dist.sigma:.6g} over N={dist.n}")
        if self.cache:
            path = self.cache.save(dist)
            logger.info(f"belonging distribution saved to {path}")
        return dist

    def _check_distribution(self, dist: BelongingDistribution) -> None:
        expected = (self.model.model_id, self.reference_id, self.metric.value, self.config_hash, self.calibrated)
        actual = (dist.model_id, dist.reference_id, dist.metric, dist.inversion_config_hash, dist.calibrated)
        if expected != actual:
            raise DistributionMismatchError(
                f"belonging distribution does not match this attribution setup: expected {expected}, got {actual}"
            )

    def _verdict(self, examined_id, raw, ref, loss, record_kwargs: dict, started: float) -> AttributionVerdict:
        return AttributionVerdict(
            examined_id=examined_id,
            model_id=self.model.model_id,
            reference_id=self.reference_id,
            raw_loss=raw.best_loss,
            reference_loss=None if ref is None else ref.best_loss,
            calibrated_loss=loss,
            metric=self.metric.value,
            inversion_config=self.inversion_config.to_dict(),
            calibrated=self.calibrated,
            wall_time=time.perf_counter() - started if self.record_timing else 0.0,
            best_input=raw.best_input.to_dict(),
            **record_kwargs,
        )

    def attribute(self, dist: BelongingDistribution, x: Tensor, examined_id: str = "") -> AttributionVerdict:
        self._check_distribution(dist)
        if x.shape != self.model.image_shape:
            raise ShapeMismatchError(self.model.image_shape, x.shape, what="examined image shape")
        started = time.perf_counter()
        raw, ref, loss = self.score(x)
        record = grubbs_decide(loss, dist)
        return self._verdict(
            examined_id,
            raw,
            ref,
            loss,
            {
                "z_statistic": record.z,
                "threshold": record.threshold,
                "decision": record.decision,
                "alpha": record.alpha,
                "n": record.n,
                "mu": record.mu,
                "sigma": record.sigma,
            },
            started,
        )

    def attribute_exact(self, x: Tensor, examined_id: str = "") -> AttributionVerdict:
        """
        Enumerable models: belonging iff the exhaustive reconstruction loss is (numerically) zero.
        Only the target is inverted; the verdict carries reference_loss=None and calibrated_loss=raw_loss.
        """
        if not isinstance(self.model, GridToyModel):
            raise UnsupportedArchitectureError("attribute_exact 只适用于 grid 模型")
        if x.shape != self.model.image_shape:
            raise ShapeMismatchError(self.model.image_shape, x.shape, what="examined image shape")
        started = time.perf_counter()
        raw = self._invert(self.model, x)
        decision = Decision.BELONGING if raw.best_loss <= EXACT_TOLERANCE else Decision.NON_BELONGING
        return self._verdict(
            examined_id,
            raw,
            None,
            raw.best_loss,
            {
                "z_statistic": None,
                "threshold": EXACT_TOLERANCE,
                "decision": decision,
                "alpha": self.alpha,
                "n": self.n,
            },
            started,
        )

    def attribute_many(
        self, dist: BelongingDistribution | None, probes: list[tuple[str, Tensor]], desc: str = "Attributing"
    ) -> list[AttributionVerdict]:
        if dist is None:
            return self._map(lambda p: self.attribute_exact(p[1], p[0]), probes, desc)
        self._check_distribution(dist)
        return self._map(lambda p: self.attribute(dist, p[1], p[0]), probes, desc)


def estimate_belonging_distribution(
    m: GenerativeModel,
    m_ref: GenerativeModel,
    metric: MetricId | str = MetricId.MSE,
    cfg: InversionConfig | None = None,
    n: int = 100,
    alpha: float = 0.05,
    rng: Rng | None = None,
    cache_dir: str | Path | None = None,
    num_workers: int = 1,
) -> BelongingDistribution:
    oa = OriginAttribution(m, m_ref, metric, cfg, alpha, n, cache_dir=cache_dir, num_workers=num_workers, progress=False)
    return oa.estimate_belonging_distribution(rng)


def attribute(
    m: GenerativeModel,
    m_ref: GenerativeModel,
    dist: BelongingDistribution,
    x: Tensor,
    metric: MetricId | str = MetricId.MSE,
    cfg: InversionConfig | None = None,
    examined_id: str = "",
) -> AttributionVerdict:
    oa = OriginAttribution(m, m_ref, metric, cfg, dist.alpha, dist.n, progress=False)
    return oa.attribute(dist, x, examined_id)
