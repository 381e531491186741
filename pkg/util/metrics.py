"""
Reconstruction-loss metrics. Lower is better for all of them; SSIM is exposed as 1 - SSIM.

The *_array functions work on float64 ndarrays and are what the optimizers call; distance()
and distance_gradient() are the Tensor-level surface.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from util.errors import ShapeMismatchError
from util.tensor_core import Tensor

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class MetricId(str, Enum):
    MSE = "mse"
    MAE = "mae"
    SSIM_DISTANCE = "ssim"

    @classmethod
    def parse(cls, value: str | MetricId) -> MetricId:
        if isinstance(value, MetricId):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"未知的 metric：{value}（可选 mse / mae / ssim）") from None


def _check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape)


def _channels(x: np.ndarray) -> np.ndarray:
    # (C, H, W) -> (C, H*W); anything else is a single channel
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1)
    return x.reshape(1, -1)


def _ssim_terms(a: np.ndarray, b: np.ndarray):
    ac, bc = _channels(a), _channels(b)
    mu_a = ac.mean(axis=1, keepdims=True)
    mu_b = bc.mean(axis=1, keepdims=True)
    da, db = ac - mu_a, bc - mu_b
    var_a = (da * da).mean(axis=1, keepdims=True)
    var_b = (db * db).mean(axis=1, keepdims=True)
    cov = (da * db).mean(axis=1, keepdims=True)
    l_num = 2.0 * mu_a * mu_b + SSIM_C1
    c_num = 2.0 * cov + SSIM_C2
    l_den = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    c_den = var_a + var_b + SSIM_C2
    s = (l_num * c_num) / (l_den * c_den)
    return s, mu_a, mu_b, da, db, l_num, c_num, l_den, c_den


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Global-window SSIM, averaged over channels."""
    _check(a, b)
    s = _ssim_terms(np.asarray(a, np.float64), np.asarray(b, np.float64))[0]
    return float(s.mean())


def distance_array(metric: MetricId, a: np.ndarray, b: np.ndarray) -> float:
    _check(a, b)
    metric = MetricId.parse(metric)
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if metric is MetricId.MSE:
        d = a - b
        return float(np.mean(d * d))
    if metric is MetricId.MAE:
        return float(np.mean(np.abs(a - b)))
    s = _ssim_terms(a, b)[0]
    return max(0.0, float(1.0 - s.mean()))


def distance_gradient_array(metric: MetricId, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check(a, b)
    metric = MetricId.parse(metric)
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    n = a.size
    if metric is MetricId.MSE:
        return 2.0 * (a - b) / n
    if metric is MetricId.MAE:
        # sign(0) == 0: subgradient at ties
        return np.sign(a - b) / n
    s, mu_a, mu_b, da, db, l_num, c_num, l_den, c_den = _ssim_terms(a, b)
    m = da.shape[1]
    ds = s * (
        2.0 * mu_b / (m * l_num)
        + 2.0 * db / (m * c_num)
        - 2.0 * mu_a / (m * l_den)
        - 2.0 * da / (m * c_den)
    )
    # distance = 1 - mean over channels
    grad = -ds / s.shape[0]
    return grad.reshape(a.shape)


def distance(metric: MetricId, a: Tensor, b: Tensor) -> float:
    return distance_array(metric, a.numpy(), b.numpy())


def distance_gradient(metric: MetricId, a: Tensor, b: Tensor) -> Tensor:
    return Tensor(distance_gradient_array(metric, a.numpy(), b.numpy()))
