"""
Student-t machinery and the one-sided Grubbs test used for the belonging decision.

H0: x is a non-belonging. H0 is rejected (x is a belonging) when

    (A' - mu) / sigma  <  (N-1)/sqrt(N) * sqrt(t^2 / (N-2 + t^2)),   t = t_{1-alpha/N, N-2}

mu and sigma come from the N generated belongings only; the examined image is not pooled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from util.errors import DegenerateDistributionError

BETA_CF_TOL = 1e-12
BETA_CF_MAX_ITER = 10_000
QUANTILE_TOL = 1e-12
_TINY = 1e-300


def _check_nu(nu: float) -> float:
    nu = float(nu)
    if not nu >= 1.0:
        raise ValueError(f"自由度 nu 必须 >= 1：{nu}")
    return nu


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Modified Lentz evaluation of the incomplete-beta continued fraction."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETA_CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError(f"a, b 必须为正：a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = gammaln(a + b) - gammaln(a) - gammaln(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def t_pdf(t: float, nu: float) -> float:
    nu = _check_nu(nu)
    log_norm = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * math.log(nu * math.pi)
    return math.exp(log_norm - (nu + 1.0) / 2.0 * math.log1p(t * t / nu))


def t_cdf(t: float, nu: float) -> float:
    nu = _check_nu(nu)
    t = float(t)
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * regularized_incomplete_beta(nu / (t * t + nu), nu / 2.0, 0.5)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(p: float, nu: float) -> float:
    """Inverse of t_cdf by safeguarded Newton inside a bisection bracket."""
    nu = _check_nu(nu)
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p 必须在 (0, 1) 内：{p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, nu)

    lo, hi = 0.0, 1.0
    while t_cdf(hi, nu) < p:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise ArithmeticError(f"t_quantile bracket overflow (p={p}, nu={nu})")
    t = 0.5 * (lo + hi)
    for _ in range(500):
        f = t_cdf(t, nu) - p
        if abs(f) < QUANTILE_TOL:
            break
        if f > 0:
            hi = t
        else:
            lo = t
        dens = t_pdf(t, nu)
        newton = t - f / dens if dens > 0 else math.nan
        t = newton if lo < newton < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(t)):
            break
    return t


@lru_cache(maxsize=256)
def grubbs_threshold(n: int, alpha: float = 0.05) -> float:
    if n < 3:
        raise ValueError(f"Grubbs 检验需要 N >= 3，得到 N={n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha 必须在 (0, 1) 内：{alpha}")
    t = t_quantile(1.0 - alpha / n, n - 2)
    return (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))


class Decision(str, Enum):
    BELONGING = "belonging"
    NON_BELONGING = "non-belonging"


@dataclass
class BelongingDistribution:
    model_id: str
    reference_id: str
    metric: str
    n: int
    mu: float
    sigma: float
    alpha: float = 0.05
    inversion_config_hash: str = ""
    calibrated: bool = True
    sample_seed: int = 0
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"belonging distribution 需要 n >= 3，得到 {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha 必须在 (0, 1) 内：{self.alpha}")
        if not self.sigma > 0:
            raise DegenerateDistributionError(
                f"belonging distribution of {self.model_id} is degenerate (sigma={self.sigma}); "
                "use a larger n or a different metric"
            )

    @classmethod
    def from_losses(cls, losses, **kwargs) -> BelongingDistribution:
        arr = np.asarray(losses, dtype=np.float64)
        if arr.size < 3:
            raise ValueError(f"belonging distribution 需要 n >= 3，得到 {arr.size}")
        sigma = float(arr.std(ddof=1))
        return cls(n=int(arr.size), mu=float(arr.mean()), sigma=sigma, losses=arr.tolist(), **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> BelongingDistribution:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass
class GrubbsRecord:
    decision: Decision
    z: float
    threshold: float
    mu: float
    sigma: float
    n: int
    alpha: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decision"] = self.decision.value
        return d


def grubbs_decide(calibrated_loss: float, dist: BelongingDistribution) -> GrubbsRecord:
    if not dist.sigma > 0:
        raise DegenerateDistributionError(f"sigma must be > 0, got {dist.sigma}")
    z = (float(calibrated_loss) - dist.mu) / dist.sigma
    g = grubbs_threshold(dist.n, dist.alpha)
    decision = Decision.BELONGING if z < g else Decision.NON_BELONGING
    return GrubbsRecord(decision, z, g, dist.mu, dist.sigma, dist.n, dist.alpha)
