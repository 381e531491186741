import math

import numpy as np
import pytest
from scipy.integrate import quad

from util.errors import DegenerateDistributionError
from util.stats import (
    BelongingDistribution,
    Decision,
    grubbs_decide,
    grubbs_threshold,
    regularized_incomplete_beta,
    t_cdf,
    t_pdf,
    t_quantile,
)


def dist(mu=1.0, sigma=0.1, n=100, alpha=0.05) -> BelongingDistribution:
    return BelongingDistribution("m", "ref", "mse", n, mu, sigma, alpha)


def test_t_pdf_values():
    assert t_pdf(0.0, 1) == pytest.approx(1.0 / math.pi, abs=1e-7)
    for a in (0.3, 1.7, 4.0):
        assert t_pdf(a, 7) == t_pdf(-a, 7)


def test_t_pdf_integrates_to_one():
    total, _ = quad(lambda t: t_pdf(t, 10), -50.0, 50.0, epsabs=1e-11, epsrel=1e-11, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("nu", [1, 5, 10, 98])
def test_t_cdf_matches_quadrature(nu):
    for t in np.linspace(-10.0, 10.0, 21):
        tail, _ = quad(lambda s: t_pdf(s, nu), -np.inf, t, epsabs=1e-11, epsrel=1e-11, limit=200)
        assert t_cdf(t, nu) == pytest.approx(tail, abs=1e-6)


def test_t_cdf_known_values():
    assert t_cdf(0.0, 3) == 0.5
    assert t_cdf(1e6, 5) == pytest.approx(1.0, abs=1e-9)
    assert t_cdf(2.2281, 10) == pytest.approx(0.975, abs=1e-4)


def test_t_cdf_is_monotone_and_symmetric():
    ts = np.linspace(-6.0, 6.0, 61)
    values = [t_cdf(t, 4) for t in ts]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))
    for t in (0.5, 2.0, 5.0):
        assert t_cdf(-t, 4) == pytest.approx(1.0 - t_cdf(t, 4), abs=1e-14)


def test_t_quantile():
    assert t_quantile(0.5, 9) == 0.0
    assert t_quantile(0.975, 10) == pytest.approx(2.2281, abs=1e-3)
    for nu in (1, 3, 10, 98):
        for p in (0.001, 0.1, 0.6, 0.975, 0.9995):
            assert t_cdf(t_quantile(p, nu), nu) == pytest.approx(p, abs=1e-8)


@pytest.mark.parametrize("call", [lambda: t_pdf(0, 0.5), lambda: t_cdf(0, 0), lambda: t_quantile(1.0, 5)])
def test_domain_errors(call):
    with pytest.raises(ValueError):
        call()


def test_incomplete_beta_edges():
    assert regularized_incomplete_beta(0.0, 2, 3) == 0.0
    assert regularized_incomplete_beta(1.0, 2, 3) == 1.0
    # I_x(1, 1) is the uniform CDF
    assert regularized_incomplete_beta(0.3, 1, 1) == pytest.approx(0.3, abs=1e-12)


def test_grubbs_threshold():
    assert grubbs_threshold(3, 0.05) == pytest.approx(1.1531, abs=1e-3)
    for n in (3, 10, 100):
        assert grubbs_threshold(n, 0.05) < (n - 1) / math.sqrt(n)
    alphas = [0.001, 0.01, 0.05, 0.1, 0.2]
    gs = [grubbs_threshold(20, a) for a in alphas]
    assert all(b < a for a, b in zip(gs, gs[1:]))
    with pytest.raises(ValueError):
        grubbs_threshold(2, 0.05)


def test_grubbs_decide_unit_truths():
    assert grubbs_decide(1.0, dist()).decision is Decision.BELONGING
    record = grubbs_decide(1.0 + 100 * 0.1, dist())
    assert record.z == pytest.approx(100.0)
    assert record.decision is Decision.NON_BELONGING
    record = grubbs_decide(1.05, dist())
    assert record.z == pytest.approx(0.5)
    expected = Decision.BELONGING if 0.5 < grubbs_threshold(100, 0.05) else Decision.NON_BELONGING
    assert record.decision is expected
    assert (record.mu, record.sigma, record.n, record.alpha) == (1.0, 0.1, 100, 0.05)


def test_very_low_loss_is_belonging():
    assert grubbs_decide(-50.0, dist()).decision is Decision.BELONGING


def test_grubbs_decide_is_scale_invariant():
    for loss in (0.9, 1.2, 1.3, 1.5):
        base = grubbs_decide(loss, dist())
        for c in (0.01, 3.0, 250.0):
            scaled = grubbs_decide(loss * c, dist(mu=1.0 * c, sigma=0.1 * c))
            assert scaled.decision is base.decision
            assert scaled.z == pytest.approx(base.z)


def test_grubbs_decision_is_monotone():
    d = dist(n=30)
    losses = np.linspace(0.5, 2.0, 61)
    decisions = [grubbs_decide(x, d).decision is Decision.BELONGING for x in losses]
    # once non-belonging, larger losses stay non-belonging
    first_out = decisions.index(False)
    assert not any(decisions[first_out:])


def test_distribution_validation():
    with pytest.raises(ValueError):
        dist(n=2)
    with pytest.raises(ValueError):
        dist(alpha=1.0)
    with pytest.raises(DegenerateDistributionError, match="larger n"):
        BelongingDistribution.from_losses([0.0, 0.0, 0.0], model_id="g", reference_id="g", metric="mse")


def test_distribution_from_losses_uses_sample_std():
    d = BelongingDistribution.from_losses([1.0, 2.0, 3.0, 4.0], model_id="m", reference_id="r", metric="mae")
    assert d.mu == 2.5
    assert d.sigma == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert BelongingDistribution.from_dict(d.to_dict()) == d
