import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from eqlab import PriorModel, RiskTransform, apply_risk, sample_types
from eqlab.exceptions import ConfigurationError, DomainError
from eqlab.priors import bertrand_cost_cdf, bertrand_cost_ppf


def test_uniform_bounds_and_broadcast():
    p = PriorModel("independent_uniform", 3, low=[0, 0.5, 1], high=2)
    v, x = sample_types(p, 10_000, 0)
    assert np.array_equal(v, x)
    assert np.all(x >= [0, 0.5, 1]) and np.all(x <= 2)
    assert p.high == (2.0, 2.0, 2.0)
    with pytest.raises(ConfigurationError):
        PriorModel("independent_uniform", 2, low=1, high=1)


def test_fixed_support_kinds_reject_bounds():
    with pytest.raises(ConfigurationError):
        PriorModel("mineral_rights", 3, high=1.0)
    with pytest.raises(ConfigurationError):
        PriorModel("lognormal", 3)


def test_mineral_rights_structure():
    p = PriorModel("mineral_rights", 3)
    v, x = sample_types(p, 20_000, 1)
    assert np.all(v == v[:, :1])
    assert np.all(x <= 2 * v + 1e-15)
    assert p.value_bounds(0) == (0.0, 1.0) and p.observation_bounds(0) == (0.0, 2.0)
    assert p.common_value


def test_affiliated_value_is_mean_observation():
    p = PriorModel("affiliated", 2)
    v, x = sample_types(p, 1000, 2)
    assert np.allclose(v[:, 0], x.mean(axis=1))
    assert np.all((x >= 0) & (x <= 2))


def test_bertrand_cost_distribution():
    u = np.linspace(0, 1, 101)
    assert np.allclose(bertrand_cost_cdf(bertrand_cost_ppf(u)), u, atol=1e-15)
    _, c = sample_types(PriorModel("bertrand_cost", 2), 50_000, 3)
    assert stats.kstest(c[:, 0], bertrand_cost_cdf).pvalue > 1e-3


def test_sample_types_seeded():
    p = PriorModel("independent_uniform", 2)
    assert np.array_equal(sample_types(p, 5, 7)[1], sample_types(p, 5, 7)[1])
    with pytest.raises(DomainError):
        sample_types(p, 0, 7)


def test_risk_transform_identity_and_shape():
    x = np.linspace(-2, 2, 41)
    assert np.array_equal(apply_risk(RiskTransform(0.0), x), x)
    h = RiskTransform(0.5)(x)
    assert h[20] == 0.0
    assert np.all(np.diff(h) > 0)
    assert np.all(np.diff(h, 2) < 0)
    assert h == pytest.approx((1 - np.exp(-0.5 * x)) / 0.5, rel=1e-12)
    with pytest.raises(ConfigurationError):
        RiskTransform(-1.0)


def test_risk_transform_saturates_instead_of_overflowing():
    out = apply_risk(RiskTransform(2.0), np.array([-1e6, -400.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == out[1]


@given(st.floats(1e-6, 10.0), st.floats(-50.0, 50.0))
def test_risk_transform_below_identity(rho, x):
    # 1 - e^{-y} <= y for every y
    assert apply_risk(rho, x) <= x + 1e-12 * max(1.0, abs(x))
