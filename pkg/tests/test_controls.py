import math

import numpy as np
import pytest

from riskshare.compensators import DomainError, GammaCompensator, ModelEnsemble, density
from riskshare.controls import (
    MarketParams,
    OverflowRiskWarning,
    StrategyModel,
    alpha_star,
    beta_star,
    growth_exponent,
    value_function,
)

from oracles import growth_quadrature

# growth exponent of model (1.1, 1.8, 1.1) against C = (1, 2, 1) at eta = 0.2, by quadrature
G_K = 0.016964967171929562


def test_growth_exponent_matches_quadrature(counterparty):
    k = GammaCompensator(1.1, 1.8, 1.1)
    assert growth_exponent(k, counterparty, 0.2) == pytest.approx(G_K, rel=1e-9)
    assert growth_exponent(k, counterparty, 0.2) == pytest.approx(
        growth_quadrature(counterparty, k, 0.2), rel=1e-9)


def test_growth_exponent_of_counterparty(counterparty):
    assert growth_exponent(counterparty, counterparty, 0.3) == pytest.approx(0.09)


def test_market_validation_and_viability(counterparty):
    with pytest.raises(DomainError):
        MarketParams(1, 0.1, 0.0, 0, 0, 1)
    with pytest.raises(DomainError):
        MarketParams(1, 0.1, 1.0, 0, 0, -1)
    mk = MarketParams(2.5, 0.2, 1.0, 0, 0, 1)
    with pytest.raises(DomainError):
        mk.check_viability(counterparty)  # (1+eta) L = 2.4 < c
    MarketParams(2.3, 0.2, 1.0, 0, 0, 1).check_viability(counterparty)


def test_market_round_trip():
    mk = MarketParams(5550, 0.12, 0.01, 5000, 0, 5)
    assert MarketParams.from_dict(mk.to_dict()) == mk
    with pytest.raises(ValueError):
        MarketParams.from_dict({"c": 1})


def test_alpha_star_at_terminal_time_single_model(counterparty):
    # one model, z = 1, t = T: alpha* = xi - eta / theta
    mk = MarketParams(1.0, 0.25, 2.0, 0, 0, 1.0)
    ens = ModelEnsemble.single(counterparty)
    xi = np.array([0.1, 1.0, 7.0])
    np.testing.assert_allclose(alpha_star(1.0, xi, [1.0], ens, mk), xi - 0.125, rtol=1e-14)


def test_alpha_star_matches_direct_formula(sm3):
    mk = sm3.market
    t, xi = 0.4, 1.7
    z = np.array([0.8, 1.2, 1.1, 0.9])
    vC = float(density(sm3.C, xi))
    direct = xi
    for w, zk, m, g in zip(sm3.weights, z, sm3.ensemble.all_models, sm3.g):
        direct -= w * zk * math.exp((mk.T - t) * g) * ((1 + mk.eta) * vC / float(density(m, xi)) - 1) / mk.theta
    assert alpha_star(t, xi, z, sm3) == pytest.approx(direct, rel=1e-13)


def test_beta_star_is_loaded_counterparty_density(counterparty):
    xi = np.linspace(0.1, 5, 7)
    np.testing.assert_allclose(beta_star(xi, counterparty, 0.3), 1.3 * density(counterparty, xi),
                               rtol=1e-14)


def test_value_function_at_terminal_time_is_wealth_plus_penalty(sm3):
    z = np.array([1.0, 2.0, 0.5, 1.0])
    pen = (np.dot(sm3.weights, z) - 1) / (2 * sm3.market.theta)
    assert value_function(1.0, 3.0, z, sm3) == pytest.approx(3.0 + pen)


def test_state_validation(sm3):
    with pytest.raises(DomainError):
        value_function(1.5, 0.0, np.ones(4), sm3)
    with pytest.raises(DomainError):
        alpha_star(0.5, 1.0, np.array([1, 1, 0, 1.0]), sm3)
    with pytest.raises(ValueError):
        alpha_star(0.5, 1.0, np.ones(3), sm3)


def test_overflow_warning(counterparty):
    far = GammaCompensator(5.0, 0.7, 0.6)
    ens = ModelEnsemble.uniform([far], counterparty)
    with pytest.warns(OverflowRiskWarning):
        StrategyModel(ens, MarketParams(1.0, 0.2, 1.0, 0, 0, 1e4))


def test_cession_diagnostic_counts_negative_cessions(sm3):
    from riskshare.controls import cession_diagnostic

    d = cession_diagnostic(0.0, np.ones(4), sm3, n_points=501)
    xi = np.array([0.01, 1.0, 5.0])
    assert 0.0 <= d["fraction_negative"] <= 1.0
    assert d["n_points"] == 501
    # a huge penalty makes the insurer cede (almost) the whole loss
    big = StrategyModel(sm3.ensemble, sm3.market.replace(theta=1e8))
    d2 = cession_diagnostic(0.0, np.ones(4), big)
    assert d2["fraction_negative"] == 0.0
    np.testing.assert_allclose(alpha_star(0.0, xi, np.ones(4), big), xi, rtol=1e-6)
