import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import lambertw

from riskshare.compensators import DomainError, GammaCompensator, ModelEnsemble
from riskshare.controls import MarketParams
from riskshare.pricing import (
    counterparty_objective,
    counterparty_objective_derivative,
    eta_star_one_model,
    lambert_w0,
    optimize_eta,
    optimize_eta_one_model,
    theta_sweep,
)

from oracles import bisect, lambert_w_bisect

# bisection on w e^w = 2
W2 = 0.8526055020137258
# bisection on eta exp(eta^2) = 1 (lambda = mu = T = 1, theta = 2)
ETA_UNIT = 0.6529186404192049


def test_lambert_special_values():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(math.e) == pytest.approx(1.0, rel=1e-15)
    assert lambert_w0(2.0) == pytest.approx(W2, rel=1e-14)
    assert lambert_w0(-1 / math.e) == pytest.approx(-1.0, abs=1e-7)
    with pytest.raises(DomainError):
        lambert_w0(-0.5)


@settings(max_examples=300, deadline=None)
@given(st.one_of(st.floats(-1 / math.e + 1e-6, 1.0), st.floats(1.0, 1e6)))
def test_lambert_defining_identity(x):
    w = lambert_w0(x)
    assert w >= -1.0
    assert w * math.exp(w) == pytest.approx(x, rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("x", [-0.3, -0.1, 1e-8, 0.5, 3.0, 100.0, 1e5])
def test_lambert_against_library_and_bisection(x):
    assert lambert_w0(x) == pytest.approx(lambertw(x).real, rel=1e-13)
    assert lambert_w0(x) == pytest.approx(lambert_w_bisect(x), rel=1e-12)


def test_unit_case():
    m = GammaCompensator(1.0, 1.0, 1.0)
    mk = MarketParams(0.5, 0.1, 2.0, 0.0, 0.0, 1.0)
    assert eta_star_one_model(m, mk) == pytest.approx(ETA_UNIT, rel=1e-12)
    oracle = bisect(lambda e: e * math.exp(e * e) - 1.0, 0.0, 2.0)
    assert eta_star_one_model(m, mk) == pytest.approx(oracle, rel=1e-12)


def test_small_ambiguity_gives_small_loading():
    m = GammaCompensator(1.0, 1.0, 1.0)
    etas = [eta_star_one_model(m, MarketParams(0.5, 0.1, th, 0, 0, 1.0)) for th in (1e-2, 1e-4, 1e-6)]
    assert etas[0] > etas[1] > etas[2] and etas[2] < 1e-6


params = st.tuples(st.floats(0.1, 5), st.floats(0.3, 3), st.floats(0.1, 5), st.floats(0.05, 5),
                   st.floats(0.2, 5))


@settings(max_examples=60, deadline=None)
@given(params)
def test_numerical_search_matches_closed_form(p):
    lam, shape, scale, theta, T = p
    m = GammaCompensator(lam, shape, scale)
    mk = MarketParams(0.1, 0.1, theta, 0.0, 0.0, T)
    eta = eta_star_one_model(m, mk)
    res = optimize_eta(ModelEnsemble.single(m), mk, eta_max=max(1.0, 2 * eta))
    assert res.eta_star == pytest.approx(eta, abs=1e-7)
    assert res.method == "golden-section"
    lo, hi = res.bracket
    assert lo <= res.eta_star <= hi
    assert res.expected_wealth == pytest.approx(
        float(counterparty_objective(res.eta_star, ModelEnsemble.single(m), mk)), abs=1e-10)


def test_one_model_objective_concave():
    m = GammaCompensator(0.7, 1.4, 2.0)
    mk = MarketParams(0.1, 0.1, 1.5, 0.0, 2.0, 3.0)
    ens = ModelEnsemble.single(m)
    eta = np.linspace(0.0, 1.0, 201)
    f = counterparty_objective(eta, ens, mk)
    assert np.all(np.diff(f, 2) < 0)


def test_objective_at_zero_loading_is_initial_wealth(ensemble3, market3):
    assert counterparty_objective(0.0, ensemble3, market3) == market3.y0


def test_derivative_matches_finite_differences(ensemble3, market3):
    eta = np.array([0.05, 0.3, 0.7])
    h = 1e-6
    fd = (counterparty_objective(eta + h, ensemble3, market3)
          - counterparty_objective(eta - h, ensemble3, market3)) / (2 * h)
    np.testing.assert_allclose(counterparty_objective_derivative(eta, ensemble3, market3), fd,
                               rtol=1e-6)


def test_theta_sweep_nondecreasing(ensemble3, market3):
    rows = theta_sweep(ensemble3, market3, [0.125, 0.25, 0.5, 1.0, 2.0], eta_max=2.0)
    etas = [r[1] for r in rows]
    assert all(b >= a for a, b in zip(etas, etas[1:]))


def test_vanishing_ambiguity_pushes_loading_to_zero(ensemble3, market3):
    etas = [optimize_eta(ensemble3, market3.replace(theta=th)).eta_star for th in (1e-1, 1e-2, 1e-3)]
    assert etas[0] > etas[1] > etas[2]
    assert etas[2] < 0.01


def test_scan_and_closed_form_record(ensemble3, market3):
    res = optimize_eta(ensemble3, market3)
    assert len(res.scan) == 64 and not res.multimodal
    one = optimize_eta_one_model(GammaCompensator(1, 1, 1), MarketParams(0.5, 0.1, 2.0, 0, 0, 1))
    assert one.method == "closed-form-lambert-w"


def test_bad_bracket(ensemble3, market3):
    with pytest.raises(DomainError):
        optimize_eta(ensemble3, market3, eta_max=0.0)


def test_overflow_shrinks_bracket():
    from riskshare.pricing import BracketShrinkWarning

    m = GammaCompensator(50.0, 1.0, 1.0)
    mk = MarketParams(0.1, 0.1, 1.0, 0.0, 0.0, 30.0)
    with pytest.warns(BracketShrinkWarning):
        res = optimize_eta(ModelEnsemble.single(m), mk, eta_max=5.0)
    assert res.eta_max_used < 5.0
    assert res.eta_star == pytest.approx(eta_star_one_model(m, mk), abs=1e-7)
