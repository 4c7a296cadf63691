import math

import numpy as np
import pytest

from riskshare.compensators import GammaCompensator, InfeasibleModelPairError, ModelEnsemble
from riskshare.controls import MarketParams, StrategyModel
from riskshare.moments import (
    Measure,
    UnavailableMomentError,
    cov_Z_matrix_Qstar,
    cov_Z_Qstar,
    expected_counterparty_wealth,
    mean_X,
    mean_X_cl,
    mean_Y,
    mean_Z,
    mean_Z_vector,
    moment_report,
    one_model_moments,
    var_X_cl,
    var_X_Qstar,
)

ONE = GammaCompensator(0.8, 1.5, 2.0)
MK1 = MarketParams(2.0, 0.3, 1.5, 10.0, 4.0, 2.0)


def test_measure_tags():
    assert Measure.parse("Q*").is_qstar
    assert Measure.parse("P_C").is_counterparty
    assert Measure.parse("P_3").index == 3
    assert Measure.parse(2).index == 2
    with pytest.raises(ValueError):
        Measure.parse("R_2")


def test_initial_values(sm3):
    np.testing.assert_allclose(mean_Z_vector("Q*", 0.0, sm3), 1.0)
    np.testing.assert_allclose(mean_Z_vector("P_C", 0.0, sm3), 1.0)
    assert mean_X("Q*", 0.0, sm3) == pytest.approx(sm3.market.x0)
    assert mean_X("P_C", 0.0, sm3) == pytest.approx(sm3.market.x0)
    np.testing.assert_allclose(cov_Z_matrix_Qstar(0.0, sm3), 0.0, atol=1e-15)


def test_qstar_mean_of_z_is_growth_factor(sm3):
    for pos, lab in enumerate(sm3.labels):
        assert mean_Z("Q*", lab, 0.7, sm3) == pytest.approx(math.exp(0.7 * sm3.g[pos]))


def test_counterparty_z_is_martingale_under_its_model(sm3):
    assert mean_Z("P_C", "C", 0.9, sm3) == pytest.approx(1.0, abs=1e-14)


def test_covariance_matrix_symmetric_psd(sm3):
    cov = cov_Z_matrix_Qstar(1.0, sm3)
    np.testing.assert_allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-12
    assert cov[0, 1] == pytest.approx(cov_Z_Qstar("1", "2", 1.0, sm3))


def test_variance_of_x_is_quadratic_form(sm3):
    t = 0.6
    p = sm3.weights * np.exp((sm3.market.T - t) * sm3.g)
    expected = p @ cov_Z_matrix_Qstar(t, sm3) @ p / sm3.market.theta**2
    assert var_X_Qstar(t, sm3) == pytest.approx(expected, rel=1e-12)


def test_variance_requires_second_assumption(counterparty):
    # passes the first assumption but 2 m_C + ... fails the pairwise one
    bad = ModelEnsemble.uniform([GammaCompensator(1.0, 3.2, 1.0)], counterparty)
    mk = MarketParams(1.5, 0.2, 1.0, 0, 0, 1)
    with pytest.raises(InfeasibleModelPairError):
        var_X_Qstar(0.5, bad, mk)


def test_one_model_table_consistent_with_general_formulas():
    ens = ModelEnsemble.single(ONE)
    t = 1.3
    om = one_model_moments(t, ONE, MK1)
    assert om.mean_Z_Q == pytest.approx(mean_Z("Q*", "C", t, ens, MK1), rel=1e-13)
    assert om.mean_X_Q == pytest.approx(mean_X("Q*", t, ens, MK1), rel=1e-13)
    assert om.mean_X_P == pytest.approx(mean_X("P_C", t, ens, MK1), rel=1e-13)
    assert om.var_Z_Q == pytest.approx(cov_Z_Qstar("C", "C", t, ens, MK1), rel=1e-12)
    assert om.var_X_Q == pytest.approx(var_X_Qstar(t, ens, MK1), rel=1e-12)


def test_one_model_correlation_is_minus_one():
    om = one_model_moments(0.8, ONE, MK1)
    for sfx in ("P", "Q"):
        cov = getattr(om, f"cov_XZ_{sfx}")
        vx = getattr(om, f"var_X_{sfx}")
        vz = getattr(om, f"var_Z_{sfx}")
        assert cov / math.sqrt(vx * vz) == pytest.approx(-1.0, abs=1e-14)


def test_counterparty_wealth_identity(sm3):
    # Y - y = X_cl - X* pathwise, so the same holds for expectations under P_C
    mk = sm3.market
    t = 0.7
    lhs = mean_Y(t, mk.eta, sm3.ensemble, mk) - mk.y0
    rhs = mean_X_cl("P_C", t, sm3) - mean_X("P_C", t, sm3)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_counterparty_wealth_zero_loading_and_qstar(sm3):
    mk = sm3.market
    assert expected_counterparty_wealth(0.0, mk.T, sm3, mk) == mk.y0
    assert mean_Y(mk.T, 0.2, sm3.ensemble, mk, measure="Q*") == mk.y0
    vals = expected_counterparty_wealth(np.array([0.0, 0.1, 0.2]), mk.T, sm3, mk)
    assert vals.shape == (3,)


def test_classical_wealth_moments(sm3):
    mk = sm3.market
    C = sm3.C
    assert mean_X_cl("P_C", 1.0, sm3) == pytest.approx(mk.x0 + mk.c - C.loss_rate)
    assert var_X_cl("Q*", 1.0, sm3) == pytest.approx((1 + mk.eta) * C.second_moment_rate)


def test_unavailable_moment(sm3):
    with pytest.raises(UnavailableMomentError):
        mean_X("P_2", 0.5, sm3)
    with pytest.raises(UnavailableMomentError):
        mean_Y(0.5, 0.2, sm3.ensemble, sm3.market, measure="P_1")


def test_moment_report_fields(sm3):
    rep = moment_report("Q*", 0.5, sm3.ensemble, sm3.market).to_dict()
    assert rep["labels"] == ["1", "2", "3", "C"]
    assert len(rep["cov_Z"]) == 4
    assert rep["mean_Y"] == sm3.market.y0
    rep = moment_report("P_2", 0.5, sm3.ensemble, sm3.market).to_dict()
    assert rep["mean_X"] is None and rep["cov_Z"] is None
