import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskshare.compensators import (
    DomainError,
    GammaCompensator,
    InfeasibleModelPairError,
    ModelEnsemble,
    QuadratureError,
    check_assumption_1,
    check_assumption_2,
    cross_integral_2,
    cross_integral_3,
    density,
    density_log,
    integrate_positive,
    load_ensemble,
    save_ensemble,
)

from oracles import i2_quadrature, i3_quadrature

# frozen by adaptive quadrature of v_C^2 / v_k and v_C^3 / (v_j v_k) (tests/oracles.py)
I2_C_K = 0.9145590049805068
I3_C_J_K = 1.0196921852384033

C = GammaCompensator(1.0, 2.0, 1.0)
K = GammaCompensator(1.1, 1.8, 1.1)
J = GammaCompensator(0.9, 2.2, 0.95)


def test_rejects_nonpositive_parameters():
    for args in [(0, 1, 1), (1, -1, 1), (1, 1, 0), (1, 1, math.inf)]:
        with pytest.raises(DomainError):
            GammaCompensator(*args)


def test_density_integrates_to_rate():
    m = GammaCompensator(2.5, 0.58, 654.98)
    total = integrate_positive(lambda x: float(density(m, x)), scale=m.mean_severity)
    assert total == pytest.approx(2.5, rel=1e-9)


def test_density_log_rejects_nonpositive_loss():
    with pytest.raises(DomainError):
        density_log(C, 0.0)


def test_loss_and_second_moment_rates():
    m = GammaCompensator(2.0, 3.0, 0.5)
    assert m.loss_rate == pytest.approx(3.0)
    mean = integrate_positive(lambda x: x * float(density(m, x)), scale=1.5)
    second = integrate_positive(lambda x: x * x * float(density(m, x)), scale=1.5)
    assert m.loss_rate == pytest.approx(mean, rel=1e-9)
    assert m.second_moment_rate == pytest.approx(second, rel=1e-9)


def test_cross_integrals_match_frozen_quadrature():
    assert cross_integral_2(C, K) == pytest.approx(I2_C_K, rel=1e-12)
    assert cross_integral_3(C, J, K) == pytest.approx(I3_C_J_K, rel=1e-12)


def test_cross_integral_of_model_with_itself_is_its_rate():
    m = GammaCompensator(0.52, 0.58, 654.98)
    assert cross_integral_2(m, m) == pytest.approx(0.52, rel=1e-13)
    assert cross_integral_3(m, m, m) == pytest.approx(0.52, rel=1e-13)


def test_infeasible_pair_names_indices():
    heavy = GammaCompensator(1.0, 5.0, 1.0)
    with pytest.raises(InfeasibleModelPairError) as info:
        cross_integral_2(C, heavy, labels=("C", "7"))
    assert "7" in str(info.value)
    with pytest.raises(InfeasibleModelPairError):
        cross_integral_2(C, GammaCompensator(1.0, 2.0, 0.4))


feasible = st.tuples(
    st.floats(0.2, 3.0), st.floats(0.3, 4.0), st.floats(0.2, 5.0),
    st.floats(0.6, 1.9), st.floats(0.6, 1.6),
)


@settings(max_examples=60, deadline=None)
@given(feasible)
def test_cross_integral_2_agrees_with_quadrature(p):
    rate, shape, scale, shape_frac, scale_frac = p
    c = GammaCompensator(rate, shape, scale)
    k = GammaCompensator(rate * 1.3, shape * shape_frac, scale * scale_frac)
    assert cross_integral_2(c, k) == pytest.approx(i2_quadrature(c, k), rel=1e-8)


def test_assumption_1_boundary_is_strict():
    ens = ModelEnsemble.uniform([GammaCompensator(1, 4.0, 1.0)], C)
    rep = check_assumption_1(ens)
    assert not rep.passed
    assert rep.result_for("1") == (False, True)
    ens = ModelEnsemble.uniform([GammaCompensator(1, 2.0, 0.5)], C)
    assert check_assumption_1(ens).result_for("1") == (True, False)
    ens = ModelEnsemble.uniform([GammaCompensator(1, 3.99, 0.51)], C)
    assert check_assumption_1(ens).passed


def test_assumption_2_covers_ordered_pairs_with_counterparty(ensemble3):
    rep = check_assumption_2(ensemble3)
    assert len(rep.entries) == 16
    assert rep.passed
    bad = ModelEnsemble.uniform([GammaCompensator(1, 3.2, 1.0), GammaCompensator(1, 2.0, 1.0)], C)
    rep = check_assumption_2(bad)
    assert rep.result_for("1", "1") == (False, True)
    assert rep.result_for("2", "C") == (True, True)


def test_ensemble_round_trip(tmp_path, ensemble3):
    path = save_ensemble(ensemble3, tmp_path / "e.json")
    assert load_ensemble(path) == ensemble3
    data = json.loads(path.read_text())
    assert set(data) == {"models", "counterparty", "weights", "weight_counterparty"}


def test_ensemble_rejects_bad_weights():
    with pytest.raises(ValueError):
        ModelEnsemble((K,), C, (0.5,), 0.2)
    with pytest.raises(ValueError):
        ModelEnsemble((K,), C, (1.0, 0.0), 0.0)


def test_single_model_ensemble_layout():
    ens = ModelEnsemble.single(C)
    assert ens.labels == ["C"]
    np.testing.assert_array_equal(ens.all_weights, [1.0])
    assert ens.is_single_model


def test_quadrature_error_on_divergence():
    with pytest.raises(QuadratureError):
        integrate_positive(lambda x: 1.0 / x if x < 1 else 0.0, points=(1.0,))
