import numpy as np
import pytest

from riskshare import GammaCompensator, MarketParams, ModelEnsemble, StrategyModel


@pytest.fixture
def counterparty():
    return GammaCompensator(rate=1.0, shape=2.0, scale=1.0)


@pytest.fixture
def ensemble3(counterparty):
    """Three nearby models; passes both feasibility assumptions."""
    models = [
        GammaCompensator(1.1, 1.8, 1.1),
        GammaCompensator(0.9, 2.2, 0.95),
        GammaCompensator(1.0, 2.0, 1.05),
    ]
    return ModelEnsemble.uniform(models, counterparty)


@pytest.fixture
def market3():
    return MarketParams(premium_rate=1.9, safety_loading=0.2, ambiguity_penalty=2.0,
                        initial_wealth_insurer=5.0, initial_wealth_counterparty=3.0, horizon=1.0)


@pytest.fixture
def sm3(ensemble3, market3):
    return StrategyModel(ensemble3, market3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
