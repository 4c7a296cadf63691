import numpy as np
import pytest
from scipy import stats

from riskshare.rng import STREAM_ARRIVALS, STREAM_MARKS, CounterStream


def test_draws_are_pure_functions_of_coordinates():
    s = CounterStream(42)
    a = s.uniform(np.arange(10)[:, None], STREAM_ARRIVALS, np.arange(5)[None, :])
    b = CounterStream(42).uniform(np.arange(10)[::-1, None], STREAM_ARRIVALS,
                                  np.arange(5)[None, :])[::-1]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, CounterStream(43).uniform(np.arange(10)[:, None], 1,
                                                           np.arange(5)[None, :]))


def test_streams_differ():
    s = CounterStream(1)
    assert not np.array_equal(s.bits(0, STREAM_ARRIVALS, np.arange(8)),
                              s.bits(0, STREAM_MARKS, np.arange(8)))


def test_uniform_open_interval_and_moments():
    u = CounterStream(7).uniform(np.arange(200_000), 1, 0)
    assert u.min() > 0 and u.max() < 1
    assert u.mean() == pytest.approx(0.5, abs=4 * np.sqrt(1 / 12 / u.size))


def test_exponential_law():
    e = CounterStream(9).exponential(0, 1, np.arange(100_000))
    assert stats.kstest(e, "expon").pvalue > 1e-3


@pytest.mark.parametrize("shape", [0.3, 0.58, 1.0, 2.5, 9.0])
def test_gamma_law(shape):
    g = CounterStream(11).gamma(np.arange(100_000), 2, 0, shape)
    assert stats.kstest(g, "gamma", args=(shape,)).pvalue > 1e-3


def test_seed_range():
    with pytest.raises(ValueError):
        CounterStream(-1)
    CounterStream(2**64 - 1)
