import numpy as np
import pytest

from mrfilter.covariance import (CountingOracle, DenseOracle, DiagonalOracle,
                                 ForecastOracle, KernelOracle, MaternKernel,
                                 ZeroOracle, densify)


def test_matern_zero_distance_is_variance():
    for nu in (0.5, 1.5):
        k = MaternKernel(nu=nu, length_scale=0.2, variance=1.7)
        assert k(np.array([[0.3]]), np.array([[0.3]]))[0, 0] == pytest.approx(1.7)


def test_matern_exponential_form():
    k = MaternKernel(nu=0.5, length_scale=0.1, variance=2.0)
    d = 0.25
    val = k(np.array([[0.0]]), np.array([[d]]))[0, 0]
    assert val == pytest.approx(2.0 * np.exp(-d / 0.1), rel=1e-12)


def test_matern_smooth_form():
    k = MaternKernel(nu=1.5, length_scale=0.2, variance=1.0)
    d = 0.15
    s = np.sqrt(3.0) * d / 0.2
    val = k(np.array([[0.0]]), np.array([[d]]))[0, 0]
    assert val == pytest.approx((1.0 + s) * np.exp(-s), rel=1e-12)


def test_matern_rejects_bad_params():
    with pytest.raises(ValueError):
        MaternKernel(nu=2.5, length_scale=0.1)
    with pytest.raises(ValueError):
        MaternKernel(nu=0.5, length_scale=-1.0)
    with pytest.raises(ValueError):
        MaternKernel(nu=0.5, length_scale=0.1, metric="chordal")


def test_circular_metric_wraps():
    k = MaternKernel(nu=0.5, length_scale=0.1, metric="circular")
    d = k.distances(np.array([[0.05]]), np.array([[0.95]]))[0, 0]
    assert d == pytest.approx(0.1)


def test_diagonal_oracle_blocks():
    oracle = DiagonalOracle(5, values=np.arange(1.0, 6.0))
    block = oracle.block(np.array([0, 2, 4]), np.array([2, 4]))
    expected = np.zeros((3, 2))
    expected[1, 0] = 3.0
    expected[2, 1] = 5.0
    assert np.array_equal(block, expected)


def test_forecast_oracle_matches_dense():
    rng = np.random.default_rng(0)
    import scipy.sparse as sp
    n = 12
    factor = sp.random(n, 6, density=0.5, random_state=1, format="csr")
    q = DenseOracle(np.diag(rng.uniform(0.1, 1.0, n)))
    iperm = rng.permutation(n)
    oracle = ForecastOracle(factor, q, iperm=iperm)
    rows = np.array([0, 3, 7])
    cols = np.array([1, 2])
    dense = (factor @ factor.T).toarray()
    expected = dense[np.ix_(iperm[rows], iperm[cols])] \
        + q.matrix[np.ix_(rows, cols)]
    assert np.allclose(oracle.block(rows, cols), expected)


def test_counting_oracle_counts():
    inner = ZeroOracle(10)
    counting = CountingOracle(inner)
    counting.block(np.arange(3), np.arange(4))
    counting.block(np.arange(2), np.arange(2))
    assert counting.entries == 16
    assert counting.calls == 2


def test_densify_guard():
    with pytest.raises(ValueError):
        densify(ZeroOracle(100), guard=50)
    out = densify(DiagonalOracle(4, 2.0))
    assert np.array_equal(out, 2.0 * np.eye(4))
