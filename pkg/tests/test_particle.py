import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_static_model
from mrfilter.covariance import DenseOracle
from mrfilter.filters import (FilterMoments, KalmanFilter,
                              MultiResolutionFilter, UpdateStats)
from mrfilter.partition import PartitionConfig, build_partition
from mrfilter.particle import (ParameterFamily, ParticleSet,
                               effective_sample_size, initialize_particles,
                               integrated_loglik, pmrf_step, resample,
                               systematic_offspring)
from mrfilter.ssm import StateSpaceModel, build_1d_advection_diffusion, \
    simulate_truth


def test_no_observations_gives_zero():
    m = FilterMoments(t=1, mu=np.zeros(3),
                      stats=UpdateStats(0, 0.0, 0.0, 0.0, np.zeros(0)))
    assert integrated_loglik(m) == 0.0


def test_missing_stats_rejected():
    with pytest.raises(ValueError):
        integrated_loglik(FilterMoments(t=1, mu=np.zeros(3)))


def test_scalar_closed_form():
    # one state, one observation: marginal density of y is N(mu, s + r)
    s0, r = 2.0, 0.5
    grid = np.zeros((1, 1))
    def obs(t):
        return sp.csr_matrix(np.ones((1, 1))), np.array([r])
    model = StateSpaceModel(
        grid=grid, evolution=sp.identity(1, format="csr"),
        innovation=DenseOracle(np.zeros((1, 1))), observation=obs,
        mu0=np.array([0.7]), sigma0=DenseOracle(np.array([[s0]])),
        zero_innovation=True)
    tree = build_partition(grid, PartitionConfig(M=0, J=(), r=1))
    mrf = MultiResolutionFilter(model, tree)
    y = np.array([1.9])
    post = mrf.step(mrf.initialize(), y, 1)
    var = s0 + r
    expected = -0.5 * (np.log(2 * np.pi * var) + (y[0] - 0.7) ** 2 / var)
    assert integrated_loglik(post) == pytest.approx(expected, abs=1e-12)


def test_exact_config_matches_dense_marginal(boundary_tree80):
    model = make_static_model()
    sim = simulate_truth(model, 20, seed=21)
    kf = KalmanFilter(model)
    mrf = MultiResolutionFilter(model, boundary_tree80)
    ks, ms = kf.initialize(), mrf.initialize()
    total = 0.0
    for t in range(1, 21):
        before = kf.loglik
        ks = kf.step(ks, sim.y[t], t)
        ms = mrf.step(ms, sim.y[t], t)
        ll = integrated_loglik(ms)
        total += ll
        assert ll == pytest.approx(kf.loglik - before, abs=1e-6)
    assert total == pytest.approx(kf.loglik, abs=1e-5)


class NullFamily(ParameterFamily):
    """Parameter with no effect on the model."""

    def __init__(self, model):
        self.model = model

    def build_model(self, theta):
        return self.model

    def sample_prior(self, rng):
        return np.array([rng.uniform()])

    def sample_transition(self, rng, theta):
        return theta + rng.normal(0.0, 0.1, size=theta.shape)

    def transition_logpdf(self, new, old):
        return 0.0


def test_null_family_keeps_uniform_weights(tree80):
    model = build_1d_advection_diffusion(80, seed=30)
    sim = simulate_truth(model, 3, seed=31)
    ps = initialize_particles(NullFamily(model), tree80, 5, seed=32)
    for t in range(1, 4):
        ps = pmrf_step(ps, NullFamily(model), tree80, sim.y[t], t, seed=33)
        assert np.allclose(ps.weights, 0.2, atol=1e-12)
        assert abs(ps.weights.sum() - 1.0) <= 1e-12


def test_ess_bounds_and_resample_trigger():
    lw = np.full(8, -np.log(8))
    assert effective_sample_size(lw) == pytest.approx(8.0)
    ps = ParticleSet(thetas=np.zeros((8, 1)), log_weights=lw,
                     moments=[FilterMoments(t=0, mu=np.zeros(2))] * 8)
    assert resample(ps, 0.5, seed=1) is ps      # no trigger

    concentrated = np.full(8, -1e9)
    concentrated[3] = 0.0
    from scipy.special import logsumexp
    concentrated -= logsumexp(concentrated)
    ps2 = ParticleSet(thetas=np.arange(8.0).reshape(-1, 1),
                      log_weights=concentrated, moments=ps.moments)
    assert effective_sample_size(concentrated) == pytest.approx(1.0)
    out = resample(ps2, 0.5, seed=2)
    assert np.all(out.thetas == 3.0)
    assert np.allclose(out.weights, 1.0 / 8)


def test_systematic_offspring_matches_bruteforce():
    rng = np.random.default_rng(7)
    w = rng.uniform(size=12)
    w /= w.sum()
    u = 0.37
    got = systematic_offspring(w, u)
    # brute force: walk the CDF with the same stratified positions
    cum = np.cumsum(w)
    expected = []
    for j in range(12):
        pos = (j + u) / 12
        idx = 0
        while cum[idx] < pos and idx < 11:
            idx += 1
        expected.append(idx)
    assert got.tolist() == expected


def test_all_zero_weights_is_hard_error(tree80):
    model = build_1d_advection_diffusion(80, seed=40)
    sim = simulate_truth(model, 1, seed=41)

    class BrokenFamily(NullFamily):
        def transition_logpdf(self, new, old):
            return -np.inf

    ps = initialize_particles(BrokenFamily(model), tree80, 3, seed=42)
    with pytest.raises(FloatingPointError):
        pmrf_step(ps, BrokenFamily(model), tree80, sim.y[1], 1, seed=43)


def test_threshold_validation():
    ps = ParticleSet(thetas=np.zeros((2, 1)),
                     log_weights=np.full(2, -np.log(2)),
                     moments=[None, None])
    with pytest.raises(ValueError):
        resample(ps, 0.0, seed=0)
