"""Particle filtering over time-varying model parameters.

Each particle carries a parameter vector together with the block-sparse
filtering moments computed under that parameter path.  Weights are updated
with the integrated likelihood of the data given the parameters, which the
update step yields for free from its Cholesky byproducts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .filters import FilterMoments, MultiResolutionFilter
from .partition import PartitionTree
from .ssm import StateSpaceModel

__all__ = [
    "integrated_loglik",
    "ParticleSet",
    "ParameterFamily",
    "pmrf_step",
    "resample",
    "effective_sample_size",
]


def integrated_loglik(moments: FilterMoments) -> float:
    """Log density of y_t given y_{1:t-1}, marginalized over the state.

    Uses the update byproducts: log|Lambda| through the Cholesky diagonal,
    the noise-whitened residual norm, and the transformed residual ytilde.
    Returns 0 for a step with no observations.
    """
    stats = moments.stats
    if stats is None:
        raise ValueError("moments carry no update byproducts; "
                         "run the update step first")
    if stats.n_t == 0:
        return 0.0
    return -0.5 * (2.0 * stats.logdet_l + stats.logdet_r + stats.quad
                   - float(stats.ytilde @ stats.ytilde)
                   + stats.n_t * np.log(2.0 * np.pi))


class ParameterFamily:
    """Interface for parameter priors, transitions, and model construction.

    The default proposal is the transition itself (bootstrap), in which
    case the proposal correction cancels in the weight update.
    """

    def build_model(self, theta: np.ndarray) -> StateSpaceModel:
        raise NotImplementedError

    def sample_prior(self, rng) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, rng, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transition_logpdf(self, new: np.ndarray, old: np.ndarray) -> float:
        raise NotImplementedError

    def propose(self, rng, theta: np.ndarray) -> np.ndarray:
        return self.sample_transition(rng, theta)

    def proposal_logpdf(self, new: np.ndarray, old: np.ndarray) -> float:
        return self.transition_logpdf(new, old)


@dataclass
class ParticleSet:
    """Equally structured particles: parameters, weights, moments."""

    thetas: np.ndarray                     # (n_p, d)
    log_weights: np.ndarray                # normalized: logsumexp == 0
    moments: list[FilterMoments]
    step_loglik: float = 0.0               # log p(y_t | y_1:t-1) estimate
    history: list = field(default_factory=list)

    @property
    def n_p(self) -> int:
        return self.thetas.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def effective_sample_size(log_weights: np.ndarray) -> float:
    return float(np.exp(-logsumexp(2.0 * log_weights)))


def initialize_particles(family: ParameterFamily, tree: PartitionTree,
                         n_p: int, seed: int) -> ParticleSet:
    thetas = []
    moments = []
    for i in range(n_p):
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(i, 0)))
        theta = np.asarray(family.sample_prior(rng), dtype=float)
        model = family.build_model(theta)
        moments.append(MultiResolutionFilter(model, tree).initialize())
        thetas.append(theta)
    return ParticleSet(
        thetas=np.array(thetas),
        log_weights=np.full(n_p, -np.log(n_p)),
        moments=moments,
    )


def pmrf_step(ps: ParticleSet, family: ParameterFamily, tree: PartitionTree,
              y: np.ndarray, t: int, seed: int) -> ParticleSet:
    """Propose, filter, and reweight every particle for one time step."""
    new_thetas = np.empty_like(ps.thetas)
    new_moments: list[FilterMoments] = []
    raw = np.empty(ps.n_p)
    for i in range(ps.n_p):
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(i, t)))
        theta = np.asarray(family.propose(rng, ps.thetas[i]), dtype=float)
        model = family.build_model(theta)
        post = MultiResolutionFilter(model, tree).step(ps.moments[i], y, t)
        ll = integrated_loglik(post)
        corr = family.transition_logpdf(theta, ps.thetas[i]) \
            - family.proposal_logpdf(theta, ps.thetas[i])
        raw[i] = ps.log_weights[i] + ll + corr
        new_thetas[i] = theta
        new_moments.append(post)

    norm = logsumexp(raw)
    if not np.isfinite(norm):
        raise FloatingPointError(
            "all particle weights underflowed to zero; the proposal places "
            "no mass near the posterior, review the parameter family")
    return ParticleSet(
        thetas=new_thetas,
        log_weights=raw - norm,
        moments=new_moments,
        step_loglik=float(norm),
    )


def systematic_offspring(weights: np.ndarray, u: float) -> np.ndarray:
    """Ancestor indices from one uniform draw; deterministic given u."""
    n = len(weights)
    positions = (np.arange(n) + u) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions)


def resample(ps: ParticleSet, threshold_frac: float, seed: int) -> ParticleSet:
    """Systematic resampling when the effective sample size drops too low."""
    if not 0.0 < threshold_frac <= 1.0:
        raise ValueError("threshold_frac must be in (0, 1]")
    ess = effective_sample_size(ps.log_weights)
    if ess >= threshold_frac * ps.n_p:
        return ps
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    idx = systematic_offspring(ps.weights, float(rng.uniform()))
    return ParticleSet(
        thetas=ps.thetas[idx].copy(),
        log_weights=np.full(ps.n_p, -np.log(ps.n_p)),
        moments=[ps.moments[i] for i in idx],
        step_loglik=ps.step_loglik,
    )
