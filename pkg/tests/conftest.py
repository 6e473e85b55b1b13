import numpy as np
import pytest
import scipy.sparse as sp

from mrfilter.covariance import KernelOracle, MaternKernel, ZeroOracle
from mrfilter.partition import PartitionConfig, build_partition
from mrfilter.ssm import StateSpaceModel, _RandomSubsetObservation


@pytest.fixture
def grid80():
    return ((np.arange(80) + 0.5) / 80).reshape(-1, 1)


@pytest.fixture
def tree80(grid80):
    """Template-knot tree: 80 points, three splits of three, two knots."""
    return build_partition(grid80, PartitionConfig(M=3, J=3, r=2))


@pytest.fixture
def boundary_tree80(grid80):
    return build_partition(
        grid80, PartitionConfig(M=3, J=3, r=2, boundary_knots=True))


def make_static_model(n=80, n_obs=24, length_scale=0.3, sigma_v2=0.05,
                      obs_seed=3, nu=0.5, variance=1.0):
    """Identity evolution, no innovation, Matérn initial covariance."""
    grid = ((np.arange(n) + 0.5) / n).reshape(-1, 1)
    kernel = MaternKernel(nu=nu, length_scale=length_scale, variance=variance)
    return StateSpaceModel(
        grid=grid,
        evolution=sp.identity(n, format="csr"),
        innovation=ZeroOracle(n),
        observation=_RandomSubsetObservation(n, n_obs, sigma_v2, obs_seed),
        mu0=np.zeros(n),
        sigma0=KernelOracle(kernel, grid),
        zero_innovation=True,
    )


def cov_in_grid_order(moments):
    """Dense covariance of a factor-carrying state, rows in grid order."""
    if moments.cov is not None:
        return moments.cov
    ci = moments.factor.cov_dense()
    perm = moments.factor.tree.perm
    out = np.empty_like(ci)
    out[np.ix_(perm, perm)] = ci
    return out
