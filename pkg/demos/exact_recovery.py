"""Demonstrate the configuration in which the filter is exact.

With an exponential covariance on a 1D grid and knots placed on region
boundaries, the screening effect makes the factorization exact, and the
multi-resolution filter reproduces the dense Kalman filter to machine
precision at every step.
"""

import numpy as np

from mrfilter import (KalmanFilter, MaternKernel, KernelOracle,
                      MultiResolutionFilter, PartitionConfig,
                      build_partition, mrd_error_report, simulate_truth)
from mrfilter.ssm import StateSpaceModel, _RandomSubsetObservation
from mrfilter.covariance import ZeroOracle
import scipy.sparse as sp


def main():
    n, T = 80, 20
    grid = ((np.arange(n) + 0.5) / n).reshape(-1, 1)
    kernel = MaternKernel(nu=0.5, length_scale=0.3)

    boundary = build_partition(
        grid, PartitionConfig(M=3, J=3, r=2, boundary_knots=True))
    template = build_partition(grid, PartitionConfig(M=3, J=3, r=2))
    for name, tree in (("boundary knots", boundary),
                       ("template knots", template)):
        report = mrd_error_report(KernelOracle(kernel, grid), tree)
        print(f"{name:>15}: max |BB' - Sigma| = "
              f"{report['max_abs_error']:.2e}")

    model = StateSpaceModel(
        grid=grid,
        evolution=sp.identity(n, format="csr"),
        innovation=ZeroOracle(n),
        observation=_RandomSubsetObservation(n, 24, 0.05, seed=3),
        mu0=np.zeros(n),
        sigma0=KernelOracle(kernel, grid),
        zero_innovation=True,
    )
    sim = simulate_truth(model, T, seed=11)
    kf = KalmanFilter(model)
    mrf = MultiResolutionFilter(model, boundary)
    ks, ms = kf.initialize(), mrf.initialize()
    worst = 0.0
    for t in range(1, T + 1):
        ks = kf.step(ks, sim.y[t], t)
        ms = mrf.step(ms, sim.y[t], t)
        worst = max(worst, float(np.max(np.abs(ks.mu - ms.mu))))
    print(f"\nworst mean discrepancy vs the dense filter over T={T}: "
          f"{worst:.2e}")
    print("the block-sparse filter is exact here, at a fraction of the "
          "dense cost")


if __name__ == "__main__":
    main()
