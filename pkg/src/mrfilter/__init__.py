"""Multi-resolution filtering for linear Gaussian state-space models."""

from .blocksparse import (MultiResFactor, apply_inverse_transpose,
                          build_lambda, cholesky_and_invert, evolve_factor)
from .covariance import (DenseOracle, DiagonalOracle, ForecastOracle,
                         KernelOracle, MaternKernel, ZeroOracle)
from .filters import (FilterMoments, KalmanFilter, MultiResolutionFilter,
                      kf_step, mrf_forecast, mrf_step)
from .baselines import (Ensemble, EnsembleKalmanFilter, LowRankFilter,
                        NoHistoryFilter, TaperSpec, kanter_taper,
                        taper_matrix, wendland2_taper)
from .metrics import coverage, kl_gaussian, rasd, rmspe_ratio
from .mrd import mrd, mrd_error_report
from .particle import (ParticleSet, integrated_loglik, pmrf_step, resample)
from .partition import (PartitionConfig, PartitionTree, build_partition,
                        degenerate_config)
from .ssm import (StateSpaceModel, build_1d_advection_diffusion,
                  build_2d_advection_diffusion, simulate_truth)

__version__ = "0.1.0"
