"""Spatially regularized Bayesian GLM on masked voxel lattices.

Exact Gibbs sampling and spatial variational Bayes for the multivariate
regression model with Laplacian (GMRF) priors on the coefficient and
AR-noise fields, backed by sparse Cholesky and preconditioned
conjugate-gradient perturbation sampling.
"""

from .bench import bench_accuracy, bench_sampling, convergence_report
from .gibbs import GibbsConfig, PosteriorChain, inefficiency_factor, run_gibbs
from .lattice import GmrfStructure, VoxelLattice, build_lattice, build_ugl, build_wgl
from .model import (
    GlmDataset,
    GmrfPriors,
    ModelState,
    PrecomputedStats,
    PriorHyper,
    log_joint_unnorm,
    loglik_direct,
    loglik_fast,
    precompute,
)
from .operators import PrecisionOperator, apply_precision, assemble_precision
from .ppm import (
    Contrast,
    PpmMap,
    excursion_set_greedy,
    joint_ppm,
    marginal_ppm_mcmc,
    marginal_ppm_svb,
    threshold_map,
)
from .sampling import (
    NoiseVectors,
    SamplerConfig,
    sample_cholesky,
    sample_pcg,
    sample_prior,
    solve_mean,
)
from .sparse import (
    NotPositiveDefiniteError,
    PcgError,
    Permutation,
    SparseSym,
    TriangularFactor,
    cholesky,
    fill_reducing_order,
    ic0,
    pcg,
    tri_solve,
)
from .svb import SvbConfig, SvbPosterior, extrapolate_alpha, run_svb, svb_marginal_stats
from .synth import SynthConfig, make_design, simulate

__version__ = "0.1.0"
