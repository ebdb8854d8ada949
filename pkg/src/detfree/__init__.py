"""Determinant-free MCMC for linear Gaussian models with sparse structure.

Auxiliary Gaussian variables remove the log-determinant from the posterior,
so sampling needs only sparse products, (multi-shift) conjugate gradients
and a rational approximation of the inverse square root.
"""
from ._backend import BACKEND, HAVE_COMPILED, get_num_threads, set_num_threads
from .diagnostics import Summary, ess, mcse, summarize
from .errors import (
    ConfigError,
    ConvergenceError,
    LanczosBreakdown,
    NotPositiveDefiniteError,
    NumericalError,
    SizeGuardError,
)
from .krylov import SolveStats, SolverConfig, cg_solve, shifted_cg_solve
from .mcmc import (
    ChainConfig,
    ChainState,
    ProposalConfig,
    Trace,
    adapt_proposal,
    gibbs_update_aux_cov,
    gibbs_update_aux_prec,
    log_joint_aug,
    mh_update_theta,
    run_cholesky_chain,
    run_detfree_chain,
)
from .models import (
    GMRFWhiteningModel,
    RandomPrecisionModel,
    WendlandGPModel,
    marginal_loglik_dense,
    marginal_loglik_gmrf,
    simulate_data,
)
from .rational import apply_invsqrt, auto_order, build_invsqrt_quadrature, error_bound
from .sparse_linalg import SparseMatrix, SpectralBounds, read_matrix_market, write_matrix_market

__version__ = "0.1.0"
