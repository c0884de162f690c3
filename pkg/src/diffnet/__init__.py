"""Direct estimation of, and inference on, differences between pairwise
Markov-network parameter vectors from two samples.

The pipeline never estimates either individual network: a penalized
density-ratio fit gives a sparse initial difference estimate, a one-step
correction debiases any single edge, and bootstrap-sketched max statistics
give simultaneous intervals and an equal-graph test.  An Ising simulation
harness reproduces the accompanying experiments at desk scale.
"""

from ._kernels import USING_EXTENSION
from .bootstrap import (
    BootstrapSketch,
    GlobalTestResult,
    empirical_sketch,
    global_test,
    multiplier_sketch,
    quantile,
    simultaneous_ci,
)
from .inference import (
    DebiasResult,
    PooledCov,
    ci,
    debias_all,
    debias_edge,
    multi_edge_cov,
    naive_refit,
    oracle_fit,
    pooled_cov,
    sparklie1,
    sparklie2,
    variance,
    z_stat,
)
from .ising import (
    GraphPair,
    IsingModel,
    exact_enumerate,
    gibbs_sample,
    make_null_graph,
    make_pair,
    perturb_graph,
    population_kliep_oracle,
)
from .kliep import (
    KliepProblem,
    RatioState,
    gradient,
    hessian,
    hessian_ustat,
    log_partition_hat,
    loss,
    ratio_state,
)
from .model import (
    EdgeMap,
    edge_to_index,
    index_to_edge,
    ising_suff_stats,
    load_samples,
    save_samples,
)
from .solvers import (
    SolverOptions,
    SparseSolution,
    omega_lasso,
    omega_scaled_lasso,
    refit_omega,
    refit_support,
    sparse_kliep,
)
from . import harness

__version__ = "0.1.0"
