"""Time-varying sparse precision networks and their linear graph embeddings."""

from dfcembed.ingest import Population, SubjectSession, load_session, highpass_filter, standardize
from dfcembed.covariance import CovarianceSequence, kernel_weighted_covariances, select_bandwidth
from dfcembed.single import (
    PrecisionSequence,
    SolverConfig,
    fused_lasso_chain,
    kkt_residual,
    objective_value,
    solve_single,
    tune_hyperparams,
)
from dfcembed.laplacian import (
    LaplacianSequence,
    StackedLaplacians,
    laplacian,
    laplacian_sequence,
    stack_population,
    vectorize_upper,
    devectorize_upper,
)
from dfcembed.pca import PcaModel, fit_pca, project_pca, mean_trajectory, component_network
from dfcembed.lda import (
    ContrastSpec,
    LdaModel,
    ScreenResult,
    evaluate_heldout,
    fit_lda,
    lda_network,
    project_lda,
    sparse_lda_subject,
    stability_screen,
)

__version__ = "0.1.0"
