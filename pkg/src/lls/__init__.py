"""Linear latent structure analysis of high-dimensional categorical data."""

from .basis import Basis, BasisError
from .basis_select import PureTypeSpec, cluster_mean_basis, project_pure_type, rebase
from .cluster import ClusterResult, hierarchical, kmeans, misclassification_rate
from .dataset import (
    MISSING,
    DataFormatError,
    PatternCounter,
    SurveyDesign,
    load_dataset,
    pattern_frequency,
)
from .moments import (
    ExactMoments,
    FrequencyMatrix,
    MixingModel,
    build_frequency_matrix,
    exact_frequency_matrix,
    exact_moment,
    wilson_interval,
)
from .qp import QuadraticProgram, kkt_check, solve_qp
from .scores import bayes_score, estimate_all_scores, estimate_score
from .sim import (
    ExperimentConfig,
    make_block_basis,
    run_cluster_experiment,
    run_recovery_experiment,
    sample_scores,
    simulate_responses,
)
from .subspace import (
    complete_matrix,
    estimate_rank,
    find_subspace,
    fit_plane,
    rotate,
    subspace_distance,
    unrotate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
