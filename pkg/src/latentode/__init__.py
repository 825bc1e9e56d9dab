"""Identifiability analysis and estimation for linear ODEs with hidden confounders."""

__version__ = "0.1.0"

from .linalg_core import (  # noqa: E402
    Nilpotency,
    RankResult,
    krylov_matrix,
    mat_exp,
    mat_exp_batch,
    nilpotency,
    numerical_rank,
    time_power_row,
    uniform_steps,
)
from .systems import (  # noqa: E402
    AugmentedSystem,
    Exponential,
    LatentDagSystem,
    LatentDriverSystem,
    NotADagError,
    Polynomial,
    Trigonometric,
    augment,
    augment_dag,
    augment_exp,
    augment_poly,
    augment_trig,
    beta_vector,
    block_matrix,
    gamma_vector,
    gamma_vector_for,
    moments,
    validate_latent_dag,
)
from .identifiability import (  # noqa: E402
    CONDITION_IDS,
    IdentifiabilityReport,
    check_A0,
    check_A1,
    check_aug_A0,
    check_B1,
    check_B2_B3_B4,
    check_B3,
    check_B4,
    check_B5,
    check_C1,
    check_C2,
    check_C3,
)
from .simulate import (  # noqa: E402
    InterventionSpec,
    TrajectoryGrid,
    equally_spaced,
    hidden_state,
    intervene_clamp,
    latent_state,
    observed_state,
    sample_trajectory,
)
from .recovery import (  # noqa: E402
    B3ViolationError,
    B4ViolationError,
    IdentifiedProducts,
    products_from_system,
    recover_B,
    recover_B_entrywise,
    recover_G,
    recover_moment_matrices,
)
from .estimate import (  # noqa: E402
    FAMILY,
    SINGLE,
    EstimationProblem,
    EstimationResult,
    ParameterLayout,
    ReplicationSummary,
    SolverOptions,
    fit_nls,
    make_problem,
    mse_blocks,
    residuals,
    run_replications,
)
from .config import ConfigError, ExperimentConfig, load_config  # noqa: E402
from .runner import NumericalFailure, ResultRecord, emit_results, run_task  # noqa: E402
