"""Desk-scale simulator of mean-field-seeded Gibbs state preparation and
gradient estimators for training Boltzmann machines."""

from .amplitude import (
    AEOutcome,
    accuracy_bound,
    ae_outcome_distribution,
    amplified_probability,
    choose_m,
    invert_amplified,
    sample_ae,
)
from .data import (
    IdxFormatError,
    base_patterns,
    coarse_grain,
    gen_synthetic,
    load_idx_images,
    load_idx_labels,
    subsample_digits,
)
from .meanfield import (
    KappaReport,
    MeanFieldNotConverged,
    MeanFieldSolution,
    hedge,
    kappa_report,
    kappa_report_csv,
    kl_divergence,
    log_q_vector,
    log_z_q,
    q_probability,
    solve_mean_field,
)
from .model import (
    ENUMERATION_CAP,
    BoltzmannModel,
    Configuration,
    EnumerationCapError,
    GibbsTable,
    ModelInvariantError,
    SchemaError,
    all_energies,
    deserialize_model,
    energy,
    enumerate_configurations,
    gibbs_table,
    moment,
    random_model,
    serialize_model,
)
from .prep import (
    PrepModel,
    ResourceReport,
    acceptance_weight,
    grover_repetitions,
    prep_model,
    resource_report,
    sample_prep,
    sample_prep_arrays,
)
from .training import (
    CDGradient,
    Dataset,
    EstimateError,
    ExactGradient,
    ExactObjective,
    GEQAEGradient,
    GEQSGradient,
    GradientEstimate,
    NoisyGradient,
    OptimumReport,
    TrainerConfig,
    TrainingDivergence,
    cd_k_gradient,
    exact_gradient,
    geqae_gradient,
    geqs_gradient,
    greedy_layerwise_train,
    oml_objective,
    optima_distance,
    optimize,
    verify_local_optimum,
)

__version__ = "0.1.0"
