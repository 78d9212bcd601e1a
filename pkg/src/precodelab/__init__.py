"""Limited-feedback MIMO precoding laboratory.

Builds transmit-covariance codebooks from uplink training data (mixture
clustering or Lloyd iterations), encodes feedback either from noisy pilot
observations or from perfect channel knowledge, and evaluates every
strategy through seeded normalized-spectral-efficiency simulations.
"""

from .codebook import (
    Codebook,
    PgdOptions,
    TransmitCovariance,
    gmm_codebook,
    lau_update,
    lloyd_fit,
    pgd_sum_rate,
    project_feasible,
    spectral_efficiency,
    waterfill_optimal,
)
from .estimation import (
    Dictionary,
    ObservationModel,
    PilotMatrix,
    build_dictionary,
    build_pilot_matrix,
    estimate_gmm,
    estimate_omp_genie,
    estimate_scov,
    observe,
    responsibilities_from_observation,
    sample_covariance,
)
from .feedback import (
    CcdfTable,
    FeedbackDecision,
    NseRecord,
    Strategy,
    baseline_uniform,
    baseline_uniform_eigenspace,
    ccdf,
    evaluate_strategies,
    select_exhaustive,
    select_from_channel,
    select_from_observation,
)
from .gmm import (
    ComplexGaussian,
    FitOptions,
    GmmModel,
    count_covariance_parameters,
    fit_em,
    fit_kronecker,
    log_density,
    responsibilities_from_channel,
)
from .scenario import (
    ChannelDataset,
    ChannelSample,
    Orientation,
    ScenarioConfig,
    emulate_downlink,
    generate_paired_dataset,
    split_dataset,
    steering_ula,
    steering_ura,
)

__version__ = "0.1.0"
