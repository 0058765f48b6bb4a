"""Doubly non-central beta (DNCB) matrix factorization and tri-factorization."""

__version__ = "0.1.0"

from .bessel import (
    BesselParams,
    SamplerMethod,
    bessel_log_pmf,
    bessel_mean,
    bessel_mode,
    bessel_variance,
    sample_bessel,
)
from .errors import (
    CheckpointError,
    ConvergenceError,
    CorruptCheckpointError,
    DncbError,
    DomainError,
    IncompatibleCheckpointError,
    MethodUnavailableError,
    UnderflowError,
)
from .evaluation import (
    HeldoutMask,
    StabilityReport,
    cooccurrence,
    make_mask,
    prior_predictive_mse,
    rescaled_ppd,
    stability_kl,
    stability_sweep,
)
from .gibbs import (
    Chain,
    FitResult,
    fit,
    gibbs_allocate_subcounts,
    gibbs_iteration,
    gibbs_sample_counts,
    gibbs_sample_gammas,
    gibbs_update_factors_mf,
    gibbs_update_factors_td,
    initialize_state,
    run_chain,
)
from .model import (
    AugmentedState,
    BoundedMatrix,
    DncbParams,
    Hyperparams,
    MfFactors,
    ModelSpec,
    Subcounts,
    TdFactors,
    compose_rates_mf,
    compose_rates_td,
    sample_dncb,
    simulate_mf,
    simulate_td,
)
from .special import (
    KummerArgs,
    MomentScenario,
    bessel_quotient,
    dncb_log_pdf,
    expected_beta,
    kummer_m,
    log_bessel_i,
    q_factor,
)
