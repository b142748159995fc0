"""Parameter fitting and latent-state estimation."""
from .action_model import ActionFitConfig, ActionFitResult, UnidentifiableError, fit_action_model, mc_log_likelihood
from .em import EMConfig, EMReport, em_fit_lds
from .kalman import (
    GaussianBelief,
    NumericalFailure,
    SmootherOutput,
    kalman_filter,
    kalman_smooth,
    log_likelihood,
    sample_posterior,
)
from .particle import (
    DegeneracyError,
    ParticleBelief,
    PFConfig,
    PFObservation,
    pf_estimate,
    pf_init,
    pf_step,
)
