"""Online estimation of hidden Markov models with Riemannian Gaussian emissions."""

from .manifold import (
    SPD,
    ConvergenceError,
    ManifoldError,
    PoincareDisk,
    disk_to_spd,
    distance,
    geodesic_point,
    karcher_mean,
    translate_from,
    translate_to,
)
from .gaussian import (
    RiemannianGaussian,
    UnsupportedManifoldError,
    delta_from_sigma,
    log_density,
    log_normalizer,
    sample_gaussian,
    sigma_from_delta,
)
from .markov import (
    ChainSample,
    HmmParams,
    InvalidParamsError,
    disk_example_params,
    simulate_chain,
    validate,
)
from .online import (
    FilterState,
    NumericalError,
    backward_window,
    forward_step,
    online_step,
    run_online,
    update_delta,
    update_mean,
    update_transition,
)
from .kmeans import KMeansError, estimate_initial_params, kmeans_fit, seed_filter
from .experiment import (
    ExperimentConfig,
    accuracy,
    decode_states,
    emit_plot_data,
    fit,
    load_config,
    run_experiment,
    transition_rmse,
)

__version__ = "0.1.0"
