"""Feedback control of a continuously position-monitored quantum oscillator.

Conditional Gaussian state estimation (the quantum Kalman filter), LQG
gain synthesis from the continuous algebraic Riccati equation, direct
measurement-current feedback, Monte-Carlo trajectory ensembles, and an
exact truncated number-basis oracle for validation.
"""

from .errors import (
    ConfigError,
    CovarianceStepError,
    NumericsError,
    RiccatiError,
    TraceError,
    TruncationError,
)
from .feedback import (
    ClassicalTwin,
    ControllerSpec,
    EnsembleStats,
    ExcessCovariances,
    ExcessVariant,
    FeedbackMode,
    TrajectoryRecord,
    classical_twin_step,
    direct_feedback_mean_terms,
    excess_cov_derivative,
    excess_cov_steady_state,
    new_classical_twin,
    noise_cancelling_gains,
    run_ensemble,
    simulate_trajectory,
    tilde_covariances,
    total_covariances,
)
from .gaussian import (
    GaussianState,
    RecordIncrement,
    covariance_derivative,
    ground_state_covariances,
    innovation_step,
    max_recommended_dt,
    purity,
    record_increment,
    steady_state_covariances,
    step_conditioned,
    thermal_covariances,
)
from .lqg import (
    ControlDesign,
    CostAccumulator,
    cost_increment,
    feedback_gain,
    harmonic_design,
    position_only_design,
    position_only_gain,
    riccati_residual,
    solve_care,
)
from .model import (
    CavityKind,
    CavitySetup,
    PhysicalParams,
    RegimeNumbers,
    intracavity_photon_number,
    measurement_constant,
    regime_numbers,
    scaled_record_increment,
)
from .fock import (
    FockState,
    OperatorSet,
    build_operators,
    coherent_density_matrix,
    direct_feedback_sme_step,
    gaussian_density_matrix,
    moments,
    sme_step,
)
from .verification import ComparisonResult, run_comparison

__version__ = "0.1.0"
