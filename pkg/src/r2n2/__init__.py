"""Trainable iterative-solver superstructures.

One forward pass is one outer iteration of an iterative algorithm: a
recurrence of function evaluations at learned linear combinations of
earlier evaluations, closed by a learned output combination. Depending on
the problem family plugged in, the same structure specializes to a
Krylov-style linear solver step, a Newton-Krylov-style nonlinear step, or
a Runge-Kutta integration step, and its weights are trained by unrolling
a few iterations and backpropagating through them.
"""

from .analysis import (
    AlgorithmOperator,
    AnalysisError,
    CertificationResult,
    ConvergenceStats,
    algorithm_operator,
    certify_convergence,
    certify_matrix,
    convergence_trace_stats,
    fit_loglog_slope,
    relative_performance,
    residual_reduction,
    residual_reduction_nk,
    theta_to_zeta,
)
from .autodiff import (
    DivergedRolloutError,
    GradientError,
    ParameterGradient,
    finite_diff_grad,
    grad_rollout_loss,
)
from .baselines import (
    ARNOLDI_BREAKDOWN_TOL,
    ButcherTableau,
    IntegrationError,
    KrylovBasis,
    arnoldi,
    euler,
    gmres_cycle,
    gmres_restarted,
    heun2,
    jacobian_vector_fd,
    krylov_matrix,
    kutta3,
    nk_gmres_step,
    reference_integrate,
    reference_trajectory,
    rk4_classic,
    rk_method,
    rk_step,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    PRESET_NAMES,
    emit_plot,
    run_grad_check,
    run_preset,
)
from .linalg import (
    LinalgError,
    PowerIterationError,
    RankDeficientError,
    back_substitute,
    haar_orthogonal,
    householder_qr,
    least_squares,
    mat_vec,
    spectral_norm,
)
from .problems import (
    BUILTIN_MATRIX_IDS,
    ChandrasekharPoleError,
    ChandrasekharProblem,
    Dataset,
    GENERATOR_TAG,
    LinearProblem,
    ProblemInstance,
    VanDerPolProblem,
    builtin_b_tilde,
    builtin_matrix,
    chandrasekhar_jacobian,
    chandrasekhar_matrix,
    chandrasekhar_residual,
    dataset_from_json,
    dataset_to_json,
    embed_problem,
    gen_chandrasekhar_dataset,
    gen_ivp_dataset,
    gen_linear_matrix,
    gen_uniform_symmetric,
    make_linear_dataset,
    sample_rhs,
    spectrum_shift,
    split_indices,
    vdp_jacobian,
    vdp_rhs,
)
from .superstructure import (
    DIVERGENCE_GUARD,
    IterationRecord,
    R2N2Config,
    R2N2Parameters,
    RolloutTrace,
    fd_params_to_direct,
    forward_pass,
    init_parameters,
    layer_forward,
    layer_forward_fd,
    load_parameters,
    output_layer,
    param_vector,
    params_from_json,
    params_from_vector,
    params_to_json,
    rollout,
    save_parameters,
)
from .training import (
    AdamState,
    LossSpec,
    TrainSettings,
    TrainingRun,
    adam_step,
    evaluate_loss,
    geometric_weights,
    loss_final_iterate,
    loss_integration,
    loss_residual,
    loss_target,
    save_training_run,
    train,
)

__version__ = "0.1.0"
