"""DSMC for the homogeneous Boltzmann equation with adjoint gradients.

The forward solver samples binary collisions for kernels
``q = C_kappa(theta) |u|^beta``; the adjoint pass back-propagates influence
vectors through the recorded collisions to give gradients of final-time
velocity moments with respect to the initial temperatures.
"""

from . import _backend
from .adjoint_dsmc import (
    PARAMETERS,
    AdjointOptions,
    AdjointState,
    GradientResult,
    Objective,
    adjoint_gradient,
    adjoint_step,
    assemble_gradient,
    eta_term,
    final_gamma,
    pathwise_initial_derivative,
    run_adjoint,
)
from .collision_geometry import (
    CollisionFrame,
    adjoint_D_action,
    b_action,
    g_tensor_action,
    post_collision,
    sigma_from_angles,
)
from .forward_dsmc import (
    Algorithm,
    CollisionStepRecord,
    ForwardResult,
    SimConfig,
    VelocityEnsemble,
    init_ensemble,
    run_forward,
    select_pairs,
    step_general,
    step_separable,
)
from .kernel import (
    DegenerateCollisionError,
    KernelSpec,
    eval_kernel,
    grad_log_q_full,
    grad_log_q_velocity,
    grad_log_rejection,
    sample_theta,
    weighted_area,
)
from .verify import (
    Method,
    RunStatistics,
    batch_statistics,
    fd_gradient,
    fd_gradient_matrix,
    gradient_error,
    objective_value,
)

backend_name = _backend.name
set_backend = _backend.set_backend
use_backend = _backend.use_backend
available_backends = _backend.available

__version__ = "0.1.0"
