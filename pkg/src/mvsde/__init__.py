"""Particle simulation of path-distribution dependent SDEs and Monte Carlo
checks of their occupation, Harnack and gradient estimates."""

__version__ = "0.1.0"

from .coeffs import CoefficientSet, DiniModulus, PairClassK, dini_integral, lqp_norm, pair_in_K, probe
from .errors import *  # noqa: F401,F403
from .functionals import SegmentFunctional, SpaceTimeFunction
from .girsanov import (
    GirsanovAccumulator,
    Shift,
    ShiftCoupling,
    beta_bound,
    coupled_shift_run,
    log_harnack_drift,
    shift_gamma,
    weight_moment,
)
from .measure import EmpiricalLaw, TransportPlan, optimal_plan, sinkhorn, theta_moment, wasserstein_theta
from .mollify import Mollifier, mollify
from .segment import SegmentBatch, SegmentPath, TimeGrid, Trajectory, extract_segment, segment_sup_distance, uniform_norm
from .solver import (
    InitialLaw,
    LawFlow,
    ParticleEnsemble,
    SolverConfig,
    euler_step,
    law_flow_distance,
    run_frozen_law,
    run_interacting,
    run_picard,
)
from .stats import StatEstimate
from .verify import (
    HarnackReport,
    KrylovReport,
    estimate_Ptf,
    khasminskii_check,
    krylov_check,
    verify_gradient_estimate,
    verify_log_harnack,
    verify_power_harnack,
    verify_shift_harnack,
)
from .zoo import MODEL_NAMES, model_zoo
