"""Sliced transport plans with differentiable sorting.

Point-set couplings from one-dimensional projections: exact OT oracles, the
closed-form smoothed-sorting kernel, lifted and two-branch differentiable
plans, mini-batch slicer training, and reproducible study harnesses.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    InfeasibleRegimeError,
    ParseError,
    UndefinedCorrelationError,
    UnsupportedInstanceError,
)
from .exact_ot import OtResult, TransportPlan, ot_1d, ot_assignment, pearson
from .lapsum import (
    LapSumCdf,
    SoftPermutation,
    soft_permutation,
    soft_permutation_vjp,
    soft_rank,
    soft_topk_mask,
)
from .measures import (
    CostMatrix,
    DatasetSpec,
    DiscreteMeasure,
    Drift,
    cost_matrix,
    generate,
    load_points,
    save_points,
    uniform_measure,
)
from .slicer import (
    LinearSlicer,
    MlpSlicer,
    PerturbationConfig,
    load_checkpoint,
    make_slicer,
    perturbed_eval,
    sample_perturbation,
    save_checkpoint,
)
from .stp import NwCornerPlan, StpResult, estimate_J_eta, lift_plan, nw_corner, stp_value, two_branch_plan
from .train import (
    TrainConfig,
    TrainTrace,
    default_context,
    incomplete_estimator,
    minibatch_kernel,
    train_amortized,
    train_minstp,
)

__all__ = [name for name in dir() if not name.startswith("_")]
