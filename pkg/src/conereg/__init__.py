"""Classifier training under a nondecomposable F1-style size regularizer.

The regularizer is reformulated so that its hard part is a cheap Euclidean
projection onto the cone ``{tau_i <= eps, eps >= 0}``; training alternates
stochastic primal steps with one projection and one dual ascent step per
epoch.  See the README for the experiment CLI.
"""

from .datagen import GenSpec, LabeledDataset, binarize_size, generate, load_csv, save_csv
from .lagrangian import (
    DualState,
    LagrangianGradient,
    MultiClassDualState,
    dual_ascent_step,
    dual_step_schedule,
    full_gradient,
    lagrangian_value,
    minibatch_gradient,
    multiclass_gradients,
    multiclass_lagrangian_value,
    problem2_objective,
)
from .model import (
    Adam,
    ModelParams,
    erm_loss_and_grad,
    forward,
    init_params,
    load_checkpoint,
    per_example_grad_norms,
    predict_logits,
    representation,
    representation_backward,
    save_checkpoint,
)
from .projection import (
    ProjectionResult,
    is_feasible,
    kkt_ok,
    kkt_residuals,
    project_differentiable,
    project_exact,
    project_onepass,
    project_oracle_qp,
    project_pair,
    sort_call_count,
)
from .trainer import (
    TrainConfig,
    TrainTrace,
    TrainingDivergedError,
    evaluate,
    projection_count_report,
    read_trace_csv,
    train,
)

__all__ = [
    "Adam",
    "DualState",
    "GenSpec",
    "LabeledDataset",
    "LagrangianGradient",
    "ModelParams",
    "MultiClassDualState",
    "ProjectionResult",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "binarize_size",
    "dual_ascent_step",
    "dual_step_schedule",
    "erm_loss_and_grad",
    "evaluate",
    "forward",
    "full_gradient",
    "generate",
    "init_params",
    "is_feasible",
    "kkt_ok",
    "kkt_residuals",
    "lagrangian_value",
    "load_checkpoint",
    "load_csv",
    "minibatch_gradient",
    "multiclass_gradients",
    "multiclass_lagrangian_value",
    "per_example_grad_norms",
    "predict_logits",
    "problem2_objective",
    "project_differentiable",
    "project_exact",
    "project_onepass",
    "project_oracle_qp",
    "project_pair",
    "projection_count_report",
    "read_trace_csv",
    "representation",
    "representation_backward",
    "save_checkpoint",
    "save_csv",
    "sort_call_count",
    "train",
]
