"""Universal adaptive data augmentation on a numpy training stack."""

from ._kernels import BACKEND
from .adapt import (
    AdaptConfig, AdaptOutcome, FunctionEvaluator, GradEstimate, ModelLossEvaluator, Strategy,
    adapt_step, estimate_gradient, propose_candidates, select_candidate, sign_update,
)
from .augment import (
    ImageBatch, OpInstance, OpKind, ParamLocator, ParamSpec, Pipeline, Registry,
    adaptable_params, apply_op, apply_pipeline, level_to_physical, sample_pipeline,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainerConfig, load_config
from .data import Dataset, DatasetSpec, FormatError, gen_synthetic, load_dataset
from .trainer import RunReport, evaluate, run_ablation, run_epsilon_sweep, train

__version__ = "0.1.0"
