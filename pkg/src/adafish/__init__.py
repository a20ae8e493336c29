"""Gram-preconditioned adaptive optimization for low-rank fine-tuning.

The optimizer keeps a nondiagonal second moment: an exponential moving
average of the r x r gradient gram g g^T per low-rank parameter, whose
damped inverse preconditions the bias-corrected momentum. The package
bundles the LoRA/Tucker/CP parameterizations it targets, exact-backprop
models, verification suites for the underlying algebraic identities, an
experiment harness with CLI, and sklearn-style estimators.
"""

from .config import ExperimentConfig, load_config
from .estimators import LoraNetClassifier, LoraNetRegressor
from .fisher import (
    FisherGram,
    KroneckerMomentReport,
    fisher_gram,
    natural_dir_left,
    natural_dir_right,
    verify_fisher_hessian,
    verify_kronecker_second_moment,
)
from .linalg import (
    SeededRng,
    ShapeError,
    SingularMatrixError,
    matmul,
    push_through_solve,
    seeded_gaussian,
    spd_solve,
)
from .model import (
    Batch,
    LoraLinear,
    MlpModel,
    build_mlp,
    finite_diff_check,
    forward,
    lora_grads,
    lora_materialize,
    nll_loss_and_grad,
)
from .optim import (
    AdaFishState,
    AdamWState,
    Hyperparams,
    ParamPolicy,
    adafish_step,
    adamw_step,
    cosine_lr,
    make_optimizer,
    sgd_momentum_step,
)
from .tensor_peft import (
    CpFactors,
    TuckerFactors,
    cp_reconstruct,
    mode_product,
    param_count,
    slice_cost_model,
    tucker_reconstruct,
)
from .training import ConvergenceDiagnostics, MetricsRecord, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "AdaFishState",
    "AdamWState",
    "Batch",
    "ConvergenceDiagnostics",
    "CpFactors",
    "ExperimentConfig",
    "FisherGram",
    "Hyperparams",
    "KroneckerMomentReport",
    "LoraLinear",
    "LoraNetClassifier",
    "LoraNetRegressor",
    "MetricsRecord",
    "MlpModel",
    "ParamPolicy",
    "SeededRng",
    "ShapeError",
    "SingularMatrixError",
    "TrainResult",
    "TuckerFactors",
    "adafish_step",
    "adamw_step",
    "build_mlp",
    "cosine_lr",
    "cp_reconstruct",
    "finite_diff_check",
    "fisher_gram",
    "forward",
    "load_config",
    "lora_grads",
    "lora_materialize",
    "make_optimizer",
    "matmul",
    "mode_product",
    "natural_dir_left",
    "natural_dir_right",
    "nll_loss_and_grad",
    "param_count",
    "push_through_solve",
    "seeded_gaussian",
    "sgd_momentum_step",
    "slice_cost_model",
    "spd_solve",
    "train",
    "tucker_reconstruct",
    "verify_fisher_hessian",
    "verify_kronecker_second_moment",
]
