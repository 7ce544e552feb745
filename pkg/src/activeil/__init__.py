"""Active class-incremental learning on imbalanced data streams."""
from .acquisition import (
    ClassDistribution,
    relative_minority_distance,
    select_balanced_coreset,
    select_coreset,
    select_entropy,
    select_margin,
    select_poorest_first,
    select_random,
    update_distribution,
)
from .config import ExperimentConfig, load_config
from .data import (
    BudgetLedger,
    ClassIncrementalStream,
    GeneratorSpec,
    Oracle,
    Samples,
    generate_gaussian_stream,
    load_feature_dataset,
    make_imbalanced_counts,
)
from .learner import (
    ClassPriorTable,
    LearnerModel,
    TrainConfig,
    calibrated_predict,
    embed,
    expand_head,
    gradient_check,
    init_model,
    predict_proba,
    train,
)
from .memory import ExemplarMemory, herding_order, update_memory
from .metrics import average_incremental_accuracy, balance_trace, coefficient_of_variation
from .pipeline import run_experiment, run_joint_upper_bound, run_supervised_upper_bound

__version__ = "0.1.0"
