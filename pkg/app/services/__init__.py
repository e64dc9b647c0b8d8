from .training_service import (Batch, Example, StepResult, TrainingService, TrainResult, model_config_for,
                               sample_batch, train, train_step)
from .evaluation_service import (EvaluationService, average_precision, cue_overlap, evaluate, frame_level,
                                 pr_curve, top_predictions)
from .experiment_service import compare_variants, default_variants

__all__ = [
    "Batch",
    "Example",
    "StepResult",
    "TrainingService",
    "TrainResult",
    "model_config_for",
    "sample_batch",
    "train",
    "train_step",
    "EvaluationService",
    "average_precision",
    "cue_overlap",
    "evaluate",
    "frame_level",
    "pr_curve",
    "top_predictions",
    "compare_variants",
    "default_variants",
]
