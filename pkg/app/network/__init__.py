from .params import ModelParams, glorot_bound, init_params, parameter_shapes
from .model import (ForwardResult, Prediction, PrimaryResult, forward_scores, gradcheck_cases, predict,
                    probabilities, region_features, score_regions, trunk)

__all__ = [
    "ModelParams",
    "glorot_bound",
    "init_params",
    "parameter_shapes",
    "ForwardResult",
    "Prediction",
    "PrimaryResult",
    "forward_scores",
    "gradcheck_cases",
    "predict",
    "probabilities",
    "region_features",
    "score_regions",
    "trunk",
]
