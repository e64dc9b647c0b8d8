# app/models/__init__.py
# Importa os modelos pydantic para exposição
from .region import ImageExtent, OverlapBounds, ProposalSet, Region
from .configs import (EvalConfig, ModelConfig, ProposalConfig, SyntheticConfig, TrainConfig,
                      TrunkLayer, synthetic_train_config)
from .dataset import CueGroundTruth, Dataset, ImageRecord, Instance
from .report import (ClassResult, CueOverlapRow, CueOverlapSummary, EvalReport, FramePrediction,
                     ComparisonReport, GradcheckResult, InstancePrediction, PRPoint, TopPrediction,
                     Variant, VariantRun)
from .manifest import RunManifest

__all__ = [
    "ImageExtent",
    "OverlapBounds",
    "ProposalSet",
    "Region",
    "EvalConfig",
    "ModelConfig",
    "ProposalConfig",
    "SyntheticConfig",
    "TrainConfig",
    "TrunkLayer",
    "synthetic_train_config",
    "CueGroundTruth",
    "Dataset",
    "ImageRecord",
    "Instance",
    "ClassResult",
    "CueOverlapRow",
    "CueOverlapSummary",
    "GradcheckResult",
    "ComparisonReport",
    "Variant",
    "VariantRun",
    "TopPrediction",
    "EvalReport",
    "FramePrediction",
    "InstancePrediction",
    "PRPoint",
    "RunManifest",
]
