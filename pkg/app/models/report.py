# app/models/report.py
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.region import OverlapBounds, Region


class PRPoint(BaseModel):
    """Ponto da curva precisão/recall em um limiar de score."""
    model_config = ConfigDict(frozen=True)

    threshold: float
    precision: float
    recall: float


class ClassResult(BaseModel):
    """Resultado por classe. ap é None quando a classe não tem positivos no conjunto avaliado."""
    class_name: str
    positives: int = Field(0, ge=0)
    ap: Optional[float] = Field(None, ge=0.0, le=1.0)
    curve: List[PRPoint] = Field(default_factory=list)


class InstancePrediction(BaseModel):
    """Probabilidades de uma instância e as regiões secundárias escolhidas por ação."""
    instance_id: str
    image_id: str
    frame_id: str
    target: Tuple[int, ...] = Field(..., description="Vetor binário de verdade por classe.")
    probabilities: Tuple[float, ...]
    selected: Tuple[Tuple[Region, ...], ...] = Field(..., description="Por ação, as regiões secundárias escolhidas.")


class FramePrediction(BaseModel):
    """Scores agregados de um frame: máximo por ação sobre as instâncias."""
    frame_id: str
    target: Tuple[int, ...]
    probabilities: Tuple[float, ...]
    instance_ids: Tuple[str, ...]


class CueOverlapRow(BaseModel):
    instance_id: str
    action: str
    iou: float


class CueOverlapSummary(BaseModel):
    """Qualidade da seleção: IoU entre a secundária escolhida e o glifo plantado."""
    threshold: float
    evaluated: int = Field(0, description="Instâncias não-Other corretamente classificadas com glifo.")
    hits: int = 0
    fraction: Optional[float] = None
    rows: List[CueOverlapRow] = Field(default_factory=list)


class TopPrediction(BaseModel):
    instance_id: str
    probability: float
    correct: bool
    selected: Tuple[Region, ...]


class EvalReport(BaseModel):
    """
    Relatório de avaliação: AP por classe, mAP (média simples das classes com AP
    definido), probabilidades por instância e as secundárias escolhidas.
    """
    mode: str
    level: Literal["instance", "frame"] = "instance"
    ap_variant: Literal["uninterpolated", "11-point"] = "uninterpolated"
    class_names: Tuple[str, ...]
    classes: List[ClassResult]
    mean_ap: Optional[float] = Field(None, ge=0.0, le=1.0)
    instances: List[InstancePrediction] = Field(default_factory=list)
    frames: List[FramePrediction] = Field(default_factory=list)
    top_predictions: Dict[str, List[TopPrediction]] = Field(default_factory=dict)
    cue_overlap: Optional[CueOverlapSummary] = None

    @model_validator(mode="after")
    def _mean_matches(self) -> "EvalReport":
        defined = [c.ap for c in self.classes if c.ap is not None]
        if defined and self.mean_ap is not None:
            expected = sum(defined) / len(defined)
            if abs(expected - self.mean_ap) > 1e-12:
                raise ValueError(f"mAP {self.mean_ap} difere da média das classes {expected}")
        return self

    def ap_by_class(self) -> Dict[str, Optional[float]]:
        return {c.class_name: c.ap for c in self.classes}


class GradcheckResult(BaseModel):
    """Uma linha da tabela de verificação de gradientes (operador x semente)."""
    operator: str
    seed: int
    max_rel_error: Optional[float] = None
    tolerance: float
    passed: bool
    resamples: int = 0
    error: Optional[str] = None


class Variant(BaseModel):
    """Uma linha do experimento de controle: modo e, para rstar, limites e n_S."""
    model_config = ConfigDict(frozen=True)

    name: str
    mode: Literal["rstar", "rcnn", "random", "scene"]
    bounds: Optional[OverlapBounds] = None
    n_secondary: int = Field(1, ge=1)


class VariantRun(BaseModel):
    variant: str
    seed: int
    mean_ap: float
    ap_by_class: Dict[str, Optional[float]]


class ComparisonReport(BaseModel):
    """Resultados por variante e semente, com a mediana do mAP sobre as sementes."""
    class_names: Tuple[str, ...]
    runs: List[VariantRun] = Field(default_factory=list)
    median_map: Dict[str, float] = Field(default_factory=dict)
