# app/models/configs.py
"""
Modelos de configuração de cada execução: propostas, arquitetura, treino,
dados sintéticos e avaliação. Todos validam os próprios invariantes; valores
inválidos levantam pydantic.ValidationError.
"""
import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.region import ImageExtent, OverlapBounds

Mode = Literal["rstar", "rcnn", "random", "scene"]
LossKind = Literal["softmax", "multilabel"]


class ProposalConfig(BaseModel):
    """Grade determinística multi-escala que substitui o Selective Search."""
    model_config = ConfigDict(frozen=True)

    scales: Tuple[float, ...] = Field((16, 24, 32, 48, 64), description="Lados das caixas (pixels); área = escala².")
    aspect_ratios: Tuple[float, ...] = Field((0.5, 1.0, 2.0), description="Razões largura/altura.")
    stride_fraction: float = Field(0.5, description="Passo da grade como fração do lado da caixa.")
    jitter_seed: int = Field(0, description="Semente do deslocamento da origem da grade.")
    jitter_fraction: float = Field(0.0, ge=0.0, lt=1.0, description="Deslocamento máximo da origem, em frações do passo (0 desativa).")

    @field_validator("scales", "aspect_ratios")
    @classmethod
    def _positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if not values:
            raise ValueError("lista vazia")
        if any(not (v > 0) for v in values):
            raise ValueError(f"todos os valores devem ser > 0: {values}")
        return values

    @field_validator("stride_fraction")
    @classmethod
    def _stride(cls, value: float) -> float:
        if not (0 < value <= 1):
            raise ValueError(f"stride_fraction deve estar em (0, 1]: {value}")
        return value


class TrunkLayer(BaseModel):
    """Uma camada do tronco convolucional: 'conv' (seguida de ReLU) ou 'pool' (max)."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["conv", "pool"]
    channels: int = Field(0, ge=0, description="Canais de saída (apenas conv).")
    kernel: int = Field(3, ge=1)
    stride: int = Field(1, ge=1)
    padding: int = Field(0, ge=0, description="Padding simétrico (apenas conv).")


def default_trunk() -> Tuple[TrunkLayer, ...]:
    return (
        TrunkLayer(kind="conv", channels=8, kernel=3, stride=1),
        TrunkLayer(kind="pool", kernel=2, stride=2),
        TrunkLayer(kind="conv", channels=16, kernel=3, stride=1),
        TrunkLayer(kind="pool", kernel=2, stride=2),
    )


class ModelConfig(BaseModel):
    """
    Arquitetura do modelo: tronco compartilhado, ROI pooling P×P, duas camadas
    totalmente conectadas compartilhadas (fc6, fc7) e as cabeças de pontuação
    primária e secundária, uma linha por ação.
    """
    model_config = ConfigDict(frozen=True)

    extent: ImageExtent = Field(default_factory=lambda: ImageExtent(width=64, height=64))
    in_channels: int = Field(3, ge=1)
    trunk: Tuple[TrunkLayer, ...] = Field(default_factory=default_trunk)
    roi_pool_size: int = Field(4, ge=1, description="P: lado da grade fixa do ROI pooling.")
    fc_widths: Tuple[int, int] = Field((64, 64), description="Larguras de fc6 e fc7.")
    class_names: Tuple[str, ...] = Field(..., description="Ações (ou atributos) em ordem.")
    loss_kind: LossKind = "softmax"
    mode: Mode = "rstar"
    n_secondary: int = Field(1, ge=1, description="n_S: regiões secundárias escolhidas gulosamente (apenas rstar).")
    bounds: OverlapBounds = Field(default_factory=OverlapBounds)

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if len(self.class_names) < 2:
            raise ValueError(f"são necessárias pelo menos 2 classes, recebido {len(self.class_names)}")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"nomes de classe repetidos: {self.class_names}")
        if not self.trunk or self.trunk[0].kind != "conv":
            raise ValueError("o tronco deve começar com uma camada conv")
        if any(layer.kind == "conv" and layer.channels < 1 for layer in self.trunk):
            raise ValueError("camadas conv exigem channels >= 1")
        if any(w < 1 for w in self.fc_widths):
            raise ValueError(f"larguras fc inválidas: {self.fc_widths}")
        channels, height, width = self.trunk_output_shape()
        if height < self.roi_pool_size or width < self.roi_pool_size:
            raise ValueError(
                f"saída do tronco {height}x{width} menor que P={self.roi_pool_size}"
            )
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def trunk_output_shape(self) -> Tuple[int, int, int]:
        channels = self.in_channels
        height, width = self.extent.height, self.extent.width
        for layer in self.trunk:
            pad = layer.padding if layer.kind == "conv" else 0
            if height + 2 * pad < layer.kernel or width + 2 * pad < layer.kernel:
                raise ValueError(f"camada {layer} maior que a entrada {height}x{width}")
            height = (height + 2 * pad - layer.kernel) // layer.stride + 1
            width = (width + 2 * pad - layer.kernel) // layer.stride + 1
            if layer.kind == "conv":
                channels = layer.channels
        return channels, height, width

    @property
    def spatial_scale(self) -> float:
        """Escala imagem -> mapa de features (1 / produto dos strides)."""
        total = 1
        for layer in self.trunk:
            total *= layer.stride
        return 1.0 / total

    @property
    def roi_feature_width(self) -> int:
        channels, _, _ = self.trunk_output_shape()
        return channels * self.roi_pool_size * self.roi_pool_size


class TrainConfig(BaseModel):
    """
    Receita de treino. Defaults: taxa 1e-4, 30 primárias por batch, 2 imagens
    por batch, N=10. As iterações foram reduzidas para a escala de desktop
    (a receita de fine-tuning usa 10000).
    """
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(1e-4, ge=0.0, description="Taxa de aprendizado do SGD.")
    batch_primaries: int = Field(30, ge=1, description="M: primárias por batch.")
    images_per_batch: int = Field(2, ge=1)
    n_candidates: int = Field(10, ge=1, description="N: candidatas secundárias amostradas por primária.")
    iterations: int = Field(2000, ge=0, description="Passos de SGD.")
    bounds: OverlapBounds = Field(default_factory=OverlapBounds)
    mode: Mode = "rstar"
    n_secondary: int = Field(1, ge=1)
    seed: int = 0
    loss_kind: LossKind = "softmax"
    momentum: float = Field(0.0, ge=0.0, lt=1.0, description="Momento do SGD (desligado por padrão).")
    weight_decay: float = Field(0.0, ge=0.0, description="Decaimento L2 (desligado por padrão).")
    augment_threshold: float = Field(0.5, ge=0.0, le=1.0, description="IoU estritamente maior que este valor vira primária aumentada.")
    checkpoint_interval: int = Field(0, ge=0, description="Gravar checkpoint a cada k passos (0: só no final).")
    log_every: int = Field(50, ge=1)

    @field_validator("learning_rate")
    @classmethod
    def _finite_lr(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("learning_rate deve ser finito")
        return value

    def apply_to(self, model_cfg: ModelConfig) -> ModelConfig:
        """Copia modo, limites, n_S e tipo de perda para o ModelConfig."""
        return model_cfg.model_copy(update={
            "mode": self.mode,
            "bounds": self.bounds,
            "n_secondary": self.n_secondary,
            "loss_kind": self.loss_kind,
        })


def synthetic_train_config(**overrides) -> TrainConfig:
    """
    Preset de escala de desktop para o dataset sintético: o tronco é treinado do
    zero, então a taxa padrão (pensada para fine-tuning) não converge em
    poucos minutos. Limites (0, 0.5) permitem escolher regiões afastadas da pessoa.
    """
    values = dict(
        learning_rate=0.02,
        momentum=0.9,
        iterations=600,
        bounds=OverlapBounds(l=0.0, u=0.5),
    )
    values.update(overrides)
    return TrainConfig(**values)


GLYPHS: Tuple[str, ...] = ("disk", "cross", "bar", "ring", "square", "triangle")


class SyntheticConfig(BaseModel):
    """
    Gerador do dataset contextual: a classe de cada 'pessoa' é codificada apenas
    por um glifo plantado fora da caixa da pessoa.
    """
    model_config = ConfigDict(frozen=True)

    width: int = Field(64, ge=16)
    height: int = Field(64, ge=16)
    num_classes: int = Field(5, ge=2, description="Inclui a classe Other quando include_other=True.")
    include_other: bool = True
    multilabel: bool = Field(False, description="Variante de atributos: um glifo por atributo positivo.")
    instances_min: int = Field(1, ge=1)
    instances_max: int = Field(3, ge=1)
    glyphs: Tuple[str, ...] = Field(GLYPHS[:4], description="Glifos na ordem das classes sem Other.")
    person_width: Tuple[int, int] = Field((10, 14), description="Faixa de largura da pessoa.")
    person_height: Tuple[int, int] = Field((16, 22), description="Faixa de altura da pessoa.")
    cue_size: int = Field(12, ge=4, description="Lado da caixa do glifo.")
    cue_distance: Tuple[int, int] = Field((1, 8), description="Distância mínima/máxima entre pessoa e glifo.")
    distractor_count: int = Field(1, ge=0)
    distractor_contrast: float = Field(0.35, gt=0.0, le=1.0)
    noise_amplitude: float = Field(0.03, ge=0.0, le=0.5)
    train_instances: int = Field(500, ge=1)
    test_instances: int = Field(200, ge=1)
    max_placement_attempts: int = Field(200, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SyntheticConfig":
        if self.instances_min > self.instances_max:
            raise ValueError("instances_min > instances_max")
        unknown = [g for g in self.glyphs if g not in GLYPHS]
        if unknown:
            raise ValueError(f"glifos desconhecidos: {unknown}")
        if len(set(self.glyphs)) != len(self.glyphs):
            raise ValueError("cada classe precisa de um glifo único")
        if len(self.glyphs) < self.cue_classes:
            raise ValueError(
                f"{self.cue_classes} classes com glifo mas apenas {len(self.glyphs)} glifos configurados"
            )
        if self.multilabel and self.include_other:
            raise ValueError("a variante multilabel não usa a classe Other")
        for low, high in (self.person_width, self.person_height, self.cue_distance):
            if low > high:
                raise ValueError(f"faixa invertida: ({low}, {high})")
        return self

    @property
    def cue_classes(self) -> int:
        """Número de classes (ou atributos) codificadas por glifo."""
        return self.num_classes - 1 if self.include_other else self.num_classes

    @property
    def class_names(self) -> Tuple[str, ...]:
        names = tuple(self.glyphs[: self.cue_classes])
        if self.multilabel:
            return tuple(f"has_{g}" for g in names)
        return names + (("other",) if self.include_other else ())


class EvalConfig(BaseModel):
    """Opções do protocolo de avaliação."""
    model_config = ConfigDict(frozen=True)

    frame_level: bool = Field(False, description="Agrega instâncias por frame (máximo por ação).")
    interpolated: bool = Field(False, description="AP interpolado em 11 pontos em vez do não interpolado.")
    top_k: int = Field(5, ge=0, description="Instâncias mais confiantes listadas por ação.")
    cue_iou_threshold: float = Field(0.3, ge=0.0, le=1.0)
    seed: int = Field(0, description="Semente do fluxo aleatório do modo random.")
    proposals: Optional[ProposalConfig] = None

    def proposal_config(self) -> ProposalConfig:
        return self.proposals or ProposalConfig()

