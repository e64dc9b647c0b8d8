# app/models/region.py
import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

RegionSource = Literal["ground-truth", "proposal", "whole-image"]


class ImageExtent(BaseModel):
    """Largura e altura de uma imagem, em pixels."""
    model_config = ConfigDict(frozen=True)

    width: int = Field(..., gt=0, description="Largura da imagem em pixels.")
    height: int = Field(..., gt=0, description="Altura da imagem em pixels.")


class Region(BaseModel):
    """
    Caixa alinhada aos eixos em coordenadas contínuas de pixel.
    Área = (x2 - x1) * (y2 - y1), sem correção +1 de grade.
    A igualdade entre regiões usada pela geometria é a de coordenadas (coords);
    a tag de origem é apenas informativa.
    """
    model_config = ConfigDict(frozen=True)

    x1: float = Field(..., description="Borda esquerda.")
    y1: float = Field(..., description="Borda superior.")
    x2: float = Field(..., description="Borda direita (exclusiva).")
    y2: float = Field(..., description="Borda inferior (exclusiva).")
    source: RegionSource = Field("proposal", description="Origem da região.")

    @model_validator(mode="after")
    def _check_box(self) -> "Region":
        for name in ("x1", "y1", "x2", "y2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"coordenada {name} não finita: {getattr(self, name)}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"região degenerada ({self.x1}, {self.y1}, {self.x2}, {self.y2}): exige x1 < x2 e y1 < y2"
            )
        return self

    @property
    def coords(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def with_source(self, source: RegionSource) -> "Region":
        return Region(x1=self.x1, y1=self.y1, x2=self.x2, y2=self.y2, source=source)

    def __str__(self) -> str:
        return f"Region({self.x1:g}, {self.y1:g}, {self.x2:g}, {self.y2:g}, {self.source})"


class ProposalSet(BaseModel):
    """
    Conjunto ordenado de propostas de uma imagem (S(I)).
    A ordem é a de geração (ou do arquivo); duplicatas exatas de coordenadas são proibidas.
    """
    model_config = ConfigDict(frozen=True)

    image_id: str = Field(..., description="Identificador da imagem.")
    regions: Tuple[Region, ...] = Field(default_factory=tuple, description="Regiões em ordem determinística.")
    extent: Optional[ImageExtent] = Field(None, description="Dimensões da imagem (necessárias para o fallback de imagem inteira).")

    @model_validator(mode="after")
    def _no_duplicates(self) -> "ProposalSet":
        seen = set()
        for region in self.regions:
            if region.coords in seen:
                raise ValueError(f"região duplicada em '{self.image_id}': {region.coords}")
            seen.add(region.coords)
        return self

    def __len__(self) -> int:
        return len(self.regions)

    def __getitem__(self, index: int) -> Region:
        return self.regions[index]

    def coords(self) -> Tuple[Tuple[float, float, float, float], ...]:
        return tuple(r.coords for r in self.regions)


class OverlapBounds(BaseModel):
    """Limites [l, u] de IoU que definem o conjunto de candidatas secundárias."""
    model_config = ConfigDict(frozen=True)

    l: float = Field(0.2, ge=0.0, le=1.0, description="Limite inferior de overlap (fechado).")
    u: float = Field(0.75, ge=0.0, le=1.0, description="Limite superior de overlap (fechado).")

    @model_validator(mode="after")
    def _ordered(self) -> "OverlapBounds":
        if self.l > self.u:
            raise ValueError(f"limites de overlap inválidos: l={self.l} > u={self.u}")
        return self

    def contains(self, value: float) -> bool:
        return self.l <= value <= self.u
