# app/models/dataset.py
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.configs import LossKind
from app.models.region import ImageExtent, Region


class Instance(BaseModel):
    """Uma pessoa anotada: região primária de ground truth e seu rótulo."""
    model_config = ConfigDict(frozen=True)

    instance_id: str = Field(..., description="Identificador único no dataset.")
    region: Region = Field(..., description="Caixa da pessoa (ground truth).")
    label: Optional[int] = Field(None, description="Índice da classe (modo softmax).")
    attributes: Optional[Tuple[int, ...]] = Field(None, description="Vetor binário de atributos (modo multilabel).")

    @model_validator(mode="after")
    def _one_target(self) -> "Instance":
        if (self.label is None) == (self.attributes is None):
            raise ValueError(f"instância '{self.instance_id}' precisa de label OU attributes")
        if self.attributes is not None and any(a not in (0, 1) for a in self.attributes):
            raise ValueError(f"atributos não binários em '{self.instance_id}': {self.attributes}")
        return self

    @property
    def target(self):
        return self.label if self.label is not None else self.attributes


class ImageRecord(BaseModel):
    """
    Imagem com seus pixels RGB de 8 bits (planos C×H×W em bytes) e instâncias.
    Os pixels viram floats em [0, 1] apenas em as_array().
    """
    model_config = ConfigDict(frozen=True)

    image_id: str
    frame_id: str = Field(..., description="Agrupamento para avaliação por frame.")
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    pixels: bytes = Field(..., exclude=True, repr=False, description="Planos RGB uint8, ordem C×H×W.")
    instances: Tuple[Instance, ...] = ()
    proposals_ref: Optional[str] = Field(None, description="Arquivo de propostas externo, se houver.")

    @model_validator(mode="after")
    def _check(self) -> "ImageRecord":
        expected = 3 * self.width * self.height
        if len(self.pixels) != expected:
            raise ValueError(f"imagem '{self.image_id}': {len(self.pixels)} bytes, esperado {expected}")
        for inst in self.instances:
            r = inst.region
            if r.x1 < 0 or r.y1 < 0 or r.x2 > self.width or r.y2 > self.height:
                raise ValueError(f"instância '{inst.instance_id}' fora da imagem '{self.image_id}': {r.coords}")
        return self

    @property
    def extent(self) -> ImageExtent:
        return ImageExtent(width=self.width, height=self.height)

    def as_uint8(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(3, self.height, self.width)

    def as_array(self) -> np.ndarray:
        return self.as_uint8().astype(np.float64) / 255.0


class Dataset(BaseModel):
    """Conjunto de imagens anotadas; imutável depois de carregado."""
    model_config = ConfigDict(frozen=True)

    class_names: Tuple[str, ...]
    loss_kind: LossKind = "softmax"
    images: Tuple[ImageRecord, ...] = ()

    @model_validator(mode="after")
    def _labels_in_range(self) -> "Dataset":
        n = len(self.class_names)
        for image in self.images:
            for inst in image.instances:
                if self.loss_kind == "softmax":
                    if inst.label is None or not (0 <= inst.label < n):
                        raise ValueError(f"rótulo inválido em '{inst.instance_id}': {inst.label}")
                elif inst.attributes is None or len(inst.attributes) != n:
                    raise ValueError(f"vetor de atributos inválido em '{inst.instance_id}'")
        return self

    @property
    def num_instances(self) -> int:
        return sum(len(image.instances) for image in self.images)

    def iter_instances(self) -> Iterator[Tuple[ImageRecord, Instance]]:
        for image in self.images:
            for inst in image.instances:
                yield image, inst

    def class_counts(self) -> Dict[str, int]:
        counts = {name: 0 for name in self.class_names}
        for _, inst in self.iter_instances():
            if inst.label is not None:
                counts[self.class_names[inst.label]] += 1
            else:
                for name, flag in zip(self.class_names, inst.attributes):
                    counts[name] += flag
        return counts


class CueGroundTruth(BaseModel):
    """Regiões dos glifos plantados, por instância (vazio para Other)."""
    model_config = ConfigDict(frozen=True)

    cues: Dict[str, Tuple[Region, ...]] = Field(default_factory=dict)

    def for_instance(self, instance_id: str) -> Tuple[Region, ...]:
        return self.cues.get(instance_id, ())
