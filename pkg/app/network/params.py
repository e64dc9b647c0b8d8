# app/network/params.py

import logging
import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from app.autodiff import Tensor
from app.models.configs import ModelConfig
from app.utils.error_handlers import ShapeError

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Shape]:
    """
    Nomes e formas de todos os parâmetros, na ordem canônica (a mesma do checkpoint).
    fc6/fc7 existem uma única vez e servem aos dois fluxos (primário e secundário).
    """
    shapes: Dict[str, Shape] = {}
    channels = cfg.in_channels
    conv_index = 0
    for layer in cfg.trunk:
        if layer.kind != "conv":
            continue
        shapes[f"trunk.conv{conv_index}.weight"] = (layer.channels, channels, layer.kernel, layer.kernel)
        shapes[f"trunk.conv{conv_index}.bias"] = (layer.channels,)
        channels = layer.channels
        conv_index += 1

    fc6, fc7 = cfg.fc_widths
    shapes["fc6.weight"] = (fc6, cfg.roi_feature_width)
    shapes["fc6.bias"] = (fc6,)
    shapes["fc7.weight"] = (fc7, fc6)
    shapes["fc7.bias"] = (fc7,)
    shapes["head_primary.weight"] = (cfg.num_classes, fc7)
    shapes["head_primary.bias"] = (cfg.num_classes,)
    shapes["head_secondary.weight"] = (cfg.num_classes, fc7)
    shapes["head_secondary.bias"] = (cfg.num_classes,)
    return shapes


class ModelParams:
    """Parâmetros nomeados do modelo (tensores folha com requires_grad)."""

    def __init__(self, tensors: Dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def names(self) -> List[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams({
            name: Tensor(t.values.copy(), requires_grad=t.requires_grad, name=name)
            for name, t in self.tensors.items()
        })

    def validate(self, cfg: ModelConfig) -> None:
        """Confere nomes e formas contra o ModelConfig."""
        expected = parameter_shapes(cfg)
        if list(expected) != list(self.tensors):
            raise ShapeError(f"parâmetros {self.names()} não correspondem a {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"parâmetro '{name}': forma {self.tensors[name].shape}, esperado {shape}")

    def equals(self, other: "ModelParams") -> bool:
        """Igualdade bit a bit de nomes e valores."""
        return self.names() == other.names() and all(
            self.tensors[n].values.shape == other.tensors[n].values.shape
            and self.tensors[n].values.tobytes() == other.tensors[n].values.tobytes()
            for n in self.tensors
        )


def _fans(shape: Shape) -> Tuple[int, int]:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    return shape[1], shape[0]


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Pesos uniformes em ±sqrt(6 / (fan_in + fan_out)), biases zero; determinístico por semente."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias"):
            values = np.zeros(shape)
        else:
            bound = glorot_bound(shape)
            values = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    logger.debug(f"Parâmetros inicializados (semente {seed}): {len(tensors)} tensores.")
    return ModelParams(tensors)


def glorot_bound(shape: Shape) -> float:
    fan_in, fan_out = _fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))
