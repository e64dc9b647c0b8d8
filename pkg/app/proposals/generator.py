# app/proposals/generator.py

import logging
import math
from typing import List, Set, Tuple

import numpy as np

from app.models.configs import ProposalConfig
from app.models.region import ImageExtent, ProposalSet, Region
from app.utils.error_handlers import GeometryError

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]


def _positions(length: int, side: float, step: float, offset: float) -> List[float]:
    """
    Origens ao longo de um eixo: offset, offset + step, ... enquanto a caixa
    couber; a última posição é alinhada à borda para cobrir a imagem toda.
    Caixas maiores que o eixo começam em 0 (e são recortadas depois).
    """
    limit = length - side
    if limit <= 0:
        return [0.0]
    positions = []
    x = offset
    while x <= limit + 1e-9:
        positions.append(x)
        x += step
    if not positions or positions[-1] < limit - 1e-9:
        positions.append(limit)
    return positions


def generate(extent: ImageExtent, cfg: ProposalConfig, image_id: str = "image") -> ProposalSet:
    """
    Gera a grade multi-escala de propostas para uma imagem.
    Para cada (escala, razão) a caixa tem área escala² e largura/altura = razão;
    coordenadas são arredondadas para pixels inteiros, recortadas à imagem e
    deduplicadas mantendo a primeira ocorrência. Função pura de (extent, cfg).
    """
    rng = np.random.default_rng(cfg.jitter_seed)
    seen: Set[Box] = set()
    regions: List[Region] = []

    for scale in cfg.scales:
        for ratio in cfg.aspect_ratios:
            box_w = max(1.0, float(round(scale * math.sqrt(ratio))))
            box_h = max(1.0, float(round(scale / math.sqrt(ratio))))
            step_x = max(1.0, cfg.stride_fraction * box_w)
            step_y = max(1.0, cfg.stride_fraction * box_h)
            off_x = off_y = 0.0
            if cfg.jitter_fraction > 0:
                off_x = float(np.floor(rng.uniform(0, cfg.jitter_fraction) * step_x))
                off_y = float(np.floor(rng.uniform(0, cfg.jitter_fraction) * step_y))

            for y in _positions(extent.height, box_h, step_y, off_y):
                for x in _positions(extent.width, box_w, step_x, off_x):
                    x1, y1 = float(round(x)), float(round(y))
                    box = (
                        max(0.0, x1),
                        max(0.0, y1),
                        min(float(extent.width), x1 + box_w),
                        min(float(extent.height), y1 + box_h),
                    )
                    if not (box[0] < box[2] and box[1] < box[3]) or box in seen:
                        continue
                    seen.add(box)
                    regions.append(Region(x1=box[0], y1=box[1], x2=box[2], y2=box[3], source="proposal"))

    if not regions:
        raise GeometryError(f"configuração de propostas não gerou nenhuma caixa para {extent.width}x{extent.height}")

    logger.debug(f"Geradas {len(regions)} propostas para '{image_id}' ({extent.width}x{extent.height}).")
    return ProposalSet(image_id=image_id, regions=tuple(regions), extent=extent)
