# app/geometry/overlap.py
"""
Overlap entre regiões e construção dos conjuntos de candidatas secundárias.
Todas as funções são puras e operam sobre valores imutáveis.
"""
import logging
from typing import Hashable, List, Optional, Sequence, Tuple, TypeVar

from app.models.region import ImageExtent, OverlapBounds, ProposalSet, Region
from app.utils.error_handlers import GeometryError

logger = logging.getLogger(__name__)

LabelT = TypeVar("LabelT", bound=Hashable)


def iou(a: Region, b: Region) -> float:
    """
    Interseção sobre união de duas regiões. Simétrica; 1 para caixas idênticas,
    0 para caixas disjuntas (ou que só se tocam na borda).
    """
    area_a = a.area
    area_b = b.area
    if not (area_a > 0) or not (area_b > 0):
        raise GeometryError(f"região degenerada no cálculo de IoU: {a.coords} / {b.coords}")

    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (area_a + area_b - inter)


def whole_image_region(extent: ImageExtent) -> Region:
    return Region(x1=0.0, y1=0.0, x2=float(extent.width), y2=float(extent.height), source="whole-image")


def clip_region(region: Region, extent: ImageExtent) -> Region:
    """Recorta a região aos limites da imagem; erro se o resultado ficar degenerado."""
    x1 = min(max(region.x1, 0.0), float(extent.width))
    y1 = min(max(region.y1, 0.0), float(extent.height))
    x2 = min(max(region.x2, 0.0), float(extent.width))
    y2 = min(max(region.y2, 0.0), float(extent.height))
    if not (x1 < x2 and y1 < y2):
        raise GeometryError(
            f"região {region.coords} fica degenerada ao ser recortada para {extent.width}x{extent.height}"
        )
    if (x1, y1, x2, y2) == region.coords:
        return region
    return Region(x1=x1, y1=y1, x2=x2, y2=y2, source=region.source)


def _fallback(s: ProposalSet) -> ProposalSet:
    if s.extent is None:
        raise GeometryError(
            f"conjunto de candidatas vazio para '{s.image_id}' e a extensão da imagem é desconhecida"
        )
    logger.debug(f"Conjunto de candidatas vazio em '{s.image_id}'; usando a imagem inteira.")
    return ProposalSet(image_id=s.image_id, regions=(whole_image_region(s.extent),), extent=s.extent)


def candidate_set(r: Region, s: ProposalSet, b: OverlapBounds) -> ProposalSet:
    """
    Propostas cujo IoU com r está no intervalo fechado [l, u], na ordem de s.
    Se nenhuma proposta passar, devolve apenas a região da imagem inteira.
    """
    if len(s) == 0:
        raise GeometryError(f"conjunto de propostas vazio para '{s.image_id}'")
    kept = tuple(p for p in s.regions if b.contains(iou(r, p)))
    if not kept:
        return _fallback(s)
    if len(kept) == len(s):
        return s
    return ProposalSet(image_id=s.image_id, regions=kept, extent=s.extent)


def greedy_restrict(selected: Sequence[Region], s: ProposalSet, b: OverlapBounds) -> ProposalSet:
    """
    Interseção R(r) ∩ R(s1) ∩ ... ∩ R(s_{i-1}): propostas cujo IoU com TODAS as
    regiões já escolhidas está em [l, u]. Vazio cai no fallback de imagem inteira.
    """
    if not selected:
        raise GeometryError("greedy_restrict exige pelo menos uma região selecionada")
    kept = tuple(
        p for p in s.regions
        if all(b.contains(iou(x, p)) for x in selected)
    )
    if not kept:
        return _fallback(s)
    return ProposalSet(image_id=s.image_id, regions=kept, extent=s.extent)


def augment_primaries(gt: Sequence[Tuple[Region, LabelT]], s: ProposalSet,
                      threshold: float = 0.5) -> List[Tuple[Region, LabelT]]:
    """
    Primárias de treino: todos os pares de ground truth mais toda proposta com
    IoU estritamente maior que threshold com algum ground truth, rotulada pelo
    ground truth de maior IoU (empate: menor índice).
    """
    if not gt:
        raise GeometryError("augment_primaries exige pelo menos um ground truth")

    augmented: List[Tuple[Region, LabelT]] = list(gt)
    for proposal in s.regions:
        best_index: Optional[int] = None
        best_iou = threshold
        for index, (box, _) in enumerate(gt):
            overlap = iou(box, proposal)
            if overlap > best_iou:
                best_iou = overlap
                best_index = index
        if best_index is not None:
            augmented.append((proposal, gt[best_index][1]))
    return augmented
