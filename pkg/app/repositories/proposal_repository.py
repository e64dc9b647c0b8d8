# app/repositories/proposal_repository.py

import logging
import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from app.geometry import clip_region
from app.models.region import ImageExtent, ProposalSet, Region
from app.repositories.storage import PathLike, write_atomic
from app.utils.error_handlers import GeometryError, ProposalFormatError

logger = logging.getLogger(__name__)


def _parse_line(path: Path, number: int, line: str) -> tuple:
    fields = line.split()
    if len(fields) != 5:
        raise ProposalFormatError(f"{path}:{number}: esperado '<image_id> x1 y1 x2 y2', recebido {len(fields)} campos")
    try:
        x1, y1, x2, y2 = (float(v) for v in fields[1:])
    except ValueError as e:
        raise ProposalFormatError(f"{path}:{number}: coordenada não numérica ({e})") from e
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise ProposalFormatError(f"{path}:{number}: coordenada não finita")
    if not (x1 < x2 and y1 < y2):
        raise ProposalFormatError(f"{path}:{number}: região degenerada ({x1}, {y1}, {x2}, {y2}) exige x1 < x2 e y1 < y2")
    return fields[0], Region(x1=x1, y1=y1, x2=x2, y2=y2, source="proposal")


def load_proposals(path: PathLike, extents: Optional[Mapping[str, ImageExtent]] = None) -> Dict[str, ProposalSet]:
    """
    Lê um arquivo de propostas, uma região por linha. Com extents, regiões que
    saem da imagem são recortadas (com aviso). A ordem do arquivo é preservada.
    """
    path = Path(path)
    if not path.exists():
        raise ProposalFormatError(f"arquivo de propostas não encontrado: {path}")
    extents = extents or {}
    per_image: Dict[str, List[Region]] = {}
    seen: Dict[str, set] = {}
    clipped = duplicates = 0

    with path.open("r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            image_id, region = _parse_line(path, number, line)
            extent = extents.get(image_id)
            if extent is not None:
                try:
                    fitted = clip_region(region, extent)
                except GeometryError as e:
                    raise ProposalFormatError(f"{path}:{number}: {e}") from e
                if fitted is not region:
                    clipped += 1
                    logger.warning(f"{path}:{number}: região {region.coords} recortada para {fitted.coords}")
                region = fitted
            if region.coords in seen.setdefault(image_id, set()):
                duplicates += 1
                continue
            seen[image_id].add(region.coords)
            per_image.setdefault(image_id, []).append(region)

    if not per_image:
        raise ProposalFormatError(f"{path}: no proposals")
    if duplicates:
        logger.warning(f"{path}: {duplicates} região(ões) duplicada(s) descartada(s).")
    logger.info(f"Propostas carregadas de {path}: {len(per_image)} imagens, "
                f"{sum(len(r) for r in per_image.values())} regiões ({clipped} recortadas).")
    return {
        image_id: ProposalSet(image_id=image_id, regions=tuple(regions), extent=extents.get(image_id))
        for image_id, regions in per_image.items()
    }


def save_proposals(path: PathLike, collection: Mapping[str, ProposalSet]) -> Path:
    """Grava no mesmo formato, com repr de float (ida e volta exata)."""
    lines = []
    for image_id, proposals in collection.items():
        if not image_id or any(c.isspace() for c in image_id):
            raise ProposalFormatError(f"image_id inválido para o arquivo de propostas: '{image_id}'")
        for r in proposals.regions:
            lines.append(f"{image_id} {r.x1!r} {r.y1!r} {r.x2!r} {r.y2!r}\n")
    if not lines:
        raise ProposalFormatError(f"{path}: no proposals")
    return write_atomic(path, "".join(lines))
