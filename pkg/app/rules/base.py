# app/rules/base.py

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.autodiff import Graph, Tensor
from app.models.region import OverlapBounds, ProposalSet, Region
from app.utils.error_handlers import GraphError

logger = logging.getLogger(__name__)


@dataclass
class SelectionContext:
    """
    Tudo o que uma regra precisa para escolher as secundárias de uma primária.
    As linhas 0..len(candidates)-1 da matriz de scores secundários são as
    candidatas, na ordem de candidates; whole_image_row, quando existe, é a
    linha extra da região da imagem inteira.
    """
    primary: Region
    candidates: ProposalSet
    whole_image: Region
    whole_image_row: Optional[int] = None
    bounds: OverlapBounds = field(default_factory=OverlapBounds)
    n_secondary: int = 1
    rng: Optional[np.random.Generator] = None

    @property
    def candidate_count(self) -> int:
        return len(self.candidates)

    def region_at(self, row: int) -> Region:
        if row < self.candidate_count:
            return self.candidates[row]
        if row == self.whole_image_row:
            return self.whole_image
        raise GraphError(f"linha {row} fora da matriz de candidatas ({self.candidate_count} + imagem inteira)")


@dataclass
class Selection:
    """Termo secundário por ação ([A], ou None) e as linhas escolhidas por ação."""
    term: Optional[Tensor]
    rows: List[List[int]]


class SelectionRule:
    """
    Classe base das regras de seleção da região secundária (uma por modo).
    Define a interface comum: quais linhas a rede precisa calcular e como o
    termo secundário do score é obtido a partir da matriz [K, A].
    """
    # Se a rede deve calcular features das candidatas
    uses_candidates: bool = True

    def __init__(self, origin_name: str):
        """
        Args:
            origin_name (str): O nome do modo que esta regra implementa (ex: "rstar", "scene").
        """
        self.origin_name = origin_name
        logger.info(f"SelectionRule '{self.origin_name}' inicializada.")

    def needs_whole_image(self, n_secondary: int) -> bool:
        """Se a linha extra da imagem inteira deve ser calculada."""
        return False

    def select(self, graph: Graph, secondary: Optional[Tensor], num_actions: int,
               ctx: SelectionContext) -> Selection:
        """
        Método abstrato de seleção. Deve ser implementado pelas subclasses.
        Args:
            graph (Graph): grafo do forward corrente.
            secondary (Tensor | None): scores secundários [K, A] (None quando a regra não usa secundárias).
            num_actions (int): número de ações A.
            ctx (SelectionContext): candidatas e parâmetros da seleção.
        """
        raise NotImplementedError("O método 'select' deve ser implementado pelas subclasses.")

    def _require_rows(self, secondary: Optional[Tensor]) -> Tensor:
        if secondary is None or secondary.shape[0] == 0:
            raise GraphError(f"regra '{self.origin_name}' exige scores secundários")
        return secondary
