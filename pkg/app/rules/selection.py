# app/rules/selection.py

import logging
from functools import lru_cache
from typing import Dict, List, Optional, Type

import numpy as np

from app.autodiff import Graph, Tensor
from app.geometry import greedy_restrict
from app.rules.base import Selection, SelectionContext, SelectionRule
from app.utils.error_handlers import GraphError

logger = logging.getLogger(__name__)


class LatentMaxRule(SelectionRule):
    """
    Modo rstar: para cada ação, a secundária é a candidata de maior score
    secundário. Com n_S > 1 as escolhas seguintes são gulosas, restritas às
    candidatas dentro dos limites de overlap com a primária e com todas as
    secundárias já escolhidas para aquela ação; os máximos são somados.
    """

    def __init__(self):
        super().__init__(origin_name="rstar")

    def needs_whole_image(self, n_secondary: int) -> bool:
        return n_secondary > 1

    def select(self, graph: Graph, secondary: Optional[Tensor], num_actions: int,
               ctx: SelectionContext) -> Selection:
        scores = self._require_rows(secondary)
        mask = None
        if scores.shape[0] > ctx.candidate_count:
            mask = np.zeros(scores.shape, dtype=bool)
            mask[:ctx.candidate_count] = True
        term, argmax = graph.reduce_max_rows(scores, mask)
        rows: List[List[int]] = [[int(r)] for r in argmax]

        for _ in range(1, ctx.n_secondary):
            mask = np.stack([self._allowed_rows(scores.shape[0], chosen, ctx) for chosen in rows], axis=1)
            values, argmax = graph.reduce_max_rows(scores, mask)
            term = graph.add(term, values)
            for chosen, row in zip(rows, argmax):
                chosen.append(int(row))
        return Selection(term=term, rows=rows)

    @staticmethod
    def _allowed_rows(total_rows: int, chosen: List[int], ctx: SelectionContext) -> np.ndarray:
        selected = [ctx.primary] + [ctx.region_at(row) for row in chosen]
        restricted = greedy_restrict(selected, ctx.candidates, ctx.bounds)
        row_of = {region.coords: row for row, region in enumerate(ctx.candidates.regions)}
        allowed = np.zeros(total_rows, dtype=bool)
        for region in restricted.regions:
            row = row_of.get(region.coords, ctx.whole_image_row)
            if row is None:
                raise GraphError("seleção gulosa caiu no fallback sem a linha da imagem inteira")
            allowed[row] = True
        return allowed


class PrimaryOnlyRule(SelectionRule):
    """Modo rcnn: sem termo secundário."""
    uses_candidates = False

    def __init__(self):
        super().__init__(origin_name="rcnn")

    def select(self, graph: Graph, secondary: Optional[Tensor], num_actions: int,
               ctx: SelectionContext) -> Selection:
        return Selection(term=None, rows=[[] for _ in range(num_actions)])


class RandomRegionRule(SelectionRule):
    """
    Modo random: o max é trocado por uma candidata sorteada uniformemente a
    cada forward (a mesma para todas as ações), do fluxo semeado em ctx.rng.
    """

    def __init__(self):
        super().__init__(origin_name="random")

    def select(self, graph: Graph, secondary: Optional[Tensor], num_actions: int,
               ctx: SelectionContext) -> Selection:
        scores = self._require_rows(secondary)
        if ctx.rng is None:
            raise GraphError("modo random exige um gerador semeado")
        row = int(ctx.rng.integers(ctx.candidate_count))
        term = graph.take_per_column(scores, [row] * num_actions)
        return Selection(term=term, rows=[[row] for _ in range(num_actions)])


class WholeImageRule(SelectionRule):
    """Modo scene: a secundária é sempre a imagem inteira, sem max."""
    uses_candidates = False

    def __init__(self):
        super().__init__(origin_name="scene")

    def needs_whole_image(self, n_secondary: int) -> bool:
        return True

    def select(self, graph: Graph, secondary: Optional[Tensor], num_actions: int,
               ctx: SelectionContext) -> Selection:
        scores = self._require_rows(secondary)
        if ctx.whole_image_row is None:
            raise GraphError("modo scene exige a linha da imagem inteira")
        row = ctx.whole_image_row
        term = graph.take_per_column(scores, [row] * num_actions)
        return Selection(term=term, rows=[[row] for _ in range(num_actions)])


SELECTION_RULES: Dict[str, Type[SelectionRule]] = {
    "rstar": LatentMaxRule,
    "rcnn": PrimaryOnlyRule,
    "random": RandomRegionRule,
    "scene": WholeImageRule,
}


@lru_cache(maxsize=None)
def get_rule(mode: str) -> SelectionRule:
    """Instância (compartilhada, sem estado) da regra de um modo."""
    rule_cls = SELECTION_RULES.get(mode)
    if rule_cls is None:
        raise GraphError(f"modo desconhecido: '{mode}' (esperado um de {sorted(SELECTION_RULES)})")
    return rule_cls()
