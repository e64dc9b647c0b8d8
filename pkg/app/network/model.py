# app/network/model.py
"""
Montagem do modelo: tronco convolucional executado uma vez por imagem, ROI
pooling de todas as regiões sobre o mesmo mapa, pilha fc6/fc7 compartilhada
pelos dois fluxos e as cabeças primária e secundária. O score de cada ação é
o score primário somado ao termo secundário escolhido pela regra do modo.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.autodiff import Graph, GradcheckCase, Problem, Tensor
from app.autodiff.gradcheck import PIECEWISE_TOLERANCE
from app.geometry import candidate_set, whole_image_region
from app.models.configs import LossKind, ModelConfig, TrunkLayer
from app.models.dataset import ImageRecord
from app.models.region import ImageExtent, OverlapBounds, ProposalSet, Region
from app.network.params import ModelParams, init_params
from app.rules import SelectionContext, get_rule
from app.utils.error_handlers import GeometryError, GraphError, ShapeError

logger = logging.getLogger(__name__)

ImageInput = Union[ImageRecord, np.ndarray]
Selected = Tuple[Tuple[Region, ...], ...]


@dataclass
class PrimaryResult:
    """Scores [A] de uma primária e as secundárias escolhidas por ação."""
    scores: Tensor
    selected: Selected
    rows: List[List[int]]
    candidates: ProposalSet


@dataclass
class ForwardResult:
    scores: Tensor
    selected: Selected
    graph: Graph


@dataclass
class Prediction:
    probabilities: np.ndarray
    selected: Selected


def _image_array(image: ImageInput, cfg: ModelConfig) -> np.ndarray:
    array = image.as_array() if isinstance(image, ImageRecord) else np.asarray(image, dtype=np.float64)
    expected = (cfg.in_channels, cfg.extent.height, cfg.extent.width)
    if array.shape != expected:
        raise ShapeError(f"imagem com forma {array.shape}, o modelo espera {expected}")
    return array


def _check_inside(region: Region, extent: ImageExtent) -> None:
    if region.x1 < 0 or region.y1 < 0 or region.x2 > extent.width or region.y2 > extent.height:
        raise GeometryError(f"região {region.coords} fora da imagem {extent.width}x{extent.height}")


def trunk(graph: Graph, params: ModelParams, cfg: ModelConfig, image: np.ndarray) -> Tensor:
    """Mapa de features compartilhado [C,H',W']."""
    x = Tensor(image)
    conv_index = 0
    for layer in cfg.trunk:
        if layer.kind == "conv":
            weight = params[f"trunk.conv{conv_index}.weight"]
            bias = params[f"trunk.conv{conv_index}.bias"]
            x = graph.relu(graph.conv2d(x, weight, bias, stride=layer.stride, padding=layer.padding))
            conv_index += 1
        else:
            x = graph.max_pool2d(x, layer.kernel, layer.stride)
    return x


def region_features(graph: Graph, params: ModelParams, cfg: ModelConfig, features: Tensor,
                    regions: Sequence[Region]) -> Tensor:
    """ROI pooling + fc6 + fc7 (com ReLU) para K regiões -> [K, fc7]."""
    scale = cfg.spatial_scale
    frame = (cfg.extent.width * scale, cfg.extent.height * scale)
    pooled = graph.roi_max_pool_batch(features, regions, scale, cfg.roi_pool_size, frame)
    flat = graph.reshape(pooled, (len(regions), cfg.roi_feature_width))
    hidden = graph.relu(graph.linear(flat, params["fc6.weight"], params["fc6.bias"]))
    return graph.relu(graph.linear(hidden, params["fc7.weight"], params["fc7.bias"]))


def score_regions(graph: Graph, image: ImageInput, primaries: Sequence[Region],
                  candidate_sets: Sequence[ProposalSet], params: ModelParams, cfg: ModelConfig,
                  rng: Optional[np.random.Generator] = None) -> List[PrimaryResult]:
    """
    Scores de várias primárias da mesma imagem em um único grafo. Cada região
    distinta (primárias, candidatas e, se a regra pedir, a imagem inteira) é
    processada uma vez; o tronco roda uma vez.
    """
    if len(primaries) != len(candidate_sets):
        raise ShapeError(f"{len(primaries)} primárias e {len(candidate_sets)} conjuntos de candidatas")
    if not primaries:
        return []
    rule = get_rule(cfg.mode)
    whole = whole_image_region(cfg.extent)
    use_whole = rule.needs_whole_image(cfg.n_secondary)
    num_actions = cfg.num_classes

    regions: List[Region] = []
    row_of: Dict[Tuple[float, float, float, float], int] = {}

    def row(region: Region) -> int:
        key = region.coords
        if key not in row_of:
            _check_inside(region, cfg.extent)
            row_of[key] = len(regions)
            regions.append(region)
        return row_of[key]

    primary_rows = [row(p) for p in primaries]
    local_rows: List[List[int]] = []
    for candidates in candidate_sets:
        rows = []
        if rule.uses_candidates:
            if len(candidates) == 0:
                raise GraphError(f"conjunto de candidatas vazio em '{candidates.image_id}' no modo {cfg.mode}")
            rows = [row(c) for c in candidates.regions]
        if use_whole:
            rows.append(row(whole))
        local_rows.append(rows)

    features = trunk(graph, params, cfg, _image_array(image, cfg))
    hidden = region_features(graph, params, cfg, features, regions)
    primary_scores = graph.linear(graph.take_rows(hidden, primary_rows),
                                  params["head_primary.weight"], params["head_primary.bias"])

    secondary_rows = sorted({r for rows in local_rows for r in rows})
    position = {r: i for i, r in enumerate(secondary_rows)}
    secondary_scores = None
    if secondary_rows:
        secondary_scores = graph.linear(graph.take_rows(hidden, secondary_rows),
                                        params["head_secondary.weight"], params["head_secondary.bias"])

    n_secondary = cfg.n_secondary if cfg.mode == "rstar" else 1
    results: List[PrimaryResult] = []
    for index, (primary, candidates, rows) in enumerate(zip(primaries, candidate_sets, local_rows)):
        scores = graph.reshape(graph.take_rows(primary_scores, [index]), (num_actions,))
        secondary = graph.take_rows(secondary_scores, [position[r] for r in rows]) if rows else None
        if not rule.uses_candidates:
            candidates = ProposalSet(image_id=candidates.image_id, regions=(), extent=candidates.extent)
        ctx = SelectionContext(
            primary=primary,
            candidates=candidates,
            whole_image=whole,
            whole_image_row=len(rows) - 1 if use_whole else None,
            bounds=cfg.bounds,
            n_secondary=n_secondary,
            rng=rng,
        )
        selection = rule.select(graph, secondary, num_actions, ctx)
        if selection.term is not None:
            scores = graph.add(scores, selection.term)
        selected = tuple(tuple(ctx.region_at(r) for r in chosen) for chosen in selection.rows)
        results.append(PrimaryResult(scores=scores, selected=selected, rows=selection.rows, candidates=candidates))
    return results


def forward_scores(image: ImageInput, primary: Region, candidates: ProposalSet, params: ModelParams,
                   cfg: ModelConfig, rng: Optional[np.random.Generator] = None) -> ForwardResult:
    """score(α) = w_p·φ(primária) + termo secundário do modo, para todas as ações."""
    graph = Graph()
    result = score_regions(graph, image, [primary], [candidates], params, cfg, rng)[0]
    return ForwardResult(scores=result.scores, selected=result.selected, graph=graph)


def probabilities(scores: Union[Tensor, np.ndarray], loss_kind: LossKind = "softmax") -> np.ndarray:
    """Softmax sobre as ações, ou sigmoide independente por atributo no modo multilabel."""
    values = scores.values if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if loss_kind == "multilabel":
        return 0.5 * (1.0 + np.tanh(0.5 * values))
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


def predict(image: ImageInput, primaries: Sequence[Region], proposals: ProposalSet, params: ModelParams,
            cfg: ModelConfig, rng: Optional[np.random.Generator] = None) -> List[Prediction]:
    """Aplica candidate_set a cada primária e devolve probabilidades e secundárias escolhidas."""
    if not primaries:
        return []
    rule = get_rule(cfg.mode)
    if rule.uses_candidates:
        candidate_sets = [candidate_set(p, proposals, cfg.bounds) for p in primaries]
    else:
        candidate_sets = [proposals] * len(primaries)
    results = score_regions(Graph(), image, primaries, candidate_sets, params, cfg, rng)
    return [Prediction(probabilities(r.scores, cfg.loss_kind), r.selected) for r in results]


# ------------------------------------------------- verificação de gradientes

def _tiny_config(n_secondary: int = 1, bounds: Optional[OverlapBounds] = None) -> ModelConfig:
    return ModelConfig(
        extent=ImageExtent(width=16, height=16),
        trunk=(TrunkLayer(kind="conv", channels=4, kernel=3), TrunkLayer(kind="pool", kernel=2, stride=2)),
        roi_pool_size=2,
        fc_widths=(6, 5),
        class_names=("a", "b", "c"),
        mode="rstar",
        n_secondary=n_secondary,
        bounds=bounds or OverlapBounds(l=0.0, u=1.0),
    )


_TINY_PROPOSALS = (
    Region(x1=0, y1=0, x2=8, y2=8), Region(x1=8, y1=0, x2=16, y2=8), Region(x1=0, y1=8, x2=16, y2=16),
    Region(x1=4, y1=4, x2=12, y2=12), Region(x1=2, y1=6, x2=10, y2=16),
)


def _network_problem(cfg: ModelConfig, primaries: Sequence[Region], names: Optional[Sequence[str]]):
    def build(rng: np.random.Generator) -> Problem:
        params = init_params(cfg, seed=int(rng.integers(2 ** 31)))
        image = rng.uniform(size=(3, 16, 16))
        labels = rng.integers(0, cfg.num_classes, size=len(primaries))
        proposals = ProposalSet(image_id="gradcheck", regions=_TINY_PROPOSALS, extent=cfg.extent)
        candidate_sets = [candidate_set(p, proposals, cfg.bounds) for p in primaries]

        def forward(graph: Graph) -> Tensor:
            results = score_regions(graph, image, primaries, candidate_sets, params, cfg)
            losses = [graph.softmax_logloss(r.scores, int(label))[0] for r, label in zip(results, labels)]
            return graph.mean(losses)

        tensors = [params[n] for n in (names or params.names())]
        return Problem(forward, tensors)
    return build


def gradcheck_cases() -> List[GradcheckCase]:
    """Casos compostos: a rede inteira, o batch de dois exemplos nas fc compartilhadas e a seleção gulosa."""
    primary = Region(x1=5, y1=3, x2=11, y2=13)
    other = Region(x1=1, y1=1, x2=9, y2=9)
    return [
        GradcheckCase("network", _network_problem(_tiny_config(), [primary], None), PIECEWISE_TOLERANCE),
        GradcheckCase(
            "network_tied_fc_batch",
            _network_problem(_tiny_config(), [primary, other], ["fc6.weight", "fc6.bias", "fc7.weight", "fc7.bias"]),
            PIECEWISE_TOLERANCE,
        ),
        GradcheckCase(
            "network_greedy_ns2",
            _network_problem(_tiny_config(n_secondary=2, bounds=OverlapBounds(l=0.0, u=0.9)), [primary],
                             ["fc7.weight", "head_secondary.weight", "head_secondary.bias"]),
            PIECEWISE_TOLERANCE,
        ),
    ]
