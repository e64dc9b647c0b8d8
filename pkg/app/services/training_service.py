# app/services/training_service.py

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from app.autodiff import Graph, Tensor
from app.geometry import augment_primaries, candidate_set
from app.models.configs import ModelConfig, ProposalConfig, TrainConfig
from app.models.dataset import Dataset, ImageRecord
from app.models.region import ImageExtent, ProposalSet, Region
from app.network import ModelParams, init_params, score_regions
from app.proposals import generate
from app.rules import get_rule
from app.utils.error_handlers import NonFiniteError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

Target = Union[int, Tuple[int, ...]]
CheckpointCallback = Callable[[int, ModelParams], None]


@dataclass
class PreparedImage:
    """Imagem pronta para amostragem: propostas, primárias aumentadas e suas candidatas."""
    index: int
    record: ImageRecord
    proposals: ProposalSet
    primaries: List[Tuple[Region, Target]]
    candidates: List[ProposalSet]


@dataclass(frozen=True)
class Example:
    image_index: int
    primary: Region
    target: Target
    candidates: ProposalSet


@dataclass
class Batch:
    """Exemplos (imagem, primária, rótulo, até N candidatas) de um passo de SGD."""
    examples: List[Example]
    image_indices: List[int]

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class StepResult:
    loss: float
    example_losses: List[float]
    selections: List[List[List[int]]] = field(default_factory=list)


@dataclass
class TrainResult:
    params: ModelParams
    losses: List[float]
    model_config: ModelConfig
    skipped_images: List[str] = field(default_factory=list)


def model_config_for(dataset: Dataset, train_cfg: TrainConfig, base: Optional[ModelConfig] = None) -> ModelConfig:
    """ModelConfig coerente com o dataset (classes, extensão) e com o modo de treino."""
    if not dataset.images:
        raise TrainingError("dataset vazio")
    first = dataset.images[0]
    update = {
        "class_names": dataset.class_names,
        "extent": ImageExtent(width=first.width, height=first.height),
    }
    if base is None:
        cfg = ModelConfig(**update)
    else:
        cfg = ModelConfig.model_validate({**base.model_dump(), **update})
    return train_cfg.apply_to(cfg)


class TrainingService:
    """
    Orquestra o treino: prepara primárias e candidatas por imagem, amostra
    batches e aplica SGD sobre a perda média do batch.
    """

    def __init__(self, dataset: Dataset, train_cfg: TrainConfig, model_cfg: ModelConfig,
                 proposal_cfg: Optional[ProposalConfig] = None,
                 proposals: Optional[Dict[str, ProposalSet]] = None):
        if dataset.loss_kind != train_cfg.loss_kind:
            raise TrainingError(
                f"dataset com perda '{dataset.loss_kind}' e treino configurado para '{train_cfg.loss_kind}'"
            )
        self.dataset = dataset
        self.train_cfg = train_cfg
        self.model_cfg = train_cfg.apply_to(model_cfg)
        self.proposal_cfg = proposal_cfg or ProposalConfig()
        self.external_proposals = proposals or {}
        self.rule = get_rule(self.model_cfg.mode)
        self._prepared: Optional[List[PreparedImage]] = None
        self.skipped_images: List[str] = []
        self._velocity: Dict[str, np.ndarray] = {}
        logger.info(
            f"TrainingService inicializado: modo={self.model_cfg.mode}, {len(dataset.images)} imagens, "
            f"{dataset.num_instances} instâncias."
        )

    # ----------------------------------------------------------- preparação

    def proposals_for(self, record: ImageRecord) -> ProposalSet:
        external = self.external_proposals.get(record.image_id)
        if external is not None:
            return external
        return generate(record.extent, self.proposal_cfg, image_id=record.image_id)

    def prepare(self) -> List[PreparedImage]:
        """Primárias aumentadas (IoU > limiar com algum ground truth) e candidatas de cada uma."""
        if self._prepared is not None:
            return self._prepared
        extent = self.model_cfg.extent
        prepared: List[PreparedImage] = []
        for index, record in enumerate(self.dataset.images):
            if (record.width, record.height) != (extent.width, extent.height):
                raise ShapeError(
                    f"imagem '{record.image_id}' {record.width}x{record.height} difere do modelo "
                    f"{extent.width}x{extent.height}"
                )
            if not record.instances:
                logger.warning(f"Imagem '{record.image_id}' sem primárias; ignorada no treino.")
                self.skipped_images.append(record.image_id)
                continue
            proposals = self.proposals_for(record)
            gt = [(inst.region.with_source("ground-truth"), inst.target) for inst in record.instances]
            primaries = augment_primaries(gt, proposals, self.train_cfg.augment_threshold)
            if self.rule.uses_candidates:
                candidates = [candidate_set(region, proposals, self.model_cfg.bounds) for region, _ in primaries]
            else:
                empty = ProposalSet(image_id=record.image_id, regions=(), extent=proposals.extent)
                candidates = [empty] * len(primaries)
            prepared.append(PreparedImage(index, record, proposals, primaries, candidates))
        if not prepared:
            raise TrainingError("nenhuma imagem com primárias para treinar")
        logger.info(
            f"Preparação concluída: {len(prepared)} imagens, "
            f"{sum(len(p.primaries) for p in prepared)} primárias aumentadas."
        )
        self._prepared = prepared
        return prepared

    # ------------------------------------------------------------ amostragem

    def sample_batch(self, rng: np.random.Generator) -> Batch:
        """
        Sorteia images_per_batch imagens, depois M primárias entre as delas
        (com reposição se houver menos de M) e N candidatas por primária, sem
        reposição. No modo rcnn as listas de candidatas ficam vazias.
        """
        prepared = self.prepare()
        cfg = self.train_cfg
        n_images = min(cfg.images_per_batch, len(prepared))
        chosen = rng.choice(len(prepared), size=n_images, replace=False)

        pool = [(int(i), j) for i in chosen for j in range(len(prepared[i].primaries))]
        replace = len(pool) < cfg.batch_primaries
        picks = rng.choice(len(pool), size=cfg.batch_primaries, replace=replace)

        examples: List[Example] = []
        for pick in picks:
            image_pos, primary_index = pool[int(pick)]
            image = prepared[image_pos]
            region, target = image.primaries[primary_index]
            candidates = image.candidates[primary_index]
            if len(candidates) > cfg.n_candidates:
                keep = np.sort(rng.choice(len(candidates), size=cfg.n_candidates, replace=False))
                candidates = ProposalSet(
                    image_id=candidates.image_id,
                    regions=tuple(candidates.regions[int(k)] for k in keep),
                    extent=candidates.extent,
                )
            examples.append(Example(image_pos, region, target, candidates))
        return Batch(examples=examples, image_indices=[int(i) for i in chosen])

    # ----------------------------------------------------------------- passo

    def batch_loss(self, graph: Graph, params: ModelParams, batch: Batch,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, StepResult]:
        """Perda média do batch em um único grafo; o tronco roda uma vez por imagem do batch."""
        prepared = self.prepare()
        by_image: Dict[int, List[int]] = {}
        for position, example in enumerate(batch.examples):
            by_image.setdefault(example.image_index, []).append(position)

        losses: List[Optional[Tensor]] = [None] * len(batch)
        selections: List[List[List[int]]] = [[] for _ in range(len(batch))]
        for image_pos, positions in by_image.items():
            record = prepared[image_pos].record
            examples = [batch.examples[p] for p in positions]
            results = score_regions(
                graph, record, [e.primary for e in examples], [e.candidates for e in examples],
                params, self.model_cfg, rng,
            )
            for position, example, result in zip(positions, examples, results):
                try:
                    if self.model_cfg.loss_kind == "multilabel":
                        loss, _ = graph.sigmoid_cross_entropy(result.scores, example.target)
                    else:
                        loss, _ = graph.softmax_logloss(result.scores, example.target)
                except NonFiniteError as exc:
                    raise TrainingError(self._describe(position, example, record, str(exc))) from exc
                if not math.isfinite(loss.item()):
                    raise TrainingError(self._describe(position, example, record, "perda não finita"))
                losses[position] = loss
                selections[position] = result.rows

        total = graph.mean(losses)
        return total, StepResult(loss=total.item(), example_losses=[t.item() for t in losses], selections=selections)

    @staticmethod
    def _describe(position: int, example: Example, record: ImageRecord, reason: str) -> str:
        return (f"{reason} no exemplo {position} (imagem '{record.image_id}', "
                f"primária {example.primary.coords}, rótulo {example.target})")

    def train_step(self, params: ModelParams, batch: Batch,
                   rng: Optional[np.random.Generator] = None) -> StepResult:
        """Forward, perda média, backward e atualização SGD (in-place)."""
        params.zero_grad()
        graph = Graph()
        loss, result = self.batch_loss(graph, params, batch, rng)
        if not math.isfinite(result.loss):
            raise TrainingError(f"perda do batch não finita: {result.loss}")
        graph.backward(loss)
        self._apply_sgd(params)
        return result

    def _apply_sgd(self, params: ModelParams) -> None:
        cfg = self.train_cfg
        if cfg.learning_rate == 0:
            return
        for name, tensor in params:
            if tensor.grad is None:
                continue
            update = tensor.grad
            if cfg.weight_decay:
                update = update + cfg.weight_decay * tensor.values
            if cfg.momentum:
                velocity = self._velocity.get(name)
                velocity = update.copy() if velocity is None else cfg.momentum * velocity + update
                self._velocity[name] = velocity
                update = velocity
            tensor.values -= cfg.learning_rate * update

    # ----------------------------------------------------------------- laço

    def train(self, params: Optional[ModelParams] = None,
              on_checkpoint: Optional[CheckpointCallback] = None) -> TrainResult:
        """
        Executa cfg.iterations passos. Determinístico por semente: o mesmo
        (dataset, config, semente) produz parâmetros idênticos bit a bit.
        """
        cfg = self.train_cfg
        params = params if params is not None else init_params(self.model_cfg, seed=cfg.seed)
        params.validate(self.model_cfg)
        batch_rng = np.random.default_rng(cfg.seed)
        # fluxo separado para o sorteio do modo random
        selection_rng = np.random.default_rng([cfg.seed, 1])
        self.prepare()

        losses: List[float] = []
        for step in range(1, cfg.iterations + 1):
            batch = self.sample_batch(batch_rng)
            result = self.train_step(params, batch, selection_rng)
            losses.append(result.loss)
            logger.debug(f"passo {step}: perda {result.loss:.6f}")
            if step % cfg.log_every == 0 or step == cfg.iterations:
                window = losses[-cfg.log_every:]
                logger.info(f"Passo {step}/{cfg.iterations}: perda média {sum(window) / len(window):.4f}")
            if on_checkpoint is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0 \
                    and step != cfg.iterations:
                on_checkpoint(step, params)

        if on_checkpoint is not None:
            on_checkpoint(cfg.iterations, params)
        return TrainResult(params=params, losses=losses, model_config=self.model_cfg,
                           skipped_images=list(self.skipped_images))


def sample_batch(service: TrainingService, rng: np.random.Generator) -> Batch:
    return service.sample_batch(rng)


def train_step(service: TrainingService, params: ModelParams, batch: Batch,
               rng: Optional[np.random.Generator] = None) -> StepResult:
    return service.train_step(params, batch, rng)


def train(dataset: Dataset, train_cfg: TrainConfig, model_cfg: Optional[ModelConfig] = None,
          proposal_cfg: Optional[ProposalConfig] = None,
          proposals: Optional[Dict[str, ProposalSet]] = None,
          on_checkpoint: Optional[CheckpointCallback] = None) -> TrainResult:
    """Atalho: monta o ModelConfig a partir do dataset e treina do zero."""
    model_cfg = model_config_for(dataset, train_cfg, model_cfg)
    service = TrainingService(dataset, train_cfg, model_cfg, proposal_cfg, proposals)
    return service.train(on_checkpoint=on_checkpoint)
