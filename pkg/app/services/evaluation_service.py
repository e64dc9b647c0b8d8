# app/services/evaluation_service.py

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config.settings import settings
from app.geometry import iou
from app.models.configs import EvalConfig, ModelConfig
from app.models.dataset import CueGroundTruth, Dataset, ImageRecord
from app.models.region import ProposalSet
from app.models.report import (ClassResult, CueOverlapRow, CueOverlapSummary, EvalReport, FramePrediction,
                               InstancePrediction, PRPoint, TopPrediction)
from app.network import ModelParams, predict
from app.proposals import generate
from app.utils.error_handlers import EvaluationError, ShapeError

logger = logging.getLogger(__name__)

ELEVEN_POINTS = np.linspace(0.0, 1.0, 11)


def _ranked(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Contagens acumuladas em cada limiar distinto de score, do maior ao menor.
    Retorna (limiares, tp acumulado, fp acumulado, total de positivos).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} e rótulos {y.shape} com tamanhos diferentes")
    if not np.all((y == 0) | (y == 1)):
        raise EvaluationError("rótulos de AP devem ser binários")
    positives = int(y.sum())
    if positives == 0:
        raise EvaluationError("AP undefined: nenhum exemplo positivo")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # último índice de cada grupo de scores empatados
    last = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    return s[last], tp[last], fp[last], positives


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> List[PRPoint]:
    """Um ponto (limiar, precisão, recall) por score distinto, do maior limiar ao menor."""
    thresholds, tp, fp, positives = _ranked(scores, labels)
    precision = tp / (tp + fp)
    recall = tp / positives
    return [PRPoint(threshold=float(t), precision=float(p), recall=float(r))
            for t, p, r in zip(thresholds, precision, recall)]


def average_precision(scores: Sequence[float], labels: Sequence[int], interpolated: bool = False) -> float:
    """
    AP não interpolado: média, sobre os positivos, da precisão no limiar igual
    ao score de cada positivo. Scores empatados formam um único ponto de
    operação, então o resultado não depende da ordem de entrada nem de
    duplicações. interpolated=True usa a média em 11 níveis de recall.
    """
    thresholds, tp, fp, positives = _ranked(scores, labels)
    precision = tp / (tp + fp)
    if interpolated:
        recall = tp / positives
        return float(np.mean([precision[recall >= r].max() if np.any(recall >= r) else 0.0
                              for r in ELEVEN_POINTS]))
    new_positives = np.diff(np.concatenate(([0], tp)))
    return float(np.sum(new_positives * precision) / positives)


def frame_level(instances: Sequence[InstancePrediction]) -> List[FramePrediction]:
    """Agrega por frame: máximo por ação sobre as instâncias; o frame é positivo se alguma instância for."""
    groups: Dict[str, List[InstancePrediction]] = {}
    for inst in instances:
        groups.setdefault(inst.frame_id, []).append(inst)
    frames = []
    for frame_id, members in groups.items():
        probs = np.max([m.probabilities for m in members], axis=0)
        target = np.max([m.target for m in members], axis=0)
        frames.append(FramePrediction(
            frame_id=frame_id,
            target=tuple(int(t) for t in target),
            probabilities=tuple(float(p) for p in probs),
            instance_ids=tuple(m.instance_id for m in members),
        ))
    return frames


def top_predictions(report: EvalReport, k: int) -> Dict[str, List[TopPrediction]]:
    """As k instâncias de maior probabilidade por ação, com as secundárias escolhidas."""
    top: Dict[str, List[TopPrediction]] = {}
    for action, name in enumerate(report.class_names):
        ranked = sorted(range(len(report.instances)),
                        key=lambda i: (-report.instances[i].probabilities[action], i))[:k]
        top[name] = [
            TopPrediction(
                instance_id=report.instances[i].instance_id,
                probability=report.instances[i].probabilities[action],
                correct=report.instances[i].target[action] == 1,
                selected=report.instances[i].selected[action],
            )
            for i in ranked
        ]
    return top


def _is_correct(inst: InstancePrediction, multilabel: bool) -> bool:
    probs = np.asarray(inst.probabilities)
    if multilabel:
        return tuple(int(p >= 0.5) for p in probs) == tuple(inst.target)
    return inst.target[int(np.argmax(probs))] == 1


def cue_overlap(report: EvalReport, cues: CueGroundTruth, threshold: float = 0.3,
                multilabel: bool = False) -> CueOverlapSummary:
    """
    IoU entre a secundária escolhida para cada (instância, ação) e o glifo
    plantado naquela instância. O resumo conta, entre as instâncias com glifo
    classificadas corretamente, os pares (instância, ação verdadeira) com IoU >= threshold.
    """
    rows: List[CueOverlapRow] = []
    evaluated = hits = 0
    for inst in report.instances:
        planted = cues.for_instance(inst.instance_id)
        if not planted:
            continue
        best: List[Optional[float]] = []
        for action, name in enumerate(report.class_names):
            chosen = inst.selected[action]
            if not chosen:
                best.append(None)
                continue
            value = max(iou(s, c) for s in chosen for c in planted)
            best.append(value)
            rows.append(CueOverlapRow(instance_id=inst.instance_id, action=name, iou=value))
        if not _is_correct(inst, multilabel):
            continue
        for action, flag in enumerate(inst.target):
            if flag == 1 and best[action] is not None:
                evaluated += 1
                hits += int(best[action] >= threshold)

    fraction = hits / evaluated if evaluated else None
    if evaluated == 0:
        logger.warning("Sobreposição com glifos: nenhuma instância avaliável (sem secundárias ou sem acertos).")
    return CueOverlapSummary(threshold=threshold, evaluated=evaluated, hits=hits, fraction=fraction, rows=rows)


class EvaluationService:
    """
    Protocolo de avaliação: predict em cada instância de teste na sua região
    primária de ground truth, AP por classe (por instância ou por frame) e mAP.
    """

    def __init__(self, model_cfg: ModelConfig, eval_cfg: Optional[EvalConfig] = None,
                 proposals: Optional[Dict[str, ProposalSet]] = None, workers: Optional[int] = None):
        self.model_cfg = model_cfg
        self.eval_cfg = eval_cfg or EvalConfig()
        self.external_proposals = proposals or {}
        self.workers = workers or settings.worker_count("eval")
        logger.info(f"EvaluationService inicializado: modo={model_cfg.mode}, {self.workers} worker(s).")

    def _predict_image(self, index: int, record: ImageRecord, params: ModelParams,
                       target_of) -> List[InstancePrediction]:
        if not record.instances:
            return []
        proposals = self.external_proposals.get(record.image_id)
        if proposals is None:
            proposals = generate(record.extent, self.eval_cfg.proposal_config(), image_id=record.image_id)
        # fluxo por imagem: o resultado não depende da ordem de execução dos workers
        rng = np.random.default_rng([self.eval_cfg.seed, index])
        predictions = predict(record, [inst.region for inst in record.instances], proposals,
                              params, self.model_cfg, rng)
        return [
            InstancePrediction(
                instance_id=inst.instance_id,
                image_id=record.image_id,
                frame_id=record.frame_id,
                target=target_of(inst),
                probabilities=tuple(float(p) for p in pred.probabilities),
                selected=pred.selected,
            )
            for inst, pred in zip(record.instances, predictions)
        ]

    def evaluate(self, dataset: Dataset, params: ModelParams,
                 cues: Optional[CueGroundTruth] = None) -> EvalReport:
        if tuple(dataset.class_names) != tuple(self.model_cfg.class_names):
            raise EvaluationError(
                f"classes do dataset {dataset.class_names} diferem das do modelo {self.model_cfg.class_names}"
            )
        num_classes = len(dataset.class_names)

        def target_of(inst) -> Tuple[int, ...]:
            if inst.attributes is not None:
                return tuple(inst.attributes)
            return tuple(int(c == inst.label) for c in range(num_classes))

        images = list(enumerate(dataset.images))
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            per_image = list(pool.map(lambda item: self._predict_image(item[0], item[1], params, target_of), images))
        instances = [p for chunk in per_image for p in chunk]
        if not instances:
            raise EvaluationError("nenhuma instância para avaliar")

        frames = frame_level(instances) if self.eval_cfg.frame_level else []
        items = frames if self.eval_cfg.frame_level else instances
        classes = self._class_results(dataset.class_names, items)
        defined = [c.ap for c in classes if c.ap is not None]
        if not defined:
            raise EvaluationError("AP indefinido para todas as classes")

        report = EvalReport(
            mode=self.model_cfg.mode,
            level="frame" if self.eval_cfg.frame_level else "instance",
            ap_variant="11-point" if self.eval_cfg.interpolated else "uninterpolated",
            class_names=tuple(dataset.class_names),
            classes=classes,
            mean_ap=sum(defined) / len(defined),
            instances=instances,
            frames=frames,
        )
        report.top_predictions = top_predictions(report, self.eval_cfg.top_k)
        if cues is not None:
            report.cue_overlap = cue_overlap(report, cues, self.eval_cfg.cue_iou_threshold,
                                             multilabel=self.model_cfg.loss_kind == "multilabel")
        logger.info(f"Avaliação ({report.level}, {report.ap_variant}): mAP = {report.mean_ap:.4f}")
        return report

    def _class_results(self, class_names: Sequence[str], items) -> List[ClassResult]:
        results = []
        for action, name in enumerate(class_names):
            scores = [item.probabilities[action] for item in items]
            labels = [item.target[action] for item in items]
            positives = sum(labels)
            if positives == 0:
                logger.warning(f"Classe '{name}' sem positivos no conjunto avaliado; AP omitido do mAP.")
                results.append(ClassResult(class_name=name, positives=0))
                continue
            results.append(ClassResult(
                class_name=name,
                positives=positives,
                ap=average_precision(scores, labels, interpolated=self.eval_cfg.interpolated),
                curve=pr_curve(scores, labels),
            ))
        return results


def evaluate(dataset: Dataset, params: ModelParams, model_cfg: ModelConfig,
             eval_cfg: Optional[EvalConfig] = None, cues: Optional[CueGroundTruth] = None,
             proposals: Optional[Dict[str, ProposalSet]] = None) -> EvalReport:
    return EvaluationService(model_cfg, eval_cfg, proposals).evaluate(dataset, params, cues)
