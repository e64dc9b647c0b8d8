# app/services/experiment_service.py

import logging
from typing import List, Optional, Sequence

import numpy as np

from app.models.configs import EvalConfig, ModelConfig, ProposalConfig, TrainConfig
from app.models.dataset import Dataset
from app.models.region import OverlapBounds
from app.models.report import ComparisonReport, Variant, VariantRun
from app.services.evaluation_service import EvaluationService
from app.services.training_service import TrainingService, model_config_for
from app.utils.error_handlers import EvaluationError

logger = logging.getLogger(__name__)


# Limites de overlap varridos pelo max latente na comparação padrão
BOUNDS_SWEEP = (
    OverlapBounds(l=0.0, u=0.5),
    OverlapBounds(l=0.2, u=0.75),
    OverlapBounds(l=0.0, u=1.0),
)


def default_variants(bounds_sweep: Optional[Sequence[OverlapBounds]] = None,
                     greedy_secondary: int = 2) -> List[Variant]:
    """
    O experimento de controle: primária só, secundária aleatória, cena inteira,
    o max latente em cada par (l, u) da varredura e, no primeiro par, a
    variante gulosa com n_S > 1. A secundária aleatória usa o primeiro par.
    """
    sweep = list(dict.fromkeys(bounds_sweep or BOUNDS_SWEEP))
    first = sweep[0]
    variants = [
        Variant(name="rcnn", mode="rcnn"),
        Variant(name="random", mode="random", bounds=first),
        Variant(name="scene", mode="scene"),
    ]
    variants += [Variant(name=f"rstar_l{b.l:g}_u{b.u:g}", mode="rstar", bounds=b) for b in sweep]
    variants.append(Variant(name=f"rstar_l{first.l:g}_u{first.u:g}_ns{greedy_secondary}", mode="rstar",
                            bounds=first, n_secondary=greedy_secondary))
    return variants


def compare_variants(train_set: Dataset, test_set: Dataset, variants: Sequence[Variant],
                     seeds: Sequence[int], train_cfg: TrainConfig,
                     model_cfg: Optional[ModelConfig] = None,
                     proposal_cfg: Optional[ProposalConfig] = None,
                     eval_cfg: Optional[EvalConfig] = None) -> ComparisonReport:
    """Treina e avalia cada variante em cada semente; mediana do mAP por variante."""
    if not variants or not seeds:
        raise EvaluationError("comparação exige pelo menos uma variante e uma semente")
    eval_cfg = eval_cfg or EvalConfig(proposals=proposal_cfg)
    report = ComparisonReport(class_names=tuple(test_set.class_names))

    for variant in variants:
        maps = []
        for seed in seeds:
            update = {"mode": variant.mode, "n_secondary": variant.n_secondary, "seed": seed}
            if variant.bounds is not None:
                update["bounds"] = variant.bounds
            cfg = train_cfg.model_copy(update=update)
            resolved = model_config_for(train_set, cfg, model_cfg)
            logger.info(f"Variante '{variant.name}', semente {seed}: treinando {cfg.iterations} passos.")
            result = TrainingService(train_set, cfg, resolved, proposal_cfg).train()
            evaluation = EvaluationService(result.model_config, eval_cfg.model_copy(update={"seed": seed}))
            evaluated = evaluation.evaluate(test_set, result.params)
            maps.append(evaluated.mean_ap)
            report.runs.append(VariantRun(variant=variant.name, seed=seed, mean_ap=evaluated.mean_ap,
                                          ap_by_class=evaluated.ap_by_class()))
        report.median_map[variant.name] = float(np.median(maps))
        logger.info(f"Variante '{variant.name}': mAP mediano {report.median_map[variant.name]:.4f}")
    return report
