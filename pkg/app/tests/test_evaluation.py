# app/tests/test_evaluation.py

import numpy as np
import pytest

from app.models.configs import EvalConfig
from app.models.dataset import CueGroundTruth, Dataset
from app.models.region import Region
from app.models.report import ClassResult, EvalReport, InstancePrediction
from app.network import init_params
from app.services import (EvaluationService, average_precision, cue_overlap, evaluate, frame_level, pr_curve,
                          top_predictions, train)
from app.utils.error_handlers import EvaluationError


def brute_force_ap(scores, labels):
    """Média, sobre os positivos, da precisão na posição de cada positivo (scores distintos)."""
    order = np.argsort(-np.asarray(scores))
    hits, total = 0, 0.0
    for rank, index in enumerate(order, start=1):
        if labels[index] == 1:
            hits += 1
            total += hits / rank
    return total / sum(labels)


def prediction(instance_id, frame_id, target, probabilities, selected=None):
    return InstancePrediction(
        instance_id=instance_id,
        image_id=frame_id,
        frame_id=frame_id,
        target=target,
        probabilities=probabilities,
        selected=selected or tuple(() for _ in target),
    )


@pytest.fixture
def params(tiny_model_config):
    return init_params(tiny_model_config, seed=0)


def test_ap_exemplo_cinco_sextos():
    """Positivos nas posições 1 e 3: AP = (1 + 2/3) / 2."""
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5.0 / 6.0)


@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_ap_unico_positivo_na_posicao_k(k):
    """Um único positivo na posição k tem AP = 1/k."""
    scores = list(np.linspace(1.0, 0.0, k + 3))
    labels = [0] * len(scores)
    labels[k - 1] = 1
    assert average_precision(scores, labels) == pytest.approx(1.0 / k)


def test_ap_igual_ao_oraculo_forca_bruta():
    """Com scores distintos o AP coincide com o cálculo direto em 1000 casos aleatórios."""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 101))
        scores = rng.permutation(n) / n
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[0] = 1
        assert average_precision(scores, labels) == pytest.approx(brute_force_ap(scores, labels), abs=1e-12)


def test_ap_invariante_a_ordem_e_duplicacao():
    """Permutar a entrada ou duplicar cada exemplo não muda o AP, mesmo com empates."""
    scores = [0.5, 0.5, 0.9, 0.1, 0.5, 0.7]
    labels = [1, 0, 0, 1, 1, 0]
    base = average_precision(scores, labels)
    perm = np.random.default_rng(1).permutation(len(scores))
    assert average_precision([scores[i] for i in perm], [labels[i] for i in perm]) == pytest.approx(base)
    assert average_precision(scores * 2, labels * 2) == pytest.approx(base)


def test_ap_invariante_a_transformacao_monotona():
    """Transformações estritamente crescentes dos scores (exp, 3x + 1) não mudam o AP."""
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        labels[0] = 1
        base = average_precision(list(scores), list(labels))
        assert average_precision(list(np.exp(scores)), list(labels)) == pytest.approx(base, abs=1e-12)
        assert average_precision(list(3.0 * scores + 1.0), list(labels)) == pytest.approx(base, abs=1e-12)


def test_ap_empate_total():
    """Todos empatados: um único ponto de operação com precisão igual à fração de positivos."""
    assert average_precision([0.3, 0.3, 0.3, 0.3], [1, 0, 0, 1]) == pytest.approx(0.5)


def test_ap_sem_positivos_e_erro():
    """Sem positivos o AP é indefinido."""
    with pytest.raises(EvaluationError):
        average_precision([0.2, 0.1], [0, 0])


def test_ap_onze_pontos():
    """Ranking perfeito dá 1 nas duas variantes; a interpolada nunca fica abaixo da não interpolada aqui."""
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0], interpolated=True) == pytest.approx(1.0)
    scores, labels = [0.9, 0.8, 0.7, 0.6], [0, 1, 0, 1]
    assert average_precision(scores, labels, interpolated=True) >= average_precision(scores, labels)


def test_pr_curve_um_ponto_por_score_distinto():
    """A curva tem um ponto por limiar distinto, com recall não decrescente."""
    curve = pr_curve([0.9, 0.5, 0.5, 0.1], [1, 0, 1, 0])
    assert [p.threshold for p in curve] == [0.9, 0.5, 0.1]
    assert [p.recall for p in curve] == [0.5, 1.0, 1.0]
    assert curve[1].precision == pytest.approx(2.0 / 3.0)


def test_frame_level_maximo_por_acao():
    """O frame recebe o máximo de cada ação e é positivo se alguma instância for."""
    instances = [
        prediction("a", "f1", (1, 0), (0.7, 0.3)),
        prediction("b", "f1", (0, 1), (0.4, 0.6)),
        prediction("c", "f2", (1, 0), (0.2, 0.8)),
    ]
    frames = {f.frame_id: f for f in frame_level(instances)}
    assert frames["f1"].probabilities == (0.7, 0.6)
    assert frames["f1"].target == (1, 1)
    assert frames["f1"].instance_ids == ("a", "b")
    assert frames["f2"].target == (1, 0)


def test_cue_overlap_e_top_predictions():
    """Secundária igual ao glifo conta como acerto; top_predictions lista a instância mais confiante."""
    cue = Region(x1=0, y1=0, x2=12, y2=12)
    far = Region(x1=30, y1=30, x2=42, y2=42)
    report = EvalReport(
        mode="rstar",
        class_names=("a", "b"),
        classes=[ClassResult(class_name="a", positives=1, ap=1.0), ClassResult(class_name="b")],
        mean_ap=1.0,
        instances=[prediction("i0", "img", (1, 0), (0.8, 0.2), selected=((cue,), (far,)))],
    )
    summary = cue_overlap(report, CueGroundTruth(cues={"i0": (cue,)}), threshold=0.3)
    assert summary.evaluated == 1
    assert summary.hits == 1
    assert summary.fraction == 1.0
    assert {(r.action, r.iou) for r in summary.rows} == {("a", 1.0), ("b", 0.0)}

    top = top_predictions(report, k=1)
    assert top["a"][0].instance_id == "i0"
    assert top["a"][0].correct is True
    assert top["b"][0].correct is False


def test_evaluate_relatorio_por_instancia(tiny_split, tiny_model_config, params):
    """Uma predição por instância de teste e mAP igual à média dos APs definidos."""
    report = evaluate(tiny_split.test, params, tiny_model_config, EvalConfig(top_k=2), cues=tiny_split.cues)
    assert len(report.instances) == tiny_split.test.num_instances
    defined = [c.ap for c in report.classes if c.ap is not None]
    assert report.mean_ap == pytest.approx(sum(defined) / len(defined))
    for inst in report.instances:
        assert sum(inst.probabilities) == pytest.approx(1.0)
        assert len(inst.selected) == len(report.class_names)
    assert all(len(v) <= 2 for v in report.top_predictions.values())
    assert report.cue_overlap is not None


def test_evaluate_deterministico_com_varios_workers(tiny_split, tiny_model_config, params):
    """O relatório não depende do número de workers."""
    cfg = tiny_model_config.model_copy(update={"mode": "random"})
    one = EvaluationService(cfg, workers=1).evaluate(tiny_split.test, params)
    many = EvaluationService(cfg, workers=4).evaluate(tiny_split.test, params)
    assert [i.probabilities for i in one.instances] == [i.probabilities for i in many.instances]
    assert one.mean_ap == many.mean_ap


def test_evaluate_por_frame(tiny_split, tiny_model_config, params):
    """No nível de frame há um item por frame com instâncias."""
    report = evaluate(tiny_split.test, params, tiny_model_config, EvalConfig(frame_level=True))
    assert report.level == "frame"
    assert len(report.frames) == sum(1 for image in tiny_split.test.images if image.instances)


def test_evaluate_classe_sem_positivos(tiny_split, tiny_model_config, params):
    """Classe sem positivos fica com AP None e fora do mAP."""
    kept = tuple(image for image in tiny_split.test.images if all(i.label != 0 for i in image.instances))
    dataset = Dataset(class_names=tiny_split.test.class_names, images=kept)
    report = evaluate(dataset, params, tiny_model_config)
    by_class = report.ap_by_class()
    assert by_class[tiny_split.test.class_names[0]] is None
    defined = [v for v in by_class.values() if v is not None]
    assert report.mean_ap == pytest.approx(sum(defined) / len(defined))


def test_evaluate_classes_diferentes_do_modelo(tiny_split, tiny_model_config, params):
    """Dataset com outras classes não pode ser avaliado com o modelo."""
    cfg = tiny_model_config.model_copy(update={"class_names": ("x", "y", "z")})
    with pytest.raises(EvaluationError):
        evaluate(tiny_split.test, params, cfg)


def test_checkpoint_rcnn_nao_consulta_cabeca_secundaria(tiny_split, tiny_train_config, tiny_model_config,
                                                         tiny_proposal_config):
    """Um modelo treinado em rcnn avalia igual com a cabeça secundária trocada por NaN."""
    cfg = tiny_train_config.model_copy(update={"mode": "rcnn", "iterations": 2})
    result = train(tiny_split.train, cfg, tiny_model_config, tiny_proposal_config)
    eval_cfg = EvalConfig(proposals=tiny_proposal_config)
    before = evaluate(tiny_split.test, result.params, result.model_config, eval_cfg)

    poisoned = result.params.copy()
    poisoned["head_secondary.weight"].values[...] = np.nan
    poisoned["head_secondary.bias"].values[...] = np.nan
    after = evaluate(tiny_split.test, poisoned, result.model_config, eval_cfg)

    assert result.model_config.mode == "rcnn"
    assert after.mean_ap == before.mean_ap
    assert [i.probabilities for i in after.instances] == [i.probabilities for i in before.instances]
