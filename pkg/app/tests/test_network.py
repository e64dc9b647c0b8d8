# app/tests/test_network.py

import numpy as np
import pytest

from app.autodiff import Graph, run_gradcheck
from app.geometry import candidate_set, whole_image_region
from app.models.configs import ModelConfig, TrunkLayer
from app.models.region import ImageExtent, OverlapBounds, ProposalSet, Region
from app.network import (forward_scores, glorot_bound, gradcheck_cases, init_params, parameter_shapes, predict,
                         probabilities, region_features, score_regions, trunk)
from app.utils.error_handlers import GraphError, ShapeError

EXTENT = ImageExtent(width=16, height=16)
PRIMARY = Region(x1=5, y1=3, x2=11, y2=13)


def make_config(mode="rstar", **overrides):
    values = dict(
        extent=EXTENT,
        trunk=(TrunkLayer(kind="conv", channels=4, kernel=3), TrunkLayer(kind="pool", kernel=2, stride=2)),
        roi_pool_size=2,
        fc_widths=(6, 5),
        class_names=("a", "b", "c"),
        mode=mode,
        bounds=OverlapBounds(l=0.0, u=1.0),
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def image():
    return np.random.default_rng(0).uniform(size=(3, 16, 16))


@pytest.fixture
def proposals():
    regions = (
        Region(x1=0, y1=0, x2=8, y2=8), Region(x1=8, y1=0, x2=16, y2=8),
        Region(x1=0, y1=8, x2=16, y2=16), Region(x1=4, y1=4, x2=12, y2=12),
    )
    return ProposalSet(image_id="img", regions=regions, extent=EXTENT)


def test_parameter_shapes_ordem_canonica():
    """Tronco primeiro, depois fc6/fc7 compartilhadas e as duas cabeças."""
    shapes = parameter_shapes(make_config())
    assert list(shapes) == [
        "trunk.conv0.weight", "trunk.conv0.bias", "fc6.weight", "fc6.bias", "fc7.weight", "fc7.bias",
        "head_primary.weight", "head_primary.bias", "head_secondary.weight", "head_secondary.bias",
    ]
    assert shapes["fc6.weight"] == (6, 4 * 2 * 2)
    assert shapes["head_secondary.weight"] == (3, 5)


def test_init_params_deterministico_e_limitado():
    """Mesma semente, mesmos pesos; pesos dentro de ±sqrt(6/(fan_in+fan_out)) e biases zero."""
    cfg = make_config()
    first, second = init_params(cfg, seed=3), init_params(cfg, seed=3)
    assert first.equals(second)
    assert not first.equals(init_params(cfg, seed=4))
    for name, tensor in first:
        if name.endswith(".bias"):
            assert not tensor.values.any()
        else:
            assert np.abs(tensor.values).max() <= glorot_bound(tensor.shape)
    first.validate(cfg)


def test_rcnn_igual_rstar_com_cabeca_secundaria_zerada(image, proposals):
    """Com pesos secundários nulos o termo secundário é zero e rstar coincide com rcnn."""
    rstar_cfg, rcnn_cfg = make_config("rstar"), make_config("rcnn")
    params = init_params(rstar_cfg, seed=1)
    params["head_secondary.weight"].values[...] = 0.0
    params["head_secondary.bias"].values[...] = 0.0

    cands = candidate_set(PRIMARY, proposals, rstar_cfg.bounds)
    rstar = forward_scores(image, PRIMARY, cands, params, rstar_cfg)
    rcnn = forward_scores(image, PRIMARY, cands, params, rcnn_cfg)
    np.testing.assert_allclose(rstar.scores.values, rcnn.scores.values, rtol=1e-12, atol=1e-14)
    assert rcnn.selected == ((), (), ())


def test_scene_escolhe_imagem_inteira(image, proposals):
    """No modo scene a secundária de toda ação é a imagem inteira."""
    cfg = make_config("scene")
    params = init_params(cfg, seed=2)
    result = forward_scores(image, PRIMARY, proposals, params, cfg)
    whole = whole_image_region(EXTENT)
    assert all(chosen == (whole,) for chosen in result.selected)


def test_rstar_escolhe_candidata_de_maior_score(image, proposals):
    """A secundária escolhida para cada ação é o argmax do score secundário entre as candidatas."""
    cfg = make_config("rstar")
    params = init_params(cfg, seed=5)
    cands = candidate_set(PRIMARY, proposals, cfg.bounds)
    result = forward_scores(image, PRIMARY, cands, params, cfg)

    best = []
    for action in range(cfg.num_classes):
        values = []
        for region in cands.regions:
            g = Graph()
            hidden = region_features(g, params, cfg, trunk(g, params, cfg, image), [region])
            values.append((hidden.values @ params["head_secondary.weight"].values.T
                           + params["head_secondary.bias"].values)[0, action])
        best.append(cands.regions[int(np.argmax(values))].coords)
    assert [chosen[0].coords for chosen in result.selected] == best


def test_tronco_roda_uma_vez_por_imagem(image, proposals):
    """O número de convoluções não depende de quantas regiões ou primárias são pontuadas."""
    cfg = make_config("rstar")
    params = init_params(cfg, seed=0)
    primaries = [PRIMARY, Region(x1=1, y1=1, x2=9, y2=9), Region(x1=6, y1=6, x2=15, y2=15)]
    counts = []
    for n in (1, 3):
        graph = Graph()
        sets = [candidate_set(p, proposals, cfg.bounds) for p in primaries[:n]]
        score_regions(graph, image, primaries[:n], sets, params, cfg)
        counts.append((graph.op_counts["conv2d"], graph.op_counts["roi_max_pool"]))
    assert counts == [(1, 1), (1, 1)]


def test_predict_sem_primarias(image, proposals):
    """Nenhuma primária, nenhuma predição."""
    cfg = make_config()
    assert predict(image, [], proposals, init_params(cfg), cfg) == []


def test_predict_probabilidades_e_candidatas(image, proposals):
    """Probabilidades somam 1 e cada secundária escolhida pertence a candidate_set da primária."""
    cfg = make_config("rstar", bounds=OverlapBounds(l=0.1, u=0.6))
    params = init_params(cfg, seed=7)
    primaries = [PRIMARY, Region(x1=0, y1=0, x2=10, y2=10)]
    for primary, prediction in zip(primaries, predict(image, primaries, proposals, params, cfg)):
        assert prediction.probabilities.sum() == pytest.approx(1.0)
        allowed = set(candidate_set(primary, proposals, cfg.bounds).coords())
        assert all(chosen[0].coords in allowed for chosen in prediction.selected)


def test_predict_multilabel_usa_sigmoide(image, proposals):
    """No modo multilabel cada atributo tem probabilidade independente em (0, 1)."""
    cfg = make_config(loss_kind="multilabel")
    prediction = predict(image, [PRIMARY], proposals, init_params(cfg, seed=1), cfg)[0]
    assert np.all((prediction.probabilities > 0) & (prediction.probabilities < 1))
    np.testing.assert_allclose(probabilities(np.zeros(3), "multilabel"), 0.5)


def test_random_exige_gerador_e_reproduz(image, proposals):
    """O modo random sorteia do fluxo semeado: mesma semente, mesma escolha."""
    cfg = make_config("random")
    params = init_params(cfg, seed=0)
    with pytest.raises(GraphError):
        predict(image, [PRIMARY], proposals, params, cfg)
    first = predict(image, [PRIMARY], proposals, params, cfg, rng=np.random.default_rng(9))[0]
    second = predict(image, [PRIMARY], proposals, params, cfg, rng=np.random.default_rng(9))[0]
    assert first.selected == second.selected
    assert len({chosen for chosen in first.selected}) == 1


def test_greedy_ns2_escolhe_duas_regioes_distintas(image, proposals):
    """Com n_S = 2 cada ação recebe duas secundárias."""
    cfg = make_config("rstar", n_secondary=2, bounds=OverlapBounds(l=0.0, u=0.9))
    prediction = predict(image, [PRIMARY], proposals, init_params(cfg, seed=3), cfg)[0]
    assert all(len(chosen) == 2 for chosen in prediction.selected)
    assert all(chosen[0].coords != chosen[1].coords for chosen in prediction.selected)


def test_imagem_com_forma_errada(proposals):
    """Imagem com dimensões diferentes do modelo é erro de forma."""
    cfg = make_config()
    with pytest.raises(ShapeError):
        predict(np.zeros((3, 8, 8)), [PRIMARY], proposals, init_params(cfg), cfg)


def test_gradcheck_da_rede_completa():
    """Gradientes da rede inteira, do batch com fc compartilhadas e da seleção gulosa conferem."""
    results = run_gradcheck(seeds=(0,), cases=gradcheck_cases())
    failed = [(r.operator, r.max_rel_error, r.error) for r in results if not r.passed]
    assert not failed, f"Casos compostos com gradiente divergente: {failed}"


def test_probabilidades_no_simplex():
    """Softmax em 1000 vetores aleatórios: não negativas e somando 1 até 1e-12."""
    rng = np.random.default_rng(7)
    for _ in range(1000):
        scores = rng.normal(scale=rng.uniform(0.1, 50.0), size=int(rng.integers(2, 12)))
        probs = probabilities(scores)
        assert np.all(probs >= 0.0)
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert int(np.argmax(probs)) == int(np.argmax(scores))
