# app/tests/test_autodiff.py

import math

import numpy as np
import pytest

from app.autodiff import Graph, GradcheckCase, Problem, Tensor, roi_bins, run_gradcheck, standard_cases
from app.autodiff.gradcheck import PIECEWISE_TOLERANCE, check_case, param
from app.models.region import Region
from app.utils.error_handlers import GeometryError, GraphError, LabelError, NonFiniteError, ShapeError


@pytest.fixture
def graph():
    return Graph()


def _square_sum_wrong_backward(rng):
    """Operador de teste com backward errado: d(sum x²)/dx deveria ser 2x."""
    x = param(rng, 4, name="x")

    def forward(g):
        return g.custom_op("square_sum", [x], np.sum(x.values ** 2), lambda grad: (grad * x.values,))

    return Problem(forward=forward, tensors=[x])


def test_conv2d_exemplo_manual(graph):
    """Kernel 2x2 de uns soma cada janela; bias é somado em todas as posições."""
    x = Tensor(np.arange(9, dtype=float).reshape(1, 3, 3))
    w = Tensor(np.ones((1, 1, 2, 2)))
    b = Tensor(np.array([0.5]))
    out = graph.conv2d(x, w, b)
    assert out.shape == (1, 2, 2)
    np.testing.assert_allclose(out.values[0], [[8.5, 12.5], [20.5, 24.5]])


def test_conv2d_stride_e_padding(graph):
    """Padding 1 e stride 2 em 4x4 com kernel 3 geram saída 2x2."""
    x = Tensor(np.ones((2, 4, 4)))
    out = graph.conv2d(x, Tensor(np.ones((3, 2, 3, 3))), Tensor(np.zeros(3)), stride=2, padding=1)
    assert out.shape == (3, 2, 2)
    # canto superior esquerdo: 2 canais x 4 pixels válidos
    assert out.values[0, 0, 0] == pytest.approx(8.0)


def test_conv2d_formas_incompativeis(graph):
    """Canais de entrada diferentes dos pesos levantam ShapeError citando as formas."""
    with pytest.raises(ShapeError):
        graph.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))), Tensor(np.zeros(1)))


def test_relu_e_max_pool(graph):
    """relu zera negativos; max pool 2x2 pega o máximo de cada janela."""
    x = Tensor(np.array([[[-1.0, 2.0], [3.0, -4.0]]]), requires_grad=True)
    r = graph.relu(x)
    np.testing.assert_array_equal(r.values, [[[0.0, 2.0], [3.0, 0.0]]])
    p = graph.max_pool2d(r, window=2, stride=2)
    assert p.values.reshape(-1).tolist() == [3.0]
    graph.backward(graph.reshape(p, ()))
    np.testing.assert_array_equal(x.grad, [[[0.0, 0.0], [1.0, 0.0]]])


def test_roi_bins_nunca_vazios():
    """Cada faixa do ROI pooling tem pelo menos uma célula, mesmo para ROIs menores que P."""
    rows, cols = roi_bins(Region(x1=3, y1=3, x2=4, y2=4), 1.0, 8, 8, 4)
    assert len(rows) == len(cols) == 4
    assert all(end > start for start, end in rows + cols)


def test_roi_bins_fora_do_mapa():
    """ROI inteiramente fora do mapa é erro de geometria."""
    with pytest.raises(GeometryError):
        roi_bins(Region(x1=20, y1=20, x2=30, y2=30), 0.5, 8, 8, 2)


def test_roi_max_pool_batch_exemplo(graph):
    """A ROI da imagem inteira com P=1 devolve o máximo global de cada canal."""
    fmap = np.zeros((2, 4, 4))
    fmap[0, 1, 2] = 5.0
    fmap[1, 3, 0] = 7.0
    features = Tensor(fmap, requires_grad=True)
    out = graph.roi_max_pool_batch(features, [Region(x1=0, y1=0, x2=8, y2=8)], 0.5, 1)
    assert out.shape == (1, 2, 1, 1)
    assert out.values.reshape(-1).tolist() == [5.0, 7.0]


def test_roi_max_pool_mapa_inteiro(graph):
    """Mapa [[1,2],[3,4]] com a ROI inteira: P=1 dá o máximo, P=2 devolve o próprio mapa."""
    features = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]), requires_grad=True)
    roi = Region(x1=0, y1=0, x2=2, y2=2)
    assert graph.roi_max_pool(features, roi, 1.0, 1).values.reshape(-1).tolist() == [4.0]
    assert graph.roi_max_pool(features, roi, 1.0, 2).values.tolist() == [[[1.0, 2.0], [3.0, 4.0]]]


def test_linear_vetor_e_batch(graph):
    """linear aceita [d] e [N,d]."""
    w = Tensor(np.array([[1.0, 2.0], [0.0, -1.0]]))
    b = Tensor(np.array([0.5, 0.0]))
    np.testing.assert_allclose(graph.linear(Tensor([1.0, 1.0]), w, b).values, [3.5, -1.0])
    assert graph.linear(Tensor(np.ones((3, 2))), w, b).shape == (3, 2)


def test_reduce_max_rows_empate_menor_indice(graph):
    """Empate no máximo escolhe a menor linha; a máscara restringe as linhas permitidas."""
    scores = Tensor(np.array([[1.0, 3.0], [1.0, 5.0], [0.0, 5.0]]))
    out, argmax = graph.reduce_max_rows(scores)
    assert argmax.tolist() == [0, 1]
    assert out.values.tolist() == [1.0, 5.0]
    mask = np.array([[False, True], [True, False], [True, False]])
    _, masked = graph.reduce_max_rows(scores, mask)
    assert masked.tolist() == [1, 0]


def test_reduce_max_rows_sem_candidatas(graph):
    """K = 0 é erro de forma; coluna sem linha permitida é erro de grafo."""
    with pytest.raises(ShapeError):
        graph.reduce_max_rows(Tensor(np.zeros((0, 3))))
    with pytest.raises(GraphError):
        graph.reduce_max_rows(Tensor(np.zeros((2, 2))), np.array([[True, False], [True, False]]))


def test_softmax_logloss_analitico(graph):
    """Scores iguais em A ações: perda log(A) e probabilidades uniformes."""
    loss, probs = graph.softmax_logloss(Tensor(np.zeros(4)), 2)
    assert loss.item() == pytest.approx(math.log(4))
    np.testing.assert_allclose(probs, 0.25)


def test_softmax_logloss_estavel_com_scores_grandes(graph):
    """Subtração do máximo mantém a perda finita com scores enormes."""
    loss, probs = graph.softmax_logloss(Tensor(np.array([1000.0, 0.0])), 1)
    assert loss.item() == pytest.approx(1000.0)
    assert np.all(np.isfinite(probs))
    loss, _ = graph.softmax_logloss(Tensor(np.array([1000.0, 0.0])), 0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_logloss_erros(graph):
    """Rótulo fora do intervalo e score não finito são rejeitados."""
    with pytest.raises(LabelError):
        graph.softmax_logloss(Tensor(np.zeros(3)), 3)
    with pytest.raises(NonFiniteError):
        graph.softmax_logloss(Tensor(np.array([np.nan, 0.0])), 0)


def test_sigmoid_cross_entropy_analitico(graph):
    """Score 0 dá log(2) por atributo; rótulos não binários são rejeitados."""
    loss, probs = graph.sigmoid_cross_entropy(Tensor(np.zeros(3)), [1, 0, 1])
    assert loss.item() == pytest.approx(math.log(2))
    np.testing.assert_allclose(probs, 0.5)
    with pytest.raises(LabelError):
        graph.sigmoid_cross_entropy(Tensor(np.zeros(2)), [2, 0])


def test_sigmoid_cross_entropy_igual_a_bces_independentes():
    """A perda multilabel é a média das entropias binárias calculadas atributo a atributo."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        scores = rng.normal(scale=3.0, size=int(rng.integers(1, 6)))
        labels = rng.integers(0, 2, size=scores.shape[0])
        # -log sigmoid(s) = log1p(e^-s); -log(1 - sigmoid(s)) = log1p(e^s)
        expected = np.mean([math.log1p(math.exp(-s)) if y else math.log1p(math.exp(s))
                            for s, y in zip(scores, labels)])
        loss, _ = Graph().sigmoid_cross_entropy(Tensor(scores), labels.tolist())
        assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_backward_acumula_gradiente():
    """Dois backward seguidos sem zerar dobram o gradiente da folha."""
    w = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    x = Tensor(np.array([3.0, 4.0]))

    def run():
        g = Graph()
        out = g.linear(x, w, Tensor(np.zeros(1)))
        g.backward(g.mean([g.reshape(out, ())]))

    run()
    first = w.grad.copy()
    np.testing.assert_allclose(first, [[3.0, 4.0]])
    run()
    np.testing.assert_allclose(w.grad, 2 * first)
    w.zero_grad()
    assert w.grad is None


def test_backward_erros(graph):
    """backward sem forward, perda não escalar ou de outro grafo são erros."""
    with pytest.raises(GraphError):
        graph.backward(Tensor(np.array(1.0)))
    out = graph.relu(Tensor(np.ones(3), requires_grad=True))
    with pytest.raises(ShapeError):
        graph.backward(out)
    with pytest.raises(GraphError):
        graph.backward(Tensor(np.array(1.0)))


def test_gradcheck_suite_padrao_passa():
    """Todos os operadores da suíte padrão passam na verificação para uma semente."""
    results = run_gradcheck(seeds=(0,))
    failed = [(r.operator, r.max_rel_error, r.error) for r in results if not r.passed]
    assert not failed, f"Operadores com gradiente divergente: {failed}"
    assert {r.operator for r in results} == {case.name for case in standard_cases()}


def test_gradcheck_detecta_operador_defeituoso():
    """Um operador com backward errado injetado na suíte aparece como falha."""
    broken = GradcheckCase(name="square_sum_broken", build=_square_sum_wrong_backward,
                           tolerance=PIECEWISE_TOLERANCE)
    results = run_gradcheck(seeds=(0, 1), cases=[], extra_cases=[broken])
    assert len(results) == 2
    assert all(not r.passed for r in results)
    assert all(r.max_rel_error == pytest.approx(0.5, abs=1e-3) for r in results)


def test_check_case_deterministico():
    """A mesma semente produz o mesmo erro relativo."""
    case = next(c for c in standard_cases() if c.name == "softmax_logloss")
    assert check_case(case, 3).max_rel_error == check_case(case, 3).max_rel_error
