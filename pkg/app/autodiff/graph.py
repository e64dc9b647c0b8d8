# app/autodiff/graph.py
"""
Grafo de diferenciação reversa com exatamente os operadores que a rede usa.
Cada operação executada é registrada em ordem topológica; backward percorre a
lista ao contrário. Um Graph pertence a um único forward pass.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.autodiff.tensor import Tensor
from app.models.region import Region
from app.utils.error_handlers import GeometryError, GraphError, LabelError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    meta: Dict[str, Any] = field(default_factory=dict)


def roi_bins(roi: Region, spatial_scale: float, height: int, width: int, size: int,
             frame: Optional[Tuple[float, float]] = None) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """
    Limites (início, fim) das P faixas verticais e horizontais de uma ROI no mapa
    de features. A ROI é levada às coordenadas do mapa com floor no início e ceil
    no fim e recortada à grade; cada faixa é arredondada para fora, então nenhuma
    fica vazia. frame é a extensão da imagem já em unidades do mapa (padrão: a grade).
    """
    frame_w, frame_h = frame if frame is not None else (float(width), float(height))
    sx1, sy1 = roi.x1 * spatial_scale, roi.y1 * spatial_scale
    sx2, sy2 = roi.x2 * spatial_scale, roi.y2 * spatial_scale
    if sx2 <= 0 or sy2 <= 0 or sx1 >= frame_w or sy1 >= frame_h:
        raise GeometryError(
            f"ROI {roi.coords} fora do mapa de features {height}x{width} (escala {spatial_scale:g})"
        )

    def axis(start: float, end: float, cells: int) -> List[Tuple[int, int]]:
        lo = min(max(int(math.floor(start)), 0), cells - 1)
        hi = min(max(int(math.ceil(end)), lo + 1), cells)
        extent = hi - lo
        return [(lo + (j * extent) // size, lo + -((-(j + 1) * extent) // size)) for j in range(size)]

    return axis(sy1, sy2, height), axis(sx1, sx2, width)


class Graph:
    """Registro topológico das operações de um forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.op_counts: Counter = Counter()

    def _record(self, op: str, inputs: Sequence[Tensor], values: np.ndarray,
                backward: BackwardFn, **meta) -> Node:
        output = Tensor(values, requires_grad=any(t.requires_grad for t in inputs), name=op)
        node = Node(op=op, inputs=tuple(inputs), output=output, backward=backward, meta=meta)
        self.nodes.append(node)
        self.op_counts[op] += 1
        return node

    def custom_op(self, op: str, inputs: Sequence[Tensor], values: np.ndarray, backward: BackwardFn) -> Tensor:
        """Registra um operador externo (forward já calculado) com o seu backward."""
        return self._record(op, inputs, np.asarray(values, dtype=np.float64), backward).output

    def decisions(self) -> List[np.ndarray]:
        """Escolhas discretas do forward (máscaras de relu, argmax de pooling e de seleção), em ordem."""
        return [node.meta["decision"] for node in self.nodes if "decision" in node.meta]

    # ------------------------------------------------------------------ tronco

    def conv2d(self, x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
        """Correlação cruzada válida (padding opcional). x: [C,H,W], weight: [O,C,k,k], bias: [O]."""
        if x.values.ndim != 3 or weight.values.ndim != 4 or weight.shape[1] != x.shape[0] \
                or weight.shape[2] != weight.shape[3]:
            raise ShapeError(f"conv2d: entrada {x.shape} incompatível com pesos {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias {bias.shape} incompatível com pesos {weight.shape}")
        k = weight.shape[2]
        xp = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding))) if padding else x.values
        if xp.shape[1] < k or xp.shape[2] < k:
            raise ShapeError(f"conv2d: entrada {x.shape} menor que o kernel {weight.shape}")

        windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        out = np.einsum("chwij,ocij->ohw", windows, weight.values, optimize=True)
        out += bias.values[:, None, None]
        out_h, out_w = out.shape[1], out.shape[2]

        def backward(g: np.ndarray):
            gx = gw = gb = None
            if weight.requires_grad:
                gw = np.einsum("ohw,chwij->ocij", g, windows, optimize=True)
            if bias.requires_grad:
                gb = g.sum(axis=(1, 2))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += \
                            np.einsum("ohw,oc->chw", g, weight.values[:, :, i, j])
                gx = gxp[:, padding:padding + x.shape[1], padding:padding + x.shape[2]] if padding else gxp
            return gx, gw, gb

        return self._record("conv2d", (x, weight, bias), out, backward).output

    def relu(self, x: Tensor) -> Tensor:
        positive = x.values > 0

        def backward(g: np.ndarray):
            return (g * positive,)

        return self._record("relu", (x,), np.where(positive, x.values, 0.0), backward, decision=positive).output

    def max_pool2d(self, x: Tensor, window: int, stride: int) -> Tensor:
        """Máximo por janela; o gradiente vai para o primeiro argmax (ordem de linha) de cada janela."""
        if x.values.ndim != 3:
            raise ShapeError(f"max_pool2d: entrada {x.shape} não é [C,H,W]")
        channels, height, width = x.shape
        if height < window or width < window:
            raise ShapeError(f"max_pool2d: janela {window} maior que a entrada {x.shape}")

        windows = sliding_window_view(x.values, (window, window), axis=(1, 2))[:, ::stride, ::stride]
        out_h, out_w = windows.shape[1], windows.shape[2]
        flat = windows.reshape(channels, out_h, out_w, window * window)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        di, dj = np.divmod(arg, window)
        rows = np.arange(out_h)[None, :, None] * stride + di
        cols = np.arange(out_w)[None, None, :] * stride + dj
        chans = np.broadcast_to(np.arange(channels)[:, None, None], arg.shape)

        def backward(g: np.ndarray):
            gx = np.zeros_like(x.values)
            np.add.at(gx, (chans, rows, cols), g)
            return (gx,)

        return self._record("max_pool2d", (x,), out, backward, decision=arg).output

    # ------------------------------------------------------------ ROI e camadas fc

    def roi_max_pool(self, features: Tensor, roi: Region, spatial_scale: float, size: int,
                     frame: Optional[Tuple[float, float]] = None) -> Tensor:
        """Uma ROI -> [C,P,P]."""
        pooled = self.roi_max_pool_batch(features, [roi], spatial_scale, size, frame)
        return self.reshape(pooled, pooled.shape[1:])

    def roi_max_pool_batch(self, features: Tensor, rois: Sequence[Region], spatial_scale: float, size: int,
                           frame: Optional[Tuple[float, float]] = None) -> Tensor:
        """
        Max pooling adaptativo de K ROIs sobre o mesmo mapa [C,H,W] -> [K,C,P,P].
        O gradiente de cada faixa vai para a célula argmax e acumula entre ROIs sobrepostas.
        """
        if features.values.ndim != 3:
            raise ShapeError(f"roi_max_pool: mapa {features.shape} não é [C,H,W]")
        if not rois:
            raise ShapeError("roi_max_pool: lista de ROIs vazia")
        channels, height, width = features.shape
        fmap = features.values
        out = np.empty((len(rois), channels, size, size))
        idx_y = np.empty(out.shape, dtype=np.intp)
        idx_x = np.empty(out.shape, dtype=np.intp)

        for k, roi in enumerate(rois):
            y_bins, x_bins = roi_bins(roi, spatial_scale, height, width, size, frame)
            for i, (y0, y1) in enumerate(y_bins):
                for j, (x0, x1) in enumerate(x_bins):
                    patch = fmap[:, y0:y1, x0:x1].reshape(channels, -1)
                    arg = patch.argmax(axis=1)
                    out[k, :, i, j] = patch[np.arange(channels), arg]
                    idx_y[k, :, i, j] = y0 + arg // (x1 - x0)
                    idx_x[k, :, i, j] = x0 + arg % (x1 - x0)

        chans = np.broadcast_to(np.arange(channels)[None, :, None, None], out.shape)

        def backward(g: np.ndarray):
            gf = np.zeros_like(fmap)
            np.add.at(gf, (chans, idx_y, idx_x), g)
            return (gf,)

        return self._record("roi_max_pool", (features,), out, backward, rois=len(rois),
                            decision=np.stack([idx_y, idx_x])).output

    def linear(self, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        """w·x + b para x: [d] ou [N,d]; weight: [d_out,d]; bias: [d_out]."""
        if x.values.ndim not in (1, 2) or weight.values.ndim != 2 or x.shape[-1] != weight.shape[1]:
            raise ShapeError(f"linear: entrada {x.shape} incompatível com pesos {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} incompatível com pesos {weight.shape}")
        out = x.values @ weight.values.T + bias.values

        def backward(g: np.ndarray):
            gx = g @ weight.values if x.requires_grad else None
            if x.values.ndim == 1:
                gw = np.outer(g, x.values) if weight.requires_grad else None
                gb = g if bias.requires_grad else None
            else:
                gw = g.T @ x.values if weight.requires_grad else None
                gb = g.sum(axis=0) if bias.requires_grad else None
            return gx, gw, gb

        return self._record("linear", (x, weight, bias), out, backward).output

    # ----------------------------------------------------------- forma e seleção

    def reshape(self, x: Tensor, shape: Tuple[int, ...]) -> Tensor:
        original = x.shape
        try:
            out = x.values.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: {original} -> {shape}") from exc

        def backward(g: np.ndarray):
            return (g.reshape(original),)

        return self._record("reshape", (x,), out, backward).output

    def take_rows(self, x: Tensor, rows: Sequence[int]) -> Tensor:
        index = np.asarray(rows, dtype=np.intp)

        def backward(g: np.ndarray):
            gx = np.zeros_like(x.values)
            np.add.at(gx, index, g)
            return (gx,)

        return self._record("take_rows", (x,), x.values[index], backward).output

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add: formas {a.shape} e {b.shape} diferem")

        def backward(g: np.ndarray):
            return g, g

        return self._record("add", (a, b), a.values + b.values, backward).output

    def reduce_max_rows(self, scores: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        """
        Máximo por coluna de [K,A] (opcionalmente só entre as linhas permitidas
        por mask). Empate: menor índice de linha. O gradiente vai apenas para as
        entradas argmax.
        """
        if scores.values.ndim != 2:
            raise ShapeError(f"reduce_max_rows: entrada {scores.shape} não é [K,A]")
        rows, actions = scores.shape
        if rows == 0:
            raise ShapeError("reduce_max_rows: K = 0 (nenhuma candidata)")
        values = scores.values
        if mask is not None:
            if mask.shape != scores.shape:
                raise ShapeError(f"reduce_max_rows: máscara {mask.shape} para scores {scores.shape}")
            if not mask.any(axis=0).all():
                raise GraphError("reduce_max_rows: coluna sem nenhuma linha permitida")
            values = np.where(mask, values, -np.inf)
        argmax = values.argmax(axis=0)
        cols = np.arange(actions)

        def backward(g: np.ndarray):
            gx = np.zeros_like(scores.values)
            gx[argmax, cols] = g
            return (gx,)

        node = self._record("reduce_max_rows", (scores,), scores.values[argmax, cols], backward, argmax=argmax,
                            decision=argmax)
        return node.output, argmax

    def take_per_column(self, scores: Tensor, rows: Sequence[int]) -> Tensor:
        """Uma linha escolhida por coluna, sem max: out[a] = scores[rows[a], a]."""
        index = np.asarray(rows, dtype=np.intp)
        if scores.values.ndim != 2 or index.shape != (scores.shape[1],):
            raise ShapeError(f"take_per_column: scores {scores.shape} com {index.shape[0]} índices")
        cols = np.arange(scores.shape[1])

        def backward(g: np.ndarray):
            gx = np.zeros_like(scores.values)
            gx[index, cols] = g
            return (gx,)

        return self._record("take_per_column", (scores,), scores.values[index, cols], backward).output

    # ------------------------------------------------------------------ perdas

    def softmax_logloss(self, scores: Tensor, label: int) -> Tuple[Tensor, np.ndarray]:
        """-log softmax(scores)[label] com subtração do máximo. Retorna (perda, probabilidades)."""
        if scores.values.ndim != 1:
            raise ShapeError(f"softmax_logloss: scores {scores.shape} não é [A]")
        if not (0 <= label < scores.shape[0]):
            raise LabelError(f"rótulo {label} fora de [0, {scores.shape[0]})")
        if not np.all(np.isfinite(scores.values)):
            raise NonFiniteError(f"score não finito na softmax: {scores.values.tolist()}")
        shifted = scores.values - scores.values.max()
        log_norm = np.log(np.exp(shifted).sum())
        probs = np.exp(shifted - log_norm)
        loss = log_norm - shifted[label]
        onehot = np.zeros_like(probs)
        onehot[label] = 1.0

        def backward(g: np.ndarray):
            return (g * (probs - onehot),)

        node = self._record("softmax_logloss", (scores,), np.asarray(loss), backward, probabilities=probs)
        return node.output, probs

    def sigmoid_cross_entropy(self, scores: Tensor, labels: Sequence[int]) -> Tuple[Tensor, np.ndarray]:
        """Média das entropias cruzadas binárias independentes, forma estável."""
        y = np.asarray(labels, dtype=np.float64)
        if scores.values.ndim != 1 or y.shape != scores.shape:
            raise ShapeError(f"sigmoid_cross_entropy: scores {scores.shape} e rótulos {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise LabelError(f"rótulos não binários: {list(labels)}")
        x = scores.values
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"score não finito na sigmoide: {x.tolist()}")
        loss = np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x))))
        probs = 0.5 * (1.0 + np.tanh(0.5 * x))
        count = x.shape[0]

        def backward(g: np.ndarray):
            return (g * (probs - y) / count,)

        node = self._record("sigmoid_cross_entropy", (scores,), np.asarray(loss), backward, probabilities=probs)
        return node.output, probs

    def mean(self, terms: Sequence[Tensor]) -> Tensor:
        """Média de escalares (a perda do batch)."""
        if not terms:
            raise ShapeError("mean: lista vazia")
        if any(t.size != 1 for t in terms):
            raise ShapeError(f"mean: termos não escalares {[t.shape for t in terms]}")
        count = len(terms)
        total = math.fsum(t.item() for t in terms) / count

        def backward(g: np.ndarray):
            return tuple(np.full(t.shape, g / count) for t in terms)

        return self._record("mean", tuple(terms), np.asarray(total), backward).output

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> None:
        """
        Gradientes exatos de loss para todas as folhas com requires_grad.
        Os gradientes das folhas acumulam: dois backward seguidos dobram .grad.
        """
        if not self.nodes:
            raise GraphError("backward chamado antes de qualquer forward")
        if loss.size != 1:
            raise ShapeError(f"backward exige perda escalar, forma {loss.shape}")
        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced:
            raise GraphError("a perda não foi produzida por este grafo")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, tensor_grad in zip(node.inputs, node.backward(grad)):
                if tensor_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in produced:
                    pending[key] = pending[key] + tensor_grad if key in pending else tensor_grad
                else:
                    tensor.accumulate(tensor_grad)
