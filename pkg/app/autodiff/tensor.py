# app/autodiff/tensor.py

from typing import Optional, Tuple

import numpy as np

from app.utils.error_handlers import ShapeError


class Tensor:
    """
    Array float64 com gradiente opcional.
    Tensores folha (parâmetros, entradas) acumulam o gradiente em .grad a cada
    backward; tensores intermediários são produzidos pelo Graph.
    """

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ShapeError(
                f"gradiente com forma {grad.shape} para o tensor '{self.name}' de forma {self.values.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() exige tensor escalar, forma {self.values.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.values.shape}, requires_grad={self.requires_grad})"
