"""Parameter containers shared by the attention blocks and the network."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor, conv3d


class Module:
    """Registers parameters and sub-modules in assignment order.

    Assignment order is the declaration order used by checkpoints, so
    constructors must create parameters deterministically.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.modules(prefix + name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv3d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator):
        super().__init__()
        fan_in = in_ch * k**3
        # He-normal keeps ReLU activations from shrinking layer to layer
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, k, k, k)))
        self.bias = param(np.zeros(out_ch))
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, stride=1, padding=self.padding)
