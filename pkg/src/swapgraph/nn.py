"""Small layer library on top of the autodiff core."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, conv2d, matmul


class Module:
    """Base class; collects parameter tensors from attributes recursively."""

    def parameters(self) -> list[Tensor]:
        params = []
        for value in vars(self).values():
            if isinstance(value, Tensor) and value.requires_grad:
                params.append(value)
            elif isinstance(value, Module):
                params.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        params.extend(item.parameters())
        return params

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                named.append((key, value))
            elif isinstance(value, Module):
                named.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        named.extend(item.named_parameters(f"{key}.{i}."))
        return named


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    """3x3 convolution, zero same-padding, stride 1, with per-channel bias."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (out_ch, in_ch, 3, 3), in_ch * 9)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight) + self.bias.reshape(1, -1, 1, 1)


class Linear(Module):
    """Affine map of (n, in_features) rows."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias
