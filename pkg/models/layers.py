"""
Minimal reverse-mode layer stack.

Each layer records what its backward pass needs on a tape during forward; backward walks the
tape in reverse and accumulates Jᵀ·upstream for the input and for every named parameter.
Arrays are batched, shape (batch, features), float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class Layer:
    param_names: tuple[str, ...] = ()

    def forward(self, x: np.ndarray, params: dict[str, np.ndarray]):
        raise NotImplementedError

    def backward(self, cache, grad_y: np.ndarray, params: dict[str, np.ndarray]):
        raise NotImplementedError


@dataclass(frozen=True)
class Dense(Layer):
    weight: str
    bias: str

    @property
    def param_names(self) -> tuple[str, ...]:
        return (self.weight, self.bias)

    def forward(self, x, params):
        return x @ params[self.weight].T + params[self.bias], x

    def backward(self, cache, grad_y, params):
        x = cache
        grads = {self.weight: grad_y.T @ x, self.bias: grad_y.sum(axis=0)}
        return grad_y @ params[self.weight], grads


class Tanh(Layer):
    def forward(self, x, params):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, grad_y, params):
        return grad_y * (1.0 - cache * cache), {}


class Sigmoid(Layer):
    def forward(self, x, params):
        y = expit(x)
        return y, y

    def backward(self, cache, grad_y, params):
        return grad_y * cache * (1.0 - cache), {}


class Identity(Layer):
    def forward(self, x, params):
        return x, None

    def backward(self, cache, grad_y, params):
        return grad_y, {}


ACTIVATIONS: dict[str, type[Layer]] = {"tanh": Tanh, "sigmoid": Sigmoid, "identity": Identity}


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    @property
    def param_names(self) -> list[str]:
        return [n for layer in self.layers for n in layer.param_names]

    def forward(self, x: np.ndarray, params: dict[str, np.ndarray]):
        tape = []
        for layer in self.layers:
            x, cache = layer.forward(x, params)
            tape.append(cache)
        return x, tape

    def backward(self, tape, grad_y: np.ndarray, params: dict[str, np.ndarray]):
        grads: dict[str, np.ndarray] = {}
        for layer, cache in zip(reversed(self.layers), reversed(tape), strict=True):
            grad_y, layer_grads = layer.backward(cache, grad_y, params)
            for k, g in layer_grads.items():
                grads[k] = grads[k] + g if k in grads else g
        return grad_y, grads


def dense_stack(prefix: str, sizes: list[int], hidden: str, output: str) -> Sequential:
    """Dense layers sizes[0] -> ... -> sizes[-1], `hidden` between, `output` at the end."""
    layers: list[Layer] = []
    for i in range(len(sizes) - 1):
        layers.append(Dense(f"{prefix}W{i + 1}", f"{prefix}b{i + 1}"))
        act = output if i == len(sizes) - 2 else hidden
        layers.append(ACTIVATIONS[act]())
    return Sequential(layers)


def init_dense_params(prefix: str, sizes: list[int], rng) -> dict[str, np.ndarray]:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    params: dict[str, np.ndarray] = {}
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}W{i + 1}"] = rng.uniform(-bound, bound, (fan_out, fan_in))
        params[f"{prefix}b{i + 1}"] = rng.uniform(-bound, bound, (fan_out,))
    return params
