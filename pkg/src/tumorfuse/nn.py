"""Trainable layers, losses and optimizers built on :mod:`tumorfuse.tensor`."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NonFiniteGradientError
from .tensor import Tensor

PROB_CLAMP = 1e-12


@dataclass
class InitSpec:
    scheme: str = "he"
    seed: int = 0


def he_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Minimal parameter container; submodules and parameters are found by attribute order."""

    training = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{prefix}{name}.{i}", item

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if tuple(state[name].shape) != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def astype(self, dtype) -> Module:
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=data.dtype)


class Linear(Module):
    """Dense layer y = W·x + b with W of shape out×in."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = _param(he_init((n_out, n_in), n_in, rng))
        self.bias = _param(np.zeros(n_out, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.weight = _param(he_init((c_out, c_in, kernel, kernel), c_in * kernel * kernel, rng))
        self.bias = _param(np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(dim, dtype=np.float32))
        self.beta = _param(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """W·x + b for x of shape (..., n) and W of shape m×n."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"dense: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        out = T.reshape(T.matmul(T.reshape(x, (1, -1)), T.transpose(weight)), (weight.shape[0],))
    else:
        out = T.matmul(x, T.transpose(weight))
    return out + bias if bias is not None else out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    return T.conv2d(x, weight, bias, stride, padding)


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    return T.max_pool2d(x, window, stride)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = T.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = T.mean(centered * centered, axis=-1, keepdims=True)
    return centered / T.sqrt(var + eps) * gamma + beta


def _check_one_hot(one_hot: np.ndarray, expected_shape) -> None:
    if one_hot.shape != tuple(expected_shape):
        raise ContractError(f"one_hot shape {one_hot.shape} != {tuple(expected_shape)}")
    valid = np.all((one_hot == 0) | (one_hot == 1)) and np.all(one_hot.sum(axis=-1) == 1)
    if not valid:
        raise ContractError("one_hot must hold exactly one 1 per row and zeros elsewhere")


def one_hot(labels, num_classes: int = 2, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(out, labels[..., None], 1, axis=-1)
    return out


def cross_entropy(probs: Tensor, target, sample_weight=None) -> Tensor:
    """-Σ y·ln(p) with p clamped at 1e-12; batched inputs give the (weighted) mean."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    _check_one_hot(y, probs.shape)
    logp = T.log(T.clamp_min(probs, PROB_CLAMP))
    per_sample = -T.tsum(logp * Tensor(y.astype(probs.dtype)), axis=-1)
    return _reduce(per_sample, sample_weight)


def _reduce(per_sample: Tensor, sample_weight) -> Tensor:
    if per_sample.ndim == 0:
        return per_sample
    if sample_weight is None:
        return T.mean(per_sample)
    w = np.asarray(sample_weight, dtype=per_sample.dtype)
    return T.mean(per_sample * Tensor(w))


# -- optimizers ------------------------------------------------------------------
@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0:
            raise ContractError("learning rate must be nonnegative")


def optimizer_step(state: OptimizerState, params: list[Tensor], grads: list[np.ndarray]) -> list[Tensor]:
    """Apply one update in place and return ``params``.

    Raises :class:`NonFiniteGradientError` (leaving everything untouched) if
    any gradient has a NaN or infinity.
    """
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} params but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient {i} shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"step rejected: gradient {i} (shape {p.shape}) is not finite")
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            if g is not None:
                p.data = (p.data - lr * g).astype(p.dtype)
        return params
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m, v = state.moments.get(i, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.moments[i] = (m, v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return params


class Optimizer:
    """Binds an :class:`OptimizerState` to a fixed parameter list."""

    def __init__(self, params: list[Tensor], kind: str = "adam", lr: float = 1e-3, **kwargs):
        self.params = list(params)
        self.state = OptimizerState(kind=kind, learning_rate=lr, **kwargs)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.state, self.params, [p.grad for p in self.params])
