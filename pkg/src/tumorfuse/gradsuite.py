"""Numerical verification of every differentiable building block.

Each check builds a small float64 instance from a seeded generator, reduces
its output to a scalar with a fixed random projection, and compares
backprop against central differences over the inputs and every parameter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import AttentionParams, EncoderBlock, MultiHeadSelfAttention, ViTClassifier, ViTConfig
from .backbones import BackboneConfig, ResidualBlock, ResNetMini, VGGMini
from .capsnet import CapsNetClassifier, CapsNetConfig, CapsuleLayer, dynamic_routing, margin_loss, squash
from .nn import Conv2d, LayerNorm, Linear, Module, cross_entropy, one_hot
from .tensor import Tensor, grad_check_params
from .training import CNNClassifier

F64 = np.float64
TOLERANCE = 1e-3
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def _leaf(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=F64)


def _projected(out_fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    """Scalar loss Σ out·R for a fixed random R (drawn on first call)."""
    holder: dict = {}

    def loss():
        out = out_fn()
        if "r" not in holder:
            holder["r"] = Tensor(rng.standard_normal(out.shape), dtype=F64)
        return T.tsum(out * holder["r"])

    return loss


def _module_check(module: Module, inputs: list[Tensor], call: Callable[[], Tensor], rng) -> float:
    module.astype(F64)
    for p in module.parameters():
        p.requires_grad = True
    return grad_check_params(_projected(call, rng), inputs + module.parameters(), EPS)


# -- individual checks: each takes a seed and returns the max relative error -----
def check_linear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n_in, n_out = rng.integers(2, 6, size=2)
    layer = Linear(int(n_in), int(n_out), rng)
    x = _leaf(rng, (3, int(n_in)))
    return _module_check(layer, [x], lambda: layer(x), rng)


def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    stride, padding = 1 + seed % 2, (seed // 2) % 2
    kernel = 1 + 2 * (seed % 2)
    layer = Conv2d(2, 3, kernel, rng, stride=stride, padding=padding)
    x = _leaf(rng, (2, 2, 5, 5))
    return _module_check(layer, [x], lambda: layer(x), rng)


def check_max_pool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (2, 2, 4, 6))
    return grad_check_params(_projected(lambda: T.max_pool2d(x, 2), rng), [x], EPS)


def check_layer_norm(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = LayerNorm(5)
    x = _leaf(rng, (3, 5))
    layer.gamma.data = rng.standard_normal(5)
    layer.beta.data = rng.standard_normal(5)
    return _module_check(layer, [x], lambda: layer(x), rng)


def check_activations(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (4, 5))
    worst = 0.0
    for fn in (T.relu, T.gelu, T.tanh, lambda a: T.softmax(a, axis=-1), T.exp):
        worst = max(worst, grad_check_params(_projected(lambda: fn(x), rng), [x], EPS))
    return worst


def check_mhsa(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = MultiHeadSelfAttention(AttentionParams(2, 4), rng)
    x = _leaf(rng, (2, 3, 4))
    return _module_check(layer, [x], lambda: layer(x), rng)


def check_encoder_block(seed: int) -> float:
    rng = np.random.default_rng(seed)
    block = EncoderBlock(AttentionParams(2, 4), rng)
    x = _leaf(rng, (2, 3, 4))
    return _module_check(block, [x], lambda: block(x), rng)


def check_squash(seed: int) -> float:
    rng = np.random.default_rng(seed)
    s = _leaf(rng, (4, 3))
    return grad_check_params(_projected(lambda: squash(s), rng), [s], EPS)


def check_routing(seed: int) -> float:
    """Gradient through all three unrolled routing iterations."""
    rng = np.random.default_rng(seed)
    u_hat = _leaf(rng, (2, 4, 2, 3))
    return grad_check_params(_projected(lambda: dynamic_routing(u_hat, 3)[0], rng), [u_hat], EPS)


def check_capsule_layer(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = CapsuleLayer(3, 4, 2, 3, 3, rng)
    layer.weight.data = rng.standard_normal(layer.weight.shape) * 0.5
    u = _leaf(rng, (2, 3, 4))
    return _module_check(layer, [u], lambda: layer(u)[0], rng)


def check_losses(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = _leaf(rng, (4, 2))
    target = one_hot(rng.integers(0, 2, size=4), 2, dtype=F64)
    weights = rng.uniform(0.5, 2.0, size=4)
    ce = grad_check_params(lambda: cross_entropy(T.softmax(logits, axis=-1), target, weights), [logits], EPS)
    v = _leaf(rng, (4, 2, 3))
    # keep lengths away from the 0.1 / 0.9 margin kinks
    v.data *= 0.25
    ml = grad_check_params(lambda: margin_loss(v, target, weights), [v], EPS)
    return max(ce, ml)


def check_residual_block(seed: int) -> float:
    rng = np.random.default_rng(seed)
    block = ResidualBlock(2, 2 + seed % 2, rng)
    x = _leaf(rng, (1, 2, 4, 4))
    return _module_check(block, [x], lambda: block(x), rng)


def _tiny_backbone(kind: str, seed: int) -> BackboneConfig:
    return BackboneConfig(kind=kind, stage_channels=(2, 3), input_size=(8, 8), seed=seed)


def check_vgg_mini(seed: int) -> float:
    rng = np.random.default_rng(seed)
    net = VGGMini(_tiny_backbone("vgg_mini", seed))
    x = _leaf(rng, (1, 1, 8, 8))
    return _module_check(net, [x], lambda: net(x), rng)


def check_resnet_mini(seed: int) -> float:
    rng = np.random.default_rng(seed)
    net = ResNetMini(_tiny_backbone("resnet_mini", seed))
    x = _leaf(rng, (1, 1, 8, 8))
    return _module_check(net, [x], lambda: net(x), rng)


def check_vit_branch(seed: int) -> float:
    """Full ViT branch (backbone, tokens, encoder, head, softmax) under cross-entropy."""
    rng = np.random.default_rng(seed)
    model = ViTClassifier(_tiny_backbone("vgg_mini", seed), ViTConfig(d_model=4, heads=2, depth=1, seed=seed))
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), dtype=F64)
    target = one_hot([0, 1], 2, dtype=F64)
    model.astype(F64)
    return grad_check_params(lambda: cross_entropy(model(x), target), model.parameters(), EPS)


def check_capsnet_branch(seed: int) -> float:
    """Full CapsNet branch, routing unrolled, under the margin loss."""
    rng = np.random.default_rng(seed)
    cfg = CapsNetConfig(d_model=4, heads=2, primary_types=2, primary_dim=4, class_dim=4, seed=seed)
    model = CapsNetClassifier(_tiny_backbone("resnet_mini", seed), cfg)
    model.capsules.weight.data = rng.standard_normal(model.capsules.weight.shape) * 0.5
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), dtype=F64)
    target = one_hot([0, 1], 2, dtype=F64)
    model.astype(F64)
    return grad_check_params(lambda: margin_loss(model.class_capsules(x), target), model.parameters(), EPS)


def check_cnn_branch(seed: int) -> float:
    rng = np.random.default_rng(seed)
    model = CNNClassifier(_tiny_backbone("vgg_mini", seed), hidden=4)
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), dtype=F64)
    target = one_hot([0, 1], 2, dtype=F64)
    model.astype(F64)
    return grad_check_params(lambda: cross_entropy(model(x), target), model.parameters(), EPS)


CHECKS: dict[str, Callable[[int], float]] = {
    "linear": check_linear,
    "conv2d": check_conv2d,
    "max_pool2d": check_max_pool,
    "layer_norm": check_layer_norm,
    "activations": check_activations,
    "mhsa": check_mhsa,
    "encoder_block": check_encoder_block,
    "squash": check_squash,
    "dynamic_routing": check_routing,
    "capsule_layer": check_capsule_layer,
    "losses": check_losses,
    "residual_block": check_residual_block,
    "vgg_mini": check_vgg_mini,
    "resnet_mini": check_resnet_mini,
    "vit_branch": check_vit_branch,
    "capsnet_branch": check_capsnet_branch,
    "cnn_branch": check_cnn_branch,
}


def run_gradient_suite(instances: int = 10, seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        worst = max(CHECKS[name](seed * 1000 + i) for i in range(instances))
        results.append(CheckResult(name, instances, worst, time.perf_counter() - start))
    return results
