"""Capsules: squash, routing-by-agreement, margin loss and the capsule classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, MultiHeadSelfAttention, feature_tokens
from .backbones import BackboneConfig, ResNetMini
from .errors import ContractError
from .nn import Conv2d, LayerNorm, Module, _check_one_hot, _param, _reduce
from .tensor import Tensor

SQUASH_EPS = 1e-8
LENGTH_EPS = 1e-9
CAPSULE_INIT_STD = 0.01

M_PLUS = 0.9
M_MINUS = 0.1
LAMBDA = 0.5


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """(‖s‖²/(1+‖s‖²))·s/‖s‖, with ‖s‖ + 1e-8 in the denominator so squash(0) = 0."""
    sq = T.tsum(s * s, axis=axis, keepdims=True)
    norm = T.sqrt(sq)
    return s * (sq / ((1.0 + sq) * (norm + SQUASH_EPS)))


def capsule_lengths(v: Tensor) -> Tensor:
    return T.sqrt(T.tsum(v * v, axis=-1))


def dynamic_routing(u_hat: Tensor, iterations: int = 3, trace: list | None = None) -> tuple[Tensor, Tensor]:
    """Route predictions ``u_hat`` (n_in×n_out×d_out, optionally batched) to output capsules.

    Returns (v, c): output capsules n_out×d_out and the final coupling
    coefficients n_in×n_out. If ``trace`` is a list, the coupling matrix of
    every iteration is appended to it.
    """
    if iterations < 1:
        raise ContractError(f"routing needs at least one iteration, got {iterations}")
    batched = u_hat.ndim == 4
    u = u_hat if batched else T.reshape(u_hat, (1,) + u_hat.shape)
    logits = Tensor(np.zeros(u.shape[:3], dtype=u.dtype))
    for it in range(iterations):
        c = T.softmax(logits, axis=2)
        if trace is not None:
            trace.append(c.data if batched else c.data[0])
        s = T.tsum(T.reshape(c, c.shape + (1,)) * u, axis=1)
        v = squash(s)
        if it < iterations - 1:
            agreement = T.tsum(u * T.reshape(v, (v.shape[0], 1) + v.shape[1:]), axis=-1)
            logits = logits + agreement
    if batched:
        return v, c
    return T.reshape(v, v.shape[1:]), T.reshape(c, c.shape[1:])


def lengths_to_probs(lengths: Tensor) -> Tensor:
    """Normalize capsule lengths into a distribution over classes."""
    shifted = lengths + LENGTH_EPS
    return shifted / T.tsum(shifted, axis=-1, keepdims=True)


def margin_loss(class_capsules: Tensor, target, sample_weight=None) -> Tensor:
    """Σ_k y_k·max(0, 0.9−‖v_k‖)² + 0.5·(1−y_k)·max(0, ‖v_k‖−0.1)²."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    lengths = capsule_lengths(class_capsules)
    _check_one_hot(y, lengths.shape)
    y = Tensor(y.astype(lengths.dtype))
    present = T.clamp_min(M_PLUS - lengths, 0.0)
    absent = T.clamp_min(lengths - M_MINUS, 0.0)
    per_class = y * present * present + LAMBDA * (1.0 - y) * absent * absent
    return _reduce(T.tsum(per_class, axis=-1), sample_weight)


@dataclass
class CapsNetConfig:
    d_model: int = 32
    heads: int = 4
    primary_types: int = 4
    primary_dim: int = 8
    class_dim: int = 16
    routing_iterations: int = 3
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.routing_iterations < 1:
            raise ContractError("routing_iterations must be >= 1")
        AttentionParams(self.heads, self.d_model)


class CapsuleLayer(Module):
    """Fully connected capsule layer: one d_out×d_in matrix per (input, output) pair."""

    def __init__(self, n_in: int, d_in: int, n_out: int, d_out: int, iterations: int,
                 rng: np.random.Generator):
        # small init keeps the routed sums short; with unit-scale W every
        # class capsule starts saturated near length 1 and training stalls
        w = rng.standard_normal((n_in, n_out, d_out, d_in)) * CAPSULE_INIT_STD
        self.weight = _param(w.astype(np.float32))
        self.iterations = iterations

    def predictions(self, u: Tensor) -> Tensor:
        """û_{j|i} = W_ij·u_i for u of shape N×n_in×d_in -> N×n_in×n_out×d_out."""
        n, n_in, d_in = u.shape
        col = T.reshape(u, (n, n_in, 1, d_in, 1))
        u_hat = T.matmul(self.weight, col)
        return T.reshape(u_hat, u_hat.shape[:-1])

    def forward(self, u: Tensor) -> tuple[Tensor, Tensor]:
        return dynamic_routing(self.predictions(u), self.iterations)


class CapsNetClassifier(Module):
    """Classifier 2: ResNet-mini features -> MHSA over sites -> primary caps -> class caps."""

    def __init__(self, backbone_cfg: BackboneConfig, cfg: CapsNetConfig):
        self.cfg = cfg
        self.backbone_cfg = backbone_cfg
        rng = np.random.default_rng(cfg.seed + 2)
        self.backbone = ResNetMini(backbone_cfg)
        c, h, w = backbone_cfg.feature_shape()
        self.embed = Conv2d(c, cfg.d_model, 1, rng)
        self.positions = _param((rng.standard_normal((1, h * w, cfg.d_model)) * 0.02).astype(np.float32))
        self.norm = LayerNorm(cfg.d_model)
        self.attn = MultiHeadSelfAttention(AttentionParams(cfg.heads, cfg.d_model), rng)
        self.primary = Conv2d(cfg.d_model, cfg.primary_types * cfg.primary_dim, 3, rng, stride=2, padding=1)
        ph, pw = (h + 1) // 2, (w + 1) // 2
        self.n_primary = cfg.primary_types * ph * pw
        self.capsules = CapsuleLayer(self.n_primary, cfg.primary_dim, cfg.num_classes, cfg.class_dim,
                                     cfg.routing_iterations, rng)
        self.last_coupling: np.ndarray | None = None

    def class_capsules(self, images: Tensor) -> Tensor:
        feats = self.embed(self.backbone(images))
        n, d, h, w = feats.shape
        tokens = feature_tokens(feats) + self.positions
        tokens = tokens + self.attn(self.norm(tokens))
        fmap = T.reshape(T.transpose(tokens, (0, 2, 1)), (n, d, h, w))
        prim = self.primary(fmap)
        _, _, ph, pw = prim.shape
        prim = T.reshape(prim, (n, self.cfg.primary_types, self.cfg.primary_dim, ph, pw))
        prim = T.reshape(T.transpose(prim, (0, 1, 3, 4, 2)), (n, self.n_primary, self.cfg.primary_dim))
        v, c = self.capsules(squash(prim))
        self.last_coupling = c.data
        return v

    def forward(self, images: Tensor) -> Tensor:
        batched = images.ndim == 4
        x = images if batched else T.reshape(images, (1,) + images.shape)
        probs = lengths_to_probs(capsule_lengths(self.class_capsules(x)))
        return probs if batched else T.reshape(probs, probs.shape[1:])


def capsnet_classify(features_or_image: Tensor, model: CapsNetClassifier) -> Tensor:
    return model(features_or_image)
