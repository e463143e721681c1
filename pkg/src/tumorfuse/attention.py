"""Patch embedding, multi-head self-attention and a small ViT classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbones import BackboneConfig, VGGMini
from .errors import ContractError, DimensionError
from .nn import LayerNorm, Linear, Module, _param
from .tensor import Tensor


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """Split C×H×W (or N×C×H×W) into raster-ordered flattened patches, T×(p²·C)."""
    batched = image.ndim == 4
    x = image if batched else T.reshape(image, (1,) + image.shape)
    n, c, h, w = x.shape
    p = patch_size
    if p < 1 or h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    x = T.reshape(x, (n, c, h // p, p, w // p, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    tokens = T.reshape(x, (n, (h // p) * (w // p), c * p * p))
    return tokens if batched else T.reshape(tokens, tokens.shape[1:])


def unpatchify(tokens: Tensor, patch_size: int, channels: int, height: int, width: int) -> Tensor:
    batched = tokens.ndim == 3
    x = tokens if batched else T.reshape(tokens, (1,) + tokens.shape)
    p = patch_size
    n = x.shape[0]
    x = T.reshape(x, (n, height // p, width // p, channels, p, p))
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))
    img = T.reshape(x, (n, channels, height, width))
    return img if batched else T.reshape(img, img.shape[1:])


def feature_tokens(features: Tensor) -> Tensor:
    """One token per spatial site: N×C×h×w -> N×(h·w)×C."""
    n, c, h, w = features.shape
    return T.transpose(T.reshape(features, (n, c, h * w)), (0, 2, 1))


@dataclass
class AttentionParams:
    heads: int
    d_model: int

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ContractError(f"d_model {self.d_model} not divisible by {self.heads} heads")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


class MultiHeadSelfAttention(Module):
    """softmax(QKᵀ/√d_k)·V per head, heads concatenated and projected by W_O."""

    def __init__(self, params: AttentionParams, rng: np.random.Generator):
        self.params = params
        d = params.d_model
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d, d, rng, bias=False)
        self.w_v = Linear(d, d, rng, bias=False)
        self.w_o = Linear(d, d, rng, bias=False)
        self.last_scores: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        x = T.reshape(x, (n, t, self.params.heads, self.params.d_k))
        return T.transpose(x, (0, 2, 1, 3))

    def forward(self, tokens: Tensor) -> Tensor:
        d = self.params.d_model
        if tokens.shape[-1] != d:
            raise DimensionError(f"tokens have width {tokens.shape[-1]}, attention expects {d}")
        batched = tokens.ndim == 3
        x = tokens if batched else T.reshape(tokens, (1,) + tokens.shape)
        n, t, _ = x.shape
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_v(x))
        scale = 1.0 / math.sqrt(self.params.d_k)
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * scale
        attn = T.softmax(scores, axis=-1)
        self.last_scores = attn.data
        heads = T.matmul(attn, v)
        merged = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (n, t, d))
        out = self.w_o(merged)
        return out if batched else T.reshape(out, (t, d))


def mhsa(tokens: Tensor, layer: MultiHeadSelfAttention) -> Tensor:
    return layer(tokens)


class EncoderBlock(Module):
    """Pre-norm transformer block: x + MHSA(LN x), then x + FFN(LN x)."""

    def __init__(self, params: AttentionParams, rng: np.random.Generator, mlp_ratio: int = 2):
        d = params.d_model
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(params, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, d * mlp_ratio, rng)
        self.fc2 = Linear(d * mlp_ratio, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(T.gelu(self.fc1(self.norm2(x))))


@dataclass
class ViTConfig:
    d_model: int = 32
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 2
    num_classes: int = 2
    token_source: str = "features"  # or "patches"
    patch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.token_source not in ("features", "patches"):
            raise ContractError(f"token_source must be 'features' or 'patches', got {self.token_source!r}")
        AttentionParams(self.heads, self.d_model)


class ViTHead(Module):
    """Token projection, class token, learned positions, encoder blocks, dense head."""

    def __init__(self, token_dim: int, num_tokens: int, cfg: ViTConfig):
        rng = np.random.default_rng(cfg.seed + 1)
        self.cfg = cfg
        self.embed = Linear(token_dim, cfg.d_model, rng)
        self.cls_token = _param((rng.standard_normal((1, 1, cfg.d_model)) * 0.02).astype(np.float32))
        self.positions = _param((rng.standard_normal((1, num_tokens + 1, cfg.d_model)) * 0.02).astype(np.float32))
        params = AttentionParams(cfg.heads, cfg.d_model)
        self.blocks = [EncoderBlock(params, rng, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.num_classes, rng)

    def forward(self, tokens: Tensor) -> Tensor:
        n = tokens.shape[0]
        x = self.embed(tokens)
        cls = T.mul(self.cls_token, Tensor(np.ones((n, 1, 1), dtype=x.dtype)))
        x = T.concat([cls, x], axis=1) + self.positions
        for block in self.blocks:
            x = block(x)
        return T.softmax(self.head(self.norm(x)[:, 0]), axis=-1)


class ViTClassifier(Module):
    """Classifier 1: VGG-mini features (or raw patches) -> ViT -> class probabilities."""

    def __init__(self, backbone_cfg: BackboneConfig, cfg: ViTConfig):
        self.cfg = cfg
        self.backbone_cfg = backbone_cfg
        h, w = backbone_cfg.input_size
        if cfg.token_source == "features":
            self.backbone = VGGMini(backbone_cfg)
            c, fh, fw = backbone_cfg.feature_shape()
            token_dim, num_tokens = c, fh * fw
        else:
            self.backbone = None
            if h % cfg.patch_size or w % cfg.patch_size:
                raise DimensionError(f"image {h}x{w} not divisible by patch size {cfg.patch_size}")
            token_dim = backbone_cfg.in_channels * cfg.patch_size ** 2
            num_tokens = (h // cfg.patch_size) * (w // cfg.patch_size)
        self.vit = ViTHead(token_dim, num_tokens, cfg)

    def tokens(self, images: Tensor) -> Tensor:
        if self.backbone is not None:
            return feature_tokens(self.backbone(images))
        return patchify(images, self.cfg.patch_size)

    def forward(self, images: Tensor) -> Tensor:
        batched = images.ndim == 4
        x = images if batched else T.reshape(images, (1,) + images.shape)
        probs = self.vit(self.tokens(x))
        return probs if batched else T.reshape(probs, probs.shape[1:])


def vit_classify(image: Tensor, model: ViTClassifier) -> Tensor:
    return model(image)
