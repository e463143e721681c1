"""Miniature VGG-style and residual feature extractors, trained from scratch."""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class BackboneConfig:
    kind: str = "vgg_mini"
    stage_channels: tuple[int, ...] = (8, 16, 32)
    blocks_per_stage: int = 1
    input_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    strides: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("vgg_mini", "resnet_mini"):
            raise ContractError(f"unknown backbone kind {self.kind!r}")
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.input_size = tuple(int(s) for s in self.input_size)
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise ContractError("stage_channels must be nonempty positive ints")
        if self.blocks_per_stage < 1:
            raise ContractError("blocks_per_stage must be >= 1")
        if self.strides is None:
            self.strides = (2,) * len(self.stage_channels)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.strides) != len(self.stage_channels):
            raise ContractError("need one pooling stride per stage")

    def feature_shape(self, input_size: tuple[int, int] | None = None) -> tuple[int, int, int]:
        """(C, h, w) of the features for an input of the given spatial size."""
        h, w = input_size or self.input_size
        total = prod(self.strides)
        if h < total or w < total:
            raise DimensionError(f"input {h}x{w} smaller than total downsampling {total}")
        for s in self.strides:
            h, w = h // s, w // s
        return self.stage_channels[-1], h, w


class VGGMini(Module):
    """Stages of (conv3×3 + ReLU) × blocks followed by max pooling."""

    def __init__(self, cfg: BackboneConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        convs = []
        c_in = cfg.in_channels
        for c_out in cfg.stage_channels:
            for _ in range(cfg.blocks_per_stage):
                convs.append(Conv2d(c_in, c_out, 3, rng, padding=1))
                c_in = c_out
        self.convs = convs

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.cfg)
        k = 0
        for stride in self.cfg.strides:
            for _ in range(self.cfg.blocks_per_stage):
                x = T.relu(self.convs[k](x))
                k += 1
            if stride > 1:
                x = T.max_pool2d(x, stride)
        return x


class ResidualBlock(Module):
    """x ↦ P(x) + conv(relu(conv(x))), P a 1×1 projection only when channels change."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, padding=1)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1)
        self.proj = Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def residual(self, x: Tensor) -> Tensor:
        return self.conv2(T.relu(self.conv1(x)))

    def forward(self, x: Tensor) -> Tensor:
        skip = self.proj(x) if self.proj is not None else x
        return skip + self.residual(x)


class ResNetMini(Module):
    """Residual stages with max-pool downsampling between them; ReLU follows each stage."""

    def __init__(self, cfg: BackboneConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        blocks = []
        c_in = cfg.in_channels
        for c_out in cfg.stage_channels:
            for _ in range(cfg.blocks_per_stage):
                blocks.append(ResidualBlock(c_in, c_out, rng))
                c_in = c_out
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.cfg)
        k = 0
        for stride in self.cfg.strides:
            for _ in range(self.cfg.blocks_per_stage):
                x = self.blocks[k](x)
                k += 1
            x = T.relu(x)
            if stride > 1:
                x = T.max_pool2d(x, stride)
        return x


def _check_input(x: Tensor, cfg: BackboneConfig) -> None:
    if x.ndim not in (3, 4):
        raise DimensionError(f"expected C×H×W or N×C×H×W image, got {x.shape}")
    cfg.feature_shape(x.shape[-2:])


def build_backbone(cfg: BackboneConfig) -> Module:
    return VGGMini(cfg) if cfg.kind == "vgg_mini" else ResNetMini(cfg)


def vgg_features(image: Tensor, cfg: BackboneConfig, backbone: VGGMini | None = None) -> Tensor:
    if cfg.kind != "vgg_mini":
        raise ContractError(f"vgg_features needs kind vgg_mini, got {cfg.kind!r}")
    return (backbone or VGGMini(cfg))(image)


def resnet_features(image: Tensor, cfg: BackboneConfig, backbone: ResNetMini | None = None) -> Tensor:
    if cfg.kind != "resnet_mini":
        raise ContractError(f"resnet_features needs kind resnet_mini, got {cfg.kind!r}")
    return (backbone or ResNetMini(cfg))(image)
